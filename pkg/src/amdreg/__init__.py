"""Symmetric rigid and affine image registration with alpha-cut average minimal distances."""
from .image import FuzzyImage, AlphaLevels, normalize_percentile, quantize_membership
from .dt import euclidean_dt, build_alpha_dt, build_alpha_dt_bidirectional
from .transforms import AffineTransform, RigidTransform, TransformClass, sample_random_transform
from .distance import Operand, symmetric_amd, asymmetric_amd
from .optimizer import OptimizerConfig, minimize
from .registration import RegistrationConfig, RegistrationError, register
from .evaluation import BlobPhantom, run_synthetic_experiment

__version__ = "0.1.0"
