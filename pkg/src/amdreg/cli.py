"""Command-line entry point: ``amdreg register | synth | eval``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

from . import io as fio
from .evaluation import (BlobPhantom, average_error, average_minimal_error, ame_outer,
                         inverse_consistency_error, jaccard, run_synthetic_experiment)
from .registration import MEASURES, RegistrationConfig, RegistrationError, register
from .transforms import read_transform, write_transform

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_OVERLAP = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for non-overlap here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args) -> RegistrationConfig:
    cfg = RegistrationConfig()
    if getattr(args, "config", None):
        cfg = fio.read_config(args.config, cfg)
    updates = {}
    for name in ("measure", "model", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            updates[name] = v
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _set_threads(n: int) -> None:
    if n > 0:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def cmd_register(args) -> int:
    cfg = _config(args)
    ref = fio.read_volume(args.ref)
    flo = fio.read_volume(args.flo)
    opt = {
        "mask_a": fio.read_mask(args.flo_mask) if args.flo_mask else None,
        "mask_b": fio.read_mask(args.ref_mask) if args.ref_mask else None,
        "weights_a": fio.read_volume(args.flo_weights).values if args.flo_weights else None,
        "weights_b": fio.read_volume(args.ref_weights).values if args.ref_weights else None,
    }
    T0 = read_transform(args.init_transform) if args.init_transform else None
    try:
        res = register(flo, ref, T0=T0, cfg=cfg, **opt)
    except RegistrationError as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_NO_OVERLAP
    if args.out_transform:
        write_transform(args.out_transform, res.transform)
    if args.out_trace:
        with open(args.out_trace, "w", newline="") as fh:
            fh.write("level,iteration,distance,grad_norm,step\n")
            for lvl, tr in enumerate(res.traces):
                for i, row in enumerate(zip(tr.distance, tr.grad_norm, tr.step)):
                    fh.write(f"{lvl},{i}," + ",".join(repr(v) for v in row) + "\n")
    t = res.timings
    print(f"final distance: {res.distance:.10g}")
    print(f"iterations: {res.iterations}")
    print(f"preprocessing seconds: {t['preprocessing']:.4f}")
    print(f"mean seconds per iteration: {t['per_iteration']:.6f}")
    print(f"total seconds: {t['total']:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.image:
        base = fio.read_volume(args.image)
    else:
        base = BlobPhantom.random()
    report = run_synthetic_experiment(base, args.cls, args.trials, args.noise_sigma, cfg, args.seed)
    if args.out_report:
        report.write(args.out_report)
    s = report.summary()
    print(f"success rate: {s['success_rate']:.4f}")
    print(f"mean successful AE: {s['mean_success_ae']:.6g}")
    return EXIT_OK


def _emit(args, rows):
    if args.csv:
        print("metric,value")
        for k, v in rows:
            print(f"{k},{v!r}")
    else:
        for k, v in rows:
            print(f"{k}: {v:.10g}")


def cmd_eval(args) -> int:
    if args.what == "landmarks":
        T = read_transform(args.transform)
        ref = fio.read_landmarks(args.ref)
        flo = fio.read_landmarks(args.flo)
        if ref.points.shape[1] != T.ndim or flo.points.shape[1] != T.ndim:
            raise UsageError("landmark dimensionality does not match the transform")
        rows = [("ame", average_minimal_error(T, ref.points, flo.points))]
        if len(ref) == len(flo):
            rows.insert(0, ("ae", average_error(T, ref.points, flo.points)))
        if ref.parity is not None and flo.parity is not None:
            rows.append(("ame_outer", ame_outer(T, ref.subset("odd"), flo.subset("odd"),
                                                ref.subset("even"), flo.subset("even"))))
    elif args.what == "ice":
        t_ab = read_transform(args.forward)
        t_ba = read_transform(args.reverse)
        grid = fio.read_volume(args.reference).grid_points()
        rows = [("ice", inverse_consistency_error(t_ab, t_ba, grid))]
    else:
        a = fio.read_labels(args.a)
        b = fio.read_labels(args.b)
        rows = [("jaccard", jaccard(a == args.label, b == args.label))]
    _emit(args, rows)
    return EXIT_OK


def cmd_convert(args) -> int:
    fio.write_volume(args.output, fio.read_pgm(args.input), element_type=args.element_type)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amdreg", description="Symmetric fuzzy-set-distance image registration.")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = auto)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("register", help="register a floating volume to a reference volume")
    r.add_argument("--ref", required=True)
    r.add_argument("--flo", required=True)
    r.add_argument("--ref-mask")
    r.add_argument("--flo-mask")
    r.add_argument("--ref-weights")
    r.add_argument("--flo-weights")
    r.add_argument("--init-transform")
    r.add_argument("--config")
    r.add_argument("--out-transform")
    r.add_argument("--out-trace")
    r.add_argument("--measure", choices=MEASURES)
    r.add_argument("--model", choices=("rigid", "affine"))
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("synth", help="recover random transforms of an image")
    s.add_argument("--image", help="volume header; a built-in smooth phantom if omitted")
    s.add_argument("--class", dest="cls", choices=("small", "medium", "large"),
                   default="small")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--noise-sigma", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--measure", choices=MEASURES)
    s.add_argument("--out-report", help="prefix for the report files")
    s.set_defaults(func=cmd_synth, model=None)

    e = sub.add_parser("eval", help="evaluate a registration result")
    esub = e.add_subparsers(dest="what", required=True, parser_class=_Parser)
    lm = esub.add_parser("landmarks")
    lm.add_argument("--ref", required=True)
    lm.add_argument("--flo", required=True)
    lm.add_argument("--transform", required=True)
    lm.add_argument("--csv", action="store_true")
    ice = esub.add_parser("ice")
    ice.add_argument("--forward", required=True)
    ice.add_argument("--reverse", required=True)
    ice.add_argument("--reference", required=True, help="reference volume header")
    ice.add_argument("--csv", action="store_true")
    jc = esub.add_parser("jaccard")
    jc.add_argument("--a", required=True)
    jc.add_argument("--b", required=True)
    jc.add_argument("--label", type=int, default=1)
    jc.add_argument("--csv", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("convert", help="convert a PGM image to the volume format")
    c.add_argument("input")
    c.add_argument("output", help="header path; the raw file is written beside it")
    c.add_argument("--element-type", choices=sorted(fio.ELEMENT_TYPES), default="float32")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _set_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
