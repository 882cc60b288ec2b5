"""Command line driver: run, sweep, ablate, render, gen, eval."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import report
from .cube import SyntheticSpec, generate_synthetic, load_labels, save_cube, save_labels
from .metrics import evaluate
from .pipeline import (PAPER_LAMBDAS, PAPER_MS, ExperimentConfig, run_ablation_suite,
                       run_experiment, run_sweep)

# command line flag (underscored) -> ExperimentConfig field
FLAG_FIELDS = {
    "input": "input", "labels": "labels", "synthetic": "synthetic", "pca_dims": "pca_dims",
    "superpixels": "n_superpixels", "compactness": "compactness", "tau": "tau",
    "k_neighbors": "k_neighbors", "m_pixels": "M", "lambda": "lam", "clusters": "K",
    "epochs": "epochs", "lr": "lr", "seed": "seed", "ablation": "ablation", "out": "output_dir",
}
ABLATION_NAMES = {"full": "full", "no-lc": "no_LC", "no-lplc": "no_LPLC",
                  "no_lc": "no_LC", "no_lplc": "no_LPLC"}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _convert(field_name: str, text: str):
    kind = _FIELD_TYPES[field_name]
    if field_name == "ablation":
        key = text.strip().lower()
        if key not in ABLATION_NAMES:
            raise ValueError(f"unknown ablation {text!r}")
        return ABLATION_NAMES[key]
    if field_name == "hidden_dims":
        return tuple(int(v) for v in text.replace(",", " ").split())
    if "int" in kind:
        return None if field_name == "K" and text.lower() == "none" else int(text)
    if "float" in kind:
        return float(text)
    return text


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment.

    Keys may be flag names (``m-pixels``, ``lambda``) or config field names (``geom_weight``).
    """
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        name = FLAG_FIELDS.get(key, key)
        if name not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[name] = _convert(name, val)
    return values


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for flag, name in FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = _convert(name, v) if isinstance(v, str) else v
    return ExperimentConfig(**values)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command line flags override it")
    p.add_argument("--input", help="HSCUBE01 cube file (default: synthetic cube)")
    p.add_argument("--labels", help="HSLAB001 ground truth for --input")
    p.add_argument("--synthetic", help='synthetic cube "HxWxB:K:sep:sigma"')
    p.add_argument("--pca-dims", dest="pca_dims", type=int)
    p.add_argument("--superpixels", type=int)
    p.add_argument("--compactness", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--m-pixels", dest="m_pixels", type=int)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--clusters", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=["full", "no-lc", "no-lplc"])
    p.add_argument("--out", help="output directory")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pscpc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and score one configuration")
    _add_experiment_flags(p)

    p = sub.add_parser("sweep", help="lambda x M x seed grid")
    _add_experiment_flags(p)
    p.add_argument("--lambdas", type=_floats, default=list(PAPER_LAMBDAS))
    p.add_argument("--ms", type=_ints, default=list(PAPER_MS))
    p.add_argument("--seeds", type=_ints, default=[0])

    p = sub.add_parser("ablate", help="full / no-lc / no-lplc over shared seeds")
    _add_experiment_flags(p)
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])

    p = sub.add_parser("render", help="HSLAB001 label map -> PPM")
    p.add_argument("labels", help="HSLAB001 file")
    p.add_argument("--out", required=True, help="output .ppm path")

    p = sub.add_parser("gen", help="write a synthetic cube and its ground truth")
    p.add_argument("--synthetic", default=ExperimentConfig.synthetic)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="OA / NMI / Kappa between two label maps")
    p.add_argument("pred", help="HSLAB001 predicted labels")
    p.add_argument("truth", help="HSLAB001 ground truth")
    p.add_argument("--out", help="optional CSV path")
    return parser


def _print_metrics(name: str, m: dict) -> None:
    print(f"{name}: OA={m['OA']:.4f} NMI={m['NMI']:.4f} Kappa={m['Kappa']:.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        cfg = build_config(args)
        res = run_experiment(cfg)
        if res.baseline:
            _print_metrics("k-means", res.baseline)
        _print_metrics(cfg.ablation, res.metrics())
        print(f"runtime {res.runtime_seconds:.2f}s")
    elif args.command == "sweep":
        cfg = build_config(args)
        rows = run_sweep(cfg, args.lambdas, args.ms, args.seeds, cfg.output_dir)
        for r in rows:
            print(f"lambda={r['lambda']:g} M={r['M']} seed={r['seed']} OA={r['OA']:.4f}")
    elif args.command == "ablate":
        cfg = build_config(args)
        for r in run_ablation_suite(cfg, args.seeds, cfg.output_dir):
            print(f"{r['metric']:5s} {r['variant']:8s} {r['mean']:.4f} +- {r['std']:.4f}")
    elif args.command == "render":
        report.render_map(load_labels(args.labels), args.out)
    elif args.command == "gen":
        spec = SyntheticSpec.parse(args.synthetic)
        cube, truth = generate_synthetic(spec, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_cube(cube, out / "cube.hscube")
        save_labels(truth, out / "labels.hslab")
        report.render_map(truth, out / "truth.ppm")
    elif args.command == "eval":
        pred, truth = load_labels(args.pred), load_labels(args.truth)
        m = evaluate(pred.labels, truth.labels)
        _print_metrics("eval", m)
        if args.out:
            report.write_csv(args.out, [m], ["OA", "NMI", "Kappa"])
    return 0


def entry() -> None:
    try:
        sys.exit(main())
    except (ValueError, FloatingPointError, RuntimeError, OSError) as exc:
        print(f"pscpc: error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    entry()
