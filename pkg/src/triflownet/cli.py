"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablation import format_table, run_ablation
from .complexity import model_complexity
from .config import ConfigError, load_config
from .data import DatasetError
from .gradcheck import run_gradcheck
from .infer import predict
from .metrics import evaluate_dirs
from .model import build_model
from .paramstore import CheckpointError
from .train import NumericError, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="triflownet",
                     description="Triple-flow RGB-thermal saliency toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--resume")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("predict", help="run inference on one rgb/thermal pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--thermal", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flows", action="store_true",
                   help="also write the per-flow maps (_r, _t, _s)")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--attributes")
    p.add_argument("--report", required=True)

    p = sub.add_parser("ablate", help="train and compare config variants")
    p.add_argument("--base", required=True)
    p.add_argument("--variants", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", default="ablation_out")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--module", required=True,
                   help="one of mfm, raspm, mdam, heads, full")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("count", help="report parameter and MAC counts")
    p.add_argument("--config", required=True)

    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, args.data_root, args.out, deterministic=args.deterministic,
                   resume=args.resume, max_steps=args.max_steps)
    print(f"finished at step {result.state.step} "
          f"(best train MAE {result.state.best_mae:.4f} at step {result.state.best_step})")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    written = predict(args.ckpt, args.rgb, args.thermal, args.out, flows=args.flows)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = evaluate_dirs(args.pred_dir, args.gt_dir, attr_file=args.attributes)
    report.save(args.report)
    for key, value in report.aggregate.items():
        print(f"{key}: {value:.4f}")
    if report.errors:
        print(f"{len(report.errors)} file errors; see report", file=sys.stderr)
    if not report.per_image:
        print("error: no image pairs were evaluated", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _cmd_ablate(args) -> int:
    base = load_config(args.base)
    try:
        variants = json.loads(Path(args.variants).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read variants file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not isinstance(variants, list) or not variants:
        print("error: variants file must be a non-empty JSON list", file=sys.stderr)
        return EXIT_USAGE
    report = run_ablation(base, variants, args.data_root, args.out,
                          deterministic=args.deterministic, max_steps=args.max_steps)
    print(format_table(report))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    try:
        report = run_gradcheck(args.module, seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for line in report.lines():
        print(line)
    print(f"max relative error: {report.max_rel_err:.3e}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _cmd_count(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg, seed=cfg.training.seed)
    info = model_complexity(model)
    print(f"params: {info['params']} ({info['params_millions']:.2f} M)")
    print(f"macs:   {info['macs']} ({info['macs_giga']:.2f} G) "
          f"at {info['input_size']}x{info['input_size']}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "count": _cmd_count,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
