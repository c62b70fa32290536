"""Command-line entry point ``lab``.

``lab run CONFIG`` runs the experiment named in the config and writes a
report directory; ``lab verify CONFIG`` runs the acceptance suite with the
config's numeric knobs; ``lab models list`` prints the built-in models.
The exit code is 0 exactly when every verdict passes.
"""
from __future__ import annotations

import argparse
import sys

from .config import parse_experiment_config
from .errors import TransportLabError
from .experiments import acceptance_suite, run_experiment, write_report
from .model import BUILTIN_MODELS


def _int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _float_list(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run the experiment described by a config file"),
                            ("verify", "run the acceptance suite")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment config (YAML)")
        p.add_argument("--N", type=int, help="k-grid resolution")
        p.add_argument("--L", type=_int_list, help="comma-separated sample sizes")
        p.add_argument("--eps", type=_float_list, help="comma-separated field strengths")
        p.add_argument("--out", help="output directory")
    models = sub.add_parser("models", help="model catalogue")
    models.add_argument("action", choices=["list"])
    return parser


def _list_models() -> None:
    for name, (_, params) in BUILTIN_MODELS.items():
        text = ", ".join(f"{k}={v:g}" for k, v in params.items())
        print(f"{name}: {text}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "models":
        _list_models()
        return 0
    try:
        cfg = parse_experiment_config(args.config)
        cfg = cfg.with_overrides(N=args.N, L_list=args.L, eps_list=args.eps, output=args.out)
        doc = acceptance_suite(cfg) if args.command == "verify" else run_experiment(cfg)
        write_report(doc, cfg.output)
    except (TransportLabError, OSError) as exc:
        print(f"lab: error: {exc}", file=sys.stderr)
        return 2
    for verdict in doc.verdicts:
        print(verdict.line())
    print(f"report written to {cfg.output}")
    return 0 if doc.passed else 1


if __name__ == "__main__":
    sys.exit(main())
