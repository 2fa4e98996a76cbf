"""Command-line entry point: ``lingrok run|verify|sweep|plot``.

Progress goes to standard error; standard output carries one JSON document
per command.  Exit codes: 0 success, 1 failed verification, 2 config error,
3 numeric divergence, 4 infeasible dataset spec, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
from pathlib import Path

from . import experiment as ex
from .types import DivergenceError, InfeasibleSpecError, SpecError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lingrok", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--output-root", default=None,
                        help=f"output root (default: config output_dir, ${ex.OUTPUT_ROOT_ENV}, ./runs)")
        sp.add_argument("--quiet", action="store_true", help="no progress on stderr")

    r = sub.add_parser("run", help="run one experiment config or bundled preset")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the dataset seed")
    r.add_argument("--steps", type=int, default=None, help="override total_steps")
    common(r)

    v = sub.add_parser("verify", help="re-check a stored run directory")
    v.add_argument("run_dir")
    v.add_argument("--quiet", action="store_true")

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("config")
    s.add_argument("--grid", required=True, help="JSON file mapping grid keys to value lists")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--max-parallel", type=int, default=1)
    common(s)

    pl = sub.add_parser("plot", help="render figures for a run directory")
    pl.add_argument("run_dir")
    pl.add_argument("--quiet", action="store_true")
    return p


def _interrupt(signum, frame):
    raise KeyboardInterrupt


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=str))


def _load(args):
    cfg = ex.load_config(args.config)
    if args.seed is not None or args.steps is not None:
        cfg = cfg.with_overrides(seed=args.seed, steps=args.steps)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    signal.signal(signal.SIGTERM, _interrupt)
    try:
        if args.command == "run":
            summary = ex.execute(_load(args), root=args.output_root, quiet=args.quiet)
            _emit(summary["row"])
            return ex.EXIT_OK
        if args.command == "verify":
            code, report = ex.verify(args.run_dir)
            _emit(report)
            return code
        if args.command == "sweep":
            cfg = _load(args)
            try:
                grid = json.loads(Path(args.grid).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ex.ConfigError(f"cannot read grid: {exc}", "grid") from None
            out, rows = ex.sweep(cfg, grid, root=args.output_root,
                                 max_parallel=args.max_parallel, quiet=args.quiet)
            _emit({"summary_csv": str(out), "runs": len(rows),
                   "failed": sum(r.get("status") != "ok" for r in rows)})
            return ex.EXIT_OK
        if args.command == "plot":
            from .plotting import plot_run
            files = plot_run(args.run_dir)
            _emit({"figures": [str(f) for f in files]})
            return ex.EXIT_OK
    except SpecError as exc:
        print(f"config error ({exc.field}): {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return ex.EXIT_DIVERGENCE
    except InfeasibleSpecError as exc:
        print(f"infeasible dataset spec: {exc}", file=sys.stderr)
        return ex.EXIT_INFEASIBLE
    except KeyboardInterrupt:
        print("interrupted; partial trace left on disk", file=sys.stderr)
        return 130
    return ex.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
