"""Config-driven experiment pipeline: run, verify and sweep.

A run directory holds exactly five files: ``trace.csv``, ``svm.json``,
``grok_report.json``, ``phase_report.json`` and ``summary.json``.  The
summary echoes the resolved config, so every dataset can be regenerated
bit-for-bit when a run is verified.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import analytics as an
from .adversarial import linear_pgd_oracle, pgd_attack
from .datagen import generate
from .maxmargin import (KKT_CHECKS, LingrokError, SeparabilityError, SvmSolution,
                        compute_w_tilde, kkt_report, solve_hard_margin)
from .trainer import fill_residuals, train
from .types import (Dataset, DatasetSpec, DivergenceError, InfeasibleSpecError, LinearModel,
                    PgdConfig, SpecError, TrainConfig, TrainTrace, dump_json)

OUTPUT_ROOT_ENV = "LINGROK_OUTPUT_ROOT"
RUN_FILES = ("trace.csv", "svm.json", "grok_report.json", "phase_report.json", "summary.json")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_INFEASIBLE = 0, 1, 2, 3, 4
PRESETS = ("d2_standard", "d2_concentrated", "d2_planted_S350", "d64_concentrated")
DEFAULT_MANDATORY = ("trace_integrity", "kkt", "closed_form_vs_ode", "pgd_oracle")

TRAIN_FIELDS = {"learning_rate", "total_steps", "log_every", "loss_kind", "bias_learnable",
                "adversarial_eval", "adversarial_set", "reference_direction"}
ANALYTICS_DEFAULTS = {
    "eps_list": [0.05],
    "zeta_threshold": 100.0,
    "frac_tol": 0.01,
    "bound_slack": 3.0,
    "grok_set": None,            # eval set whose T_te drives the verdict (first if None)
    "plateau_tail": 0.1,         # trailing fraction of entries averaged for measured b
    "mandatory_checks": list(DEFAULT_MANDATORY),
}


class ConfigError(SpecError):
    pass


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    eval_datasets: dict[str, DatasetSpec]
    train: dict[str, Any]
    analytics: dict[str, Any]
    run_id: str
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = copy.deepcopy(dict(d))
        for key in ("dataset", "train", "run_id"):
            if key not in d:
                raise ConfigError(f"missing required field {key!r}", key)
        unknown = set(d) - {"dataset", "eval_datasets", "train", "analytics", "run_id",
                            "output_dir", "description"}
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown field {name!r}", name)
        run_id = d["run_id"]
        if not isinstance(run_id, str) or not run_id or not all(
                c.isalnum() or c in "-_." for c in run_id) or run_id.startswith("."):
            raise ConfigError("run_id must be a nonempty filesystem-safe name", "run_id")
        dataset = _spec(d["dataset"], "dataset")
        evals: dict[str, DatasetSpec] = {}
        for k, e in enumerate(d.get("eval_datasets") or []):
            if "name" not in e:
                raise ConfigError(f"eval_datasets[{k}] needs a name", f"eval_datasets[{k}].name")
            e = dict(e)
            name = e.pop("name")
            if name in evals:
                raise ConfigError(f"duplicate eval set name {name!r}", "eval_datasets")
            evals[name] = _spec(e, f"eval_datasets[{k}]")
            if evals[name].dim != dataset.dim:
                raise ConfigError(f"eval set {name!r} dimension differs", f"eval_datasets[{k}]")
        tr = dict(d["train"])
        unknown = set(tr) - TRAIN_FIELDS
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown field train.{name}", f"train.{name}")
        ana = dict(ANALYTICS_DEFAULTS)
        user_ana = d.get("analytics") or {}
        unknown = set(user_ana) - set(ANALYTICS_DEFAULTS)
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown field analytics.{name}", f"analytics.{name}")
        ana.update(user_ana)
        for e in ana["eps_list"]:
            if not 0 <= e < 1:
                raise ConfigError("eps_list values must lie in [0, 1)", "analytics.eps_list")
        if not ana["eps_list"]:
            raise ConfigError("eps_list must be nonempty", "analytics.eps_list")
        if ana["grok_set"] is not None and ana["grok_set"] not in evals:
            raise ConfigError("analytics.grok_set must name an eval set", "analytics.grok_set")
        cfg = cls(dataset=dataset, eval_datasets=evals, train=tr, analytics=ana, run_id=run_id,
                  output_dir=d.get("output_dir"), raw=d)
        cfg.train_config({})   # validate the training block eagerly
        return cfg

    def train_config(self, eval_sets: Mapping[str, Dataset]) -> TrainConfig:
        tr = dict(self.train)
        pgd = tr.pop("adversarial_eval", None)
        if pgd is not None:
            try:
                pgd = PgdConfig.from_dict(pgd)
            except SpecError as exc:
                raise ConfigError(str(exc), f"train.adversarial_eval.{exc.field}") from None
        ref = tr.pop("reference_direction", None)
        try:
            return TrainConfig(eval_sets=dict(eval_sets) if eval_sets else
                               {n: None for n in self.eval_datasets},
                               adversarial_eval=pgd,
                               reference_direction=None if ref is None else tuple(ref), **tr)
        except SpecError as exc:
            raise ConfigError(str(exc), f"train.{exc.field}") from None
        except TypeError as exc:
            raise ConfigError(str(exc), "train") from None

    @property
    def grok_set(self) -> str | None:
        return self.analytics["grok_set"] or next(iter(self.eval_datasets), None)

    def to_dict(self) -> dict:
        d = copy.deepcopy(self.raw)
        d["dataset"] = self.dataset.to_dict()
        d["eval_datasets"] = [dict(name=n, **s.to_dict()) for n, s in self.eval_datasets.items()]
        d["train"] = self.train
        d["analytics"] = self.analytics
        d["run_id"] = self.run_id
        return d

    def with_overrides(self, seed: int | None = None, steps: int | None = None,
                       run_id: str | None = None, **dataset_changes) -> "ExperimentConfig":
        """Copy with a new seed (shifting every dataset seed by the same offset),
        a new step count, or dataset field changes applied to all datasets."""
        d = self.to_dict()
        if seed is not None:
            shift = int(seed) - self.dataset.seed
            d["dataset"]["seed"] = int(seed)
            for e in d["eval_datasets"]:
                e["seed"] += shift
        if steps is not None:
            d["train"]["total_steps"] = int(steps)
            if steps > 0:
                d["train"]["log_every"] = min(d["train"].get("log_every", 100), int(steps))
        for key, value in dataset_changes.items():
            if key == "class_counts" or key == "planted_support_counts":
                d["dataset"][key] = value
            elif key in ("gamma", "alpha_sens"):
                d["dataset"][key] = value if (key == "gamma" or
                                              d["dataset"]["kind"] == "concentrated") else \
                    d["dataset"].get(key)
                for e in d["eval_datasets"]:
                    if key == "gamma" or e["kind"] == "concentrated":
                        e[key] = value
            else:
                raise ConfigError(f"cannot override {key!r}", key)
        if run_id is not None:
            d["run_id"] = run_id
        return ExperimentConfig.from_dict(d)


def _spec(d: Mapping[str, Any], where: str) -> DatasetSpec:
    try:
        return DatasetSpec.from_dict(d)
    except SpecError as exc:
        raise ConfigError(f"{where}: {exc}", f"{where}.{exc.field}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", where) from None


def load_config(path_or_preset: str | Path) -> ExperimentConfig:
    """Parse a JSON config file, or a bundled preset by name."""
    p = Path(path_or_preset)
    if p.exists():
        text = p.read_text()
    elif str(path_or_preset) in PRESETS or p.stem in PRESETS:
        text = resources.files("lingrok.presets").joinpath(f"{p.stem}.json").read_text()
    else:
        raise FileNotFoundError(f"no config file or preset named {path_or_preset!r}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", "json") from None
    return ExperimentConfig.from_dict(data)


def output_root(cfg: ExperimentConfig | None = None, override: str | Path | None = None) -> Path:
    if override is not None:
        return Path(override)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# ---------------------------------------------------------------------------
# run

def _log(msg: str, quiet: bool) -> None:
    if not quiet:
        print(msg, file=sys.stderr, flush=True)


def build_datasets(cfg: ExperimentConfig):
    """Training set and named eval sets; generator failures are infeasible specs."""
    try:
        train_ds = generate(cfg.dataset)
        evals = {n: generate(s) for n, s in cfg.eval_datasets.items()}
    except SpecError as exc:
        raise InfeasibleSpecError(str(exc)) from None
    return train_ds, evals


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def execute(cfg: ExperimentConfig, root: str | Path | None = None, quiet: bool = True) -> dict:
    """Run the full pipeline and write the five run files; returns the summary.

    Raises InfeasibleSpecError, DivergenceError or ConfigError on failure.
    """
    started = time.time()
    run_dir = output_root(cfg, root) / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    for name in RUN_FILES:
        (run_dir / name).unlink(missing_ok=True)
    train_ds, evals = build_datasets(cfg)
    tcfg = cfg.train_config(evals)
    ana = cfg.analytics
    _log(f"[{cfg.run_id}] N={len(train_ds)} d={train_ds.dim} T={tcfg.total_steps}", quiet)
    try:
        sol = solve_hard_margin(train_ds, with_bias=tcfg.bias_learnable)
    except SeparabilityError as exc:
        raise InfeasibleSpecError(str(exc)) from None
    sol = compute_w_tilde(sol, tcfg.learning_rate)
    dump_json(sol.to_dict(), run_dir / "svm.json")

    trace = train(train_ds, tcfg, csv_path=run_dir / "trace.csv", progress=not quiet)
    B_hat = fill_residuals(trace, sol.w_svm)
    trace.to_csv(run_dir / "trace.csv")

    # grokking times for every eval set and tolerance
    t = trace.t
    P = trace.column("P")
    by_set = {}
    for name in trace.q_names:
        by_set[name] = {str(e): an.grok_times(t, P, trace.Q(name), e,
                                             ana["zeta_threshold"]).to_dict()
                        for e in ana["eps_list"]}
    gset = cfg.grok_set
    eps0 = ana["eps_list"][0]
    primary = by_set[gset][str(eps0)] if gset else None
    dump_json({"grok_set": gset, "eps": eps0, "primary": primary, "by_set": by_set},
              run_dir / "grok_report.json")

    # phases, bias plateau and bounds
    phase = an.detect_t0(trace, sol, train_ds, ana["frac_tol"], tcfg.loss_kind)
    if phase.t0 is not None and tcfg.bias_learnable:
        phase = an.phase_segmentation(trace, phase.t0, base=phase)
    robust = None
    if "adv" in trace.q_names:
        robust = an.delayed_robustness_check(trace, phase, eps=0.05)
    b_series = trace.column("b")
    tail = max(1, int(math.ceil(len(b_series) * ana["plateau_tail"])))
    b_meas = float(np.mean(b_series[-tail:]))
    plateau = None
    ctx = None
    if sol.delta is not None:
        ctx = an.AnalyticContext.from_solution(sol, cfg.dataset.gamma,
                                               _alpha_of(cfg), B_hat, tcfg.learning_rate,
                                               len(train_ds), train_ds.radius_bound)
        tol = max(0.02, 0.1 * abs(math.log(sol.delta)))
        plateau = {"b_measured": b_meas, "b_final": float(b_series[-1]), "b_inf": sol.b_inf,
                   "tolerance": tol, "pass": bool(abs(b_meas - sol.b_inf) <= tol)}
    sandwich = _bound_sandwich(ctx, phase, primary, eps0, ana["bound_slack"])
    dump_json({"phase": phase.to_dict(), "delayed_robustness": robust,
               "bias_plateau": plateau, "bound_sandwich": sandwich, "B_hat": B_hat},
              run_dir / "phase_report.json")

    row = {"run_id": cfg.run_id, "kind": cfg.dataset.kind, "d": train_ds.dim,
           "N": len(train_ds), "gamma": cfg.dataset.gamma, "alpha_sens": _alpha_of(cfg),
           "delta": sol.delta,
           "T_tr": primary["T_tr"] if primary else None,
           "T_te": primary["T_te"] if primary else None,
           "zeta": primary["zeta"] if primary else None,
           "verdict": primary["verdict"] if primary else None,
           "b_inf_pred": sol.b_inf, "b_inf_meas": b_meas, "status": "ok"}
    summary = {
        "config": cfg.to_dict(), "row": row, "B_hat": B_hat,
        "trace_sha256": _sha256(run_dir / "trace.csv"), "trace_rows": len(trace),
        "final_w": trace.meta["final_w"], "final_b": trace.meta["final_b"],
        "clamp_trips": trace.meta["clamp_trips"], "warnings": list(sol.warnings) +
        ([trace.meta["warning"]] if "warning" in trace.meta else []),
        "elapsed_seconds": round(time.time() - started, 3),
    }
    dump_json(summary, run_dir / "summary.json")
    _log(f"[{cfg.run_id}] done in {summary['elapsed_seconds']} s", quiet)
    return summary


def _alpha_of(cfg: ExperimentConfig):
    if cfg.dataset.alpha_sens is not None:
        return cfg.dataset.alpha_sens
    gset = cfg.grok_set
    if gset is not None and cfg.eval_datasets[gset].alpha_sens is not None:
        return cfg.eval_datasets[gset].alpha_sens
    return None


def _bound_sandwich(ctx, phase, primary, eps, slack):
    if ctx is None or primary is None or phase.t0 is None or primary["T_te"] is None:
        return {"evaluated": False, "reason": "needs delta, t0 and a test grokking time"}
    if ctx.alpha_sens is None:
        return {"evaluated": False, "reason": "no sensitivity parameter"}
    lo, hi = an.grok_time_bounds(ctx, eps)
    ratio = primary["T_te"] / phase.t0
    return {"evaluated": True, "lower": lo, "upper": hi, "slack": slack,
            "T_te": primary["T_te"], "t0": phase.t0, "T_te_over_t0": ratio,
            "T_te_absolute_in_bounds": bool(lo / slack <= primary["T_te"] <= hi * slack),
            "pass": bool(lo / slack <= ratio <= hi * slack)}


# ---------------------------------------------------------------------------
# verify

def verify(run_dir: str | Path) -> tuple[int, dict]:
    """Re-check a stored run; returns ``(exit_code, report)``."""
    run_dir = Path(run_dir)
    missing = [f for f in RUN_FILES if not (run_dir / f).exists()]
    if missing:
        return EXIT_CONFIG, {"error": f"missing files: {', '.join(missing)}"}
    summary = json.loads((run_dir / "summary.json").read_text())
    phase_doc = json.loads((run_dir / "phase_report.json").read_text())
    cfg = ExperimentConfig.from_dict(summary["config"])
    checks: dict[str, dict] = {}

    # trace integrity
    try:
        trace = TrainTrace.from_csv(run_dir / "trace.csv")
        t = trace.t
        acc = [trace.column("P")] + [trace.Q(n) for n in trace.q_names]
        ok = (_sha256(run_dir / "trace.csv") == summary["trace_sha256"]
              and len(trace) == summary["trace_rows"]
              and bool(np.all(np.diff(t) > 0))
              and all(bool(np.all((a >= 0) & (a <= 1))) for a in acc)
              and bool(np.all(trace.column("norm_w") >= 0))
              and bool(np.all(np.abs(trace.column("cos_align")) <= 1)))
        checks["trace_integrity"] = {"pass": ok}
    except (ValueError, KeyError, IndexError) as exc:
        trace = None
        checks["trace_integrity"] = {"pass": False, "error": str(exc)}

    train_ds, evals = build_datasets(cfg)
    sol = SvmSolution.from_dict(json.loads((run_dir / "svm.json").read_text()))
    k = kkt_report(sol, train_ds)
    checks["kkt"] = {"pass": all(k[name] <= 1e-6 for name in KKT_CHECKS), **k}

    # closed form against RK4.  The bias relaxes on a log-time scale of
    # 1/(2 sqrt(A+ A-)), which for realistic runs is far shorter than a decade,
    # so the window is capped at 30 relaxation times (or four decades).
    if sol.delta is not None:
        ctx = an.AnalyticContext(A_plus=sol.A_plus, A_minus=sol.A_minus).in_steps()
        ph = phase_doc["phase"]
        t0 = ph["t0"] or 100
        b0 = ph["b0"] if ph["b0"] is not None else 0.0
        rate = 2.0 * math.sqrt(ctx.A_plus * ctx.A_minus)
        span = min(math.log(1e4), 30.0 / rate)
        ts = t0 * np.exp(span * np.array([0.1, 0.25, 0.5, 1.0]))
        cf = an.bias_closed_form(ctx, b0, t0, ts)
        ode = an.bias_ode_oracle(ctx, b0, t0, ts, substeps=20_000)
        err = float(np.max(np.abs(cf - ode) / np.maximum(np.abs(ode), 1e-12)))
        err_abs = float(np.max(np.abs(cf - ode)))
        checks["closed_form_vs_ode"] = {"pass": err < 1e-6 or err_abs < 1e-12,
                                        "max_rel_error": err}
        pl = phase_doc["bias_plateau"]
        checks["b_inf_plateau"] = {"pass": bool(pl["pass"]), **pl}
    else:
        checks["closed_form_vs_ode"] = {"pass": True, "skipped": "one-sided support"}
    bs = phase_doc["bound_sandwich"]
    checks["bound_sandwich"] = {"pass": bool(bs.get("pass", False)), **bs}

    # PGD against the closed form on the final model
    tcfg = cfg.train_config(evals)
    pgd = tcfg.adversarial_eval or PgdConfig(clip_lo=-cfg.dataset.box_halfwidth,
                                              clip_hi=cfg.dataset.box_halfwidth)
    target = tcfg.adversarial_target or next(iter(evals), None)
    if target is not None and not pgd.random_start and pgd.saturates:
        model = LinearModel(np.array(summary["final_w"]), summary["final_b"])
        diff = float(np.max(np.abs(pgd_attack(model, evals[target], pgd)
                                   - linear_pgd_oracle(model, evals[target], pgd))))
        checks["pgd_oracle"] = {"pass": diff <= 1e-12, "max_abs_diff": diff}
    else:
        checks["pgd_oracle"] = {"pass": True, "skipped": "no saturating deterministic attack"}

    mandatory = cfg.analytics["mandatory_checks"]
    for name, c in checks.items():
        c["mandatory"] = name in mandatory
    failed = [n for n, c in checks.items() if c["mandatory"] and not c["pass"]]
    report = {"run_id": cfg.run_id, "checks": checks, "failed": failed, "pass": not failed}
    return (EXIT_OK if not failed else EXIT_FAIL), report


# ---------------------------------------------------------------------------
# sweep

GRID_KEYS = ("planted_support_counts", "class_counts", "gamma", "alpha_sens", "seed")


def expand_grid(grid: Mapping[str, list]) -> list[dict]:
    """Cartesian product of the grid; an empty grid (or empty axis) yields no runs."""
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid key {sorted(unknown)[0]!r}", "grid")
    if not grid or any(len(v) == 0 for v in grid.values()):
        return []
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _point_id(base: str, point: Mapping[str, Any]) -> str:
    parts = []
    for k, v in point.items():
        if isinstance(v, (list, tuple)):
            v = "-".join(str(x) for x in v)
        parts.append(f"{k}={v}")
    return base + "__" + "__".join(parts)


def _sweep_one(args):
    cfg_dict, point, root = args
    base = ExperimentConfig.from_dict(cfg_dict)
    run_id = _point_id(base.run_id, point).replace("=", "-")
    row = {"run_id": run_id, "status": "error"}
    try:
        changes = {k: v for k, v in point.items() if k != "seed"}
        cfg = base.with_overrides(seed=point.get("seed"), run_id=run_id, **changes)
        summary = execute(cfg, root=root, quiet=True)
        row = dict(summary["row"])
    except (LingrokError, ValueError, FloatingPointError) as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def sweep(base: ExperimentConfig, grid: Mapping[str, list], root: str | Path | None = None,
          max_parallel: int = 1, quiet: bool = True) -> tuple[Path, list[dict]]:
    """One independent run per grid point.

    Rows go to ``sweep_summary.csv`` in the sweep directory; an existing file
    with the same header is appended to, so the schema never changes.
    """
    points = expand_grid(grid)
    root_path = output_root(base, root)
    sweep_dir = root_path / base.run_id
    sweep_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(base.to_dict(), p, str(sweep_dir)) for p in points]
    if max_parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_parallel) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = []
        for j in jobs:
            _log(f"sweep point {j[1]}", quiet)
            rows.append(_sweep_one(j))
    out = sweep_dir / "sweep_summary.csv"
    header = ",".join(an.SUMMARY_COLUMNS)
    append = out.exists() and out.read_text().split("\n", 1)[0] == header
    with open(out, "a" if append else "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=an.SUMMARY_COLUMNS, lineterminator="\n")
        if not append:
            wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in an.SUMMARY_COLUMNS})
    return out, rows
