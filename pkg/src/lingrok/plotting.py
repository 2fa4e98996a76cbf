"""Static figures for a finished run directory (written to ``<run>/figures``)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import analytics as an  # noqa: E402
from .types import TrainTrace  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _positive(t, *series):
    keep = t > 0
    return (t[keep],) + tuple(s[keep] for s in series)


def plot_accuracy(trace: TrainTrace, grok: dict, path: Path) -> Path:
    t = trace.t
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        tt, P = _positive(t, trace.column("P"))
        ax.plot(tt, P, color="k", lw=1.2, label="train")
        for name in trace.q_names:
            _, Q = _positive(t, trace.Q(name))
            ax.plot(tt, Q, lw=1.0, label=name)
        primary = grok.get("primary")
        if primary:
            for key, ls in (("T_tr", ":"), ("T_te", "--")):
                if primary.get(key):
                    ax.axvline(max(primary[key], tt[0]), color="grey", ls=ls, lw=0.8)
            ax.set_title(f"zeta = {primary['zeta']:.3g} on {grok['grok_set']} "
                         f"(eps = {grok['eps']})")
        ax.set_xscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("accuracy")
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_bias(trace: TrainTrace, svm: dict, phase_doc: dict, path: Path) -> Path:
    t = trace.t
    tt, b, nw = _positive(t, trace.column("b"), trace.column("norm_w"))
    ph = phase_doc["phase"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(tt, b, color="C0", lw=1.2, label="b(t)")
        if svm.get("b_inf") is not None:
            ax.axhline(svm["b_inf"], color="C0", ls="--", lw=0.8, label="b_inf")
            if ph.get("t0"):
                ctx = an.AnalyticContext(A_plus=svm["A_plus"], A_minus=svm["A_minus"]).in_steps()
                grid = tt[tt >= ph["t0"]]
                ax.plot(grid, an.bias_closed_form(ctx, ph["b0"], ph["t0"], grid),
                        color="C3", lw=0.9, label="closed form from t0")
        for key in ("t0", "phase2_end"):
            if ph.get(key):
                ax.axvline(ph[key], color="grey", ls=":", lw=0.8)
        ax.set_xscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("bias")
        ax2 = ax.twinx()
        ax2.plot(tt, np.abs(b) / np.where(nw > 0, nw, np.nan), color="C1", lw=0.8)
        ax2.set_ylabel("|b| / |w|", color="C1")
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_residual(trace: TrainTrace, path: Path) -> Path:
    tt, rho, cos = _positive(trace.t, trace.column("rho_norm"), trace.column("cos_align"))
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        a1.plot(tt, rho, lw=1.0)
        a1.set_xscale("log")
        a1.set_xlabel("step")
        a1.set_ylabel("|w(t) - w_hat log t|")
        a2.plot(tt, 1.0 - cos, lw=1.0, color="C2")
        a2.set_xscale("log")
        a2.set_yscale("log")
        a2.set_xlabel("step")
        a2.set_ylabel("1 - cos(w, reference)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_run(run_dir: str | Path) -> list[Path]:
    """Render the standard figures for a run; returns the written paths."""
    run_dir = Path(run_dir)
    trace = TrainTrace.from_csv(run_dir / "trace.csv")
    grok = json.loads((run_dir / "grok_report.json").read_text())
    svm = json.loads((run_dir / "svm.json").read_text())
    phase_doc = json.loads((run_dir / "phase_report.json").read_text())
    out = run_dir / "figures"
    out.mkdir(exist_ok=True)
    return [plot_accuracy(trace, grok, out / "accuracy.png"),
            plot_bias(trace, svm, phase_doc, out / "bias.png"),
            plot_residual(trace, out / "residual.png")]
