"""Full-batch gradient descent on logistic or exponential loss."""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from .types import (DIVERGENCE_LIMIT, Dataset, DivergenceError, LinearModel, NumericError,
                    SpecError, TrainConfig, TrainTrace, TraceWriter)

EXP_CLAMP = -700.0
SNAPSHOT_DIM_LIMIT = 64
N_CHECKPOINTS = 20


def _dloss(margins: np.ndarray, kind: str):
    """``l'(m)`` and the exponential clamp count (the hot path skips the loss)."""
    if kind == "logistic":
        return -expit(-margins), 0
    clamped = margins < EXP_CLAMP
    return -np.exp(-np.maximum(margins, EXP_CLAMP)), int(np.count_nonzero(clamped))


def _loss_terms(margins: np.ndarray, kind: str):
    """Per-point loss and derivative ``l'(m)``; returns the clamp count too."""
    if kind == "logistic":
        return np.logaddexp(0.0, -margins), -expit(-margins), 0
    clamped = margins < EXP_CLAMP
    m = np.maximum(margins, EXP_CLAMP)
    e = np.exp(-m)
    return e, -e, int(clamped.sum())


def loss_and_grad(model: LinearModel, ds: Dataset, kind: str = "logistic"):
    """``(loss, grad_w, grad_b)`` of ``sum_i l(y_i (w.x_i + b))``."""
    if model.dim != ds.dim:
        raise SpecError("model and dataset dimensions differ", "dim")
    if kind not in ("logistic", "exponential"):
        raise SpecError(f"unknown loss kind {kind!r}", "loss_kind")
    margins = ds.y * (ds.X @ model.w + model.b)
    loss_i, dl, _ = _loss_terms(margins, kind)
    coef = dl * ds.y
    loss = float(loss_i.sum())
    gw = ds.X.T @ coef
    gb = float(coef.sum())
    if not (math.isfinite(loss) and np.all(np.isfinite(gw)) and math.isfinite(gb)):
        bad = np.flatnonzero(~np.isfinite(loss_i) | ~np.isfinite(dl))
        where = int(bad[0]) if len(bad) else -1
        raise NumericError(f"non-finite loss/gradient (first offending index {where})")
    return loss, gw, gb


def accuracy(model: LinearModel, ds: Dataset) -> float:
    """Fraction of points whose prediction (score > 0 means +1) equals the label."""
    if len(ds) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    if model.dim != ds.dim:
        raise SpecError("model and dataset dimensions differ", "dim")
    return float(np.mean(model.predict(ds.X) == ds.y))


def _accuracy_raw(w, b, X, y) -> float:
    return float(np.mean(np.where(X @ w + b > 0.0, 1.0, -1.0) == y))


def checkpoint_steps(T: int, log_every: int, n: int = N_CHECKPOINTS) -> set[int]:
    """About ``n`` logged steps spaced evenly in log time (always includes 0 and T)."""
    logged = np.arange(0, T + 1, log_every)
    if logged[-1] != T:
        logged = np.r_[logged, T]
    if T == 0:
        return {0}
    targets = np.unique(np.round(np.geomspace(log_every, T, n)).astype(np.int64))
    picks = {0, int(T)}
    for tg in targets:
        picks.add(int(logged[np.argmin(np.abs(logged - tg))]))
    return picks


def train(ds: Dataset, cfg: TrainConfig, init: LinearModel | None = None,
          csv_path: str | Path | None = None, progress: bool = False) -> TrainTrace:
    """Run ``cfg.total_steps`` of gradient descent and return the logged trace.

    Entries are logged at ``t = 0``, every ``log_every`` steps and at ``T``.
    With ``csv_path`` the trace is streamed to disk while training.
    """
    from .adversarial import adversarial_accuracy

    if init is None:
        init = LinearModel.zeros(ds.dim, cfg.bias_learnable)
    if init.dim != ds.dim:
        raise SpecError("initial model dimension differs from the dataset", "init")
    for name, es in cfg.eval_sets.items():
        if es.dim != ds.dim:
            raise SpecError(f"eval set {name!r} has dimension {es.dim}, expected {ds.dim}",
                            "eval_sets")
    if not cfg.bias_learnable and init.b != 0.0:
        raise SpecError("frozen-bias runs must start at b = 0", "init")
    if cfg.reference_direction is not None:
        ref = np.asarray(cfg.reference_direction, dtype=float)
    elif ds.spec is not None:
        ref = np.asarray(ds.spec.w_true)
    else:
        ref = np.zeros(ds.dim)
    ref_norm = float(np.linalg.norm(ref))

    eta = cfg.learning_rate
    T = int(cfg.total_steps)
    X, y = ds.X, ds.y
    Xy = X * y[:, None]
    w = np.array(init.w, dtype=np.float64)
    b = float(init.b)
    kind = cfg.loss_kind
    learn_b = cfg.bias_learnable

    q_names = list(cfg.eval_sets)
    adv_target = cfg.adversarial_target
    if adv_target is not None:
        q_names.append("adv")
    store_w = ds.dim <= SNAPSHOT_DIM_LIMIT
    trace = TrainTrace(q_names, ds.dim, store_w=store_w)
    ckpts = set() if store_w else checkpoint_steps(T, cfg.log_every)
    trace.meta.update({"clamp_trips": 0, "eta": eta, "T": T, "loss_kind": kind})
    warn = cfg.nr2_warning(ds) if len(ds) else None
    if warn:
        trace.meta["warning"] = warn
    writer = TraceWriter(csv_path, trace) if csv_path is not None else None

    def log(t, loss):
        nw = float(np.linalg.norm(w))
        cos = float(w @ ref / (nw * ref_norm)) if nw > 0 and ref_norm > 0 else 0.0
        cos = min(1.0, max(-1.0, cos))
        P = _accuracy_raw(w, b, X, y) if len(ds) else float("nan")
        Q = {n: _accuracy_raw(w, b, es.X, es.y) for n, es in cfg.eval_sets.items()}
        if adv_target is not None:
            model = LinearModel(w, b, learn_b)
            Q["adv"] = adversarial_accuracy(model, cfg.eval_sets[adv_target], cfg.adversarial_eval)
        trace.append(t, b, nw, cos, loss, P, Q, w=w if store_w else None)
        if t in ckpts:
            trace.checkpoints[t] = w.copy()
        if writer is not None:
            writer.write_row(len(trace) - 1)

    try:
        margins = Xy @ w + y * b
        loss_i, dl, trips = _loss_terms(margins, kind)
        log(0, float(loss_i.sum()))
        every = cfg.log_every
        for t in range(1, T + 1):
            dl, trips = _dloss(margins, kind)
            gw = Xy.T @ dl
            gb = float(y @ dl) if learn_b else 0.0
            with np.errstate(over="ignore"):   # an overflowing norm is caught just below
                gnorm = math.sqrt(float(gw @ gw) + gb * gb)
            if not eta * gnorm <= DIVERGENCE_LIMIT:
                raise DivergenceError(f"eta*|grad| = {eta * gnorm:.3g} at step {t}")
            trace.meta["clamp_trips"] += trips
            w -= eta * gw
            if learn_b:
                b -= eta * gb
            margins = Xy @ w + y * b
            if t % every == 0 or t == T:
                loss_i, _, _ = _loss_terms(margins, kind)
                log(t, float(loss_i.sum()))
                if progress and t % (every * 1000) == 0:
                    print(f"  step {t}/{T}  b={b:.4g} |w|={np.linalg.norm(w):.4g}",
                          file=sys.stderr)
    finally:
        if writer is not None:
            writer.close()
    trace.meta["final_w"] = w.tolist()
    trace.meta["final_b"] = b
    return trace


def fill_residuals(trace: TrainTrace, w_hat: np.ndarray) -> float:
    """Fill ``rho_norm = |w(t) - w_hat log t|`` for ``t >= 1`` entries.

    Returns the empirical bound ``B_hat``: the largest residual over the last
    half (by entry count) of the available snapshots.
    """
    w_hat = np.asarray(w_hat, dtype=float)
    t = trace.t
    if trace.store_w:
        W = trace.W
        have = np.ones(len(t), dtype=bool)
    else:
        if not trace.checkpoints:
            raise LookupError("trace has no w snapshots to compute residuals from")
        W = np.full((len(t), trace.dim), np.nan)
        have = np.zeros(len(t), dtype=bool)
        for i, ti in enumerate(t):
            if int(ti) in trace.checkpoints:
                W[i] = trace.checkpoints[int(ti)]
                have[i] = True
    rho = np.full(len(t), np.nan)
    ok = have & (t >= 1)
    rho[ok] = np.linalg.norm(W[ok] - np.outer(np.log(t[ok]), w_hat), axis=1)
    trace.set_rho(rho)
    vals = rho[ok]
    if len(vals) == 0:
        return float("nan")
    return float(np.max(vals[len(vals) // 2:]))
