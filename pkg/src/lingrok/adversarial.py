"""l_inf PGD attack on a linear model and its closed-form counterpart."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .types import Dataset, LinearModel, PgdConfig, SpecError, seeded_rng


def _bounds(cfg: PgdConfig, d: int):
    lo = np.broadcast_to(np.asarray(cfg.clip_lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(cfg.clip_hi, dtype=float), (d,))
    return lo, hi


def pgd_attack(model: LinearModel, ds: Dataset, cfg: PgdConfig) -> np.ndarray:
    """Perturbed copy of ``ds.X`` after ``cfg.iters`` signed-gradient ascent steps.

    Each step ascends the per-example logistic loss, projects back into the
    l_inf ball of radius ``eps_adv`` around the clean point, then clips to the
    data box.  ``sign(0) = 0``, so coordinates with zero gradient stay put.
    """
    if model.dim != ds.dim:
        raise SpecError("model and dataset dimensions differ", "dim")
    X0 = ds.X
    lo, hi = _bounds(cfg, ds.dim)
    if cfg.random_start:
        rng = seeded_rng(cfg.seed)
        X = np.clip(X0 + rng.uniform(-cfg.eps_adv, cfg.eps_adv, size=X0.shape), lo, hi)
    else:
        X = np.array(X0, dtype=float)
    y = ds.y[:, None]
    w = model.w
    for _ in range(cfg.iters):
        m = ds.y * (X @ w + model.b)
        # d/dx log(1 + exp(-m)) = -sigmoid(-m) * y * w; sigmoid(-m) is positive
        # in exact arithmetic, so an underflow is floored to keep the direction
        s = np.maximum(expit(-m), np.finfo(float).tiny)
        g = (-s)[:, None] * y * w[None, :]
        X = X + cfg.step * np.sign(g)
        X = np.clip(X, X0 - cfg.eps_adv, X0 + cfg.eps_adv)
        X = np.clip(X, lo, hi)
    return X


def linear_pgd_oracle(model: LinearModel, ds: Dataset, cfg: PgdConfig) -> np.ndarray:
    """Exact attack for a linear model: move every coordinate by ``eps_adv``
    against the label along ``sign(w)``, then clip to the box."""
    if cfg.random_start:
        raise SpecError("the closed form needs random_start = False", "random_start")
    lo, hi = _bounds(cfg, ds.dim)
    X = ds.X - cfg.eps_adv * ds.y[:, None] * np.sign(model.w)[None, :]
    return np.clip(X, lo, hi)


def adversarial_accuracy(model: LinearModel, ds: Dataset, cfg: PgdConfig) -> float:
    """Accuracy on the PGD-perturbed set."""
    if len(ds) == 0:
        raise ValueError("adversarial accuracy of an empty dataset is undefined")
    Xa = pgd_attack(model, ds, cfg)
    pred = np.where(Xa @ model.w + model.b > 0.0, 1.0, -1.0)
    return float(np.mean(pred == ds.y))
