"""Synthetic separable datasets: standard, concentrated and planted families.

All generators are rejection samplers over the uniform law on the box
``[-box, box]^d``.  One proposal stream feeds both classes: each batch of
proposals is drawn, projected on ``w_true`` and split into the positive and
negative acceptance regions.  Batches have a fixed size, so the output is a
pure function of the spec.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .types import Dataset, DatasetSpec, InfeasibleSpecError, SpecError, seeded_rng

BATCH = 50_000
PROBE_PROPOSALS = 100_000
MIN_ACCEPTANCE = 1e-6
MAX_PROPOSALS_PER_POINT = 10_000_000
MARGIN_GAP = 0.5          # population clearance above gamma/2 for planted sets
PLANE_LIFT = 1e-9         # relative lift of planted points off the exact margin plane
PLANE_SLAB = 1e-3         # slab half-width (relative to box) used to seed planted points


def _rejection(rng, spec: DatasetSpec, n_pos: int, n_neg: int, pos_ok, neg_ok):
    """Draw ``n_pos``/``n_neg`` points accepted by the two projection predicates."""
    d, box = spec.dim, spec.box_halfwidth
    u = np.asarray(spec.w_true)
    pos, neg = [], []
    got_pos = got_neg = 0
    proposals = 0
    cap = MAX_PROPOSALS_PER_POINT * max(1, n_pos + n_neg)
    while got_pos < n_pos or got_neg < n_neg:
        Xb = rng.uniform(-box, box, size=(BATCH, d))
        p = Xb @ u
        if got_pos < n_pos:
            acc = Xb[pos_ok(p)][: n_pos - got_pos]
            pos.append(acc)
            got_pos += len(acc)
        if got_neg < n_neg:
            acc = Xb[neg_ok(p)][: n_neg - got_neg]
            neg.append(acc)
            got_neg += len(acc)
        proposals += BATCH
        if proposals == PROBE_PROPOSALS:
            # an empty class after the probe means acceptance < 1e-5 there;
            # estimate it from the first proposals and refuse hopeless specs
            for need, got in ((n_pos, got_pos), (n_neg, got_neg)):
                if need > 0 and got / proposals < MIN_ACCEPTANCE:
                    raise InfeasibleSpecError(
                        f"acceptance probability below {MIN_ACCEPTANCE:g} after "
                        f"{proposals} proposals (kind={spec.kind}, gamma={spec.gamma:g})")
        if proposals >= cap:
            raise InfeasibleSpecError(f"rejection sampling exceeded {cap} proposals")
    empty = np.empty((0, d))
    return (np.concatenate(pos) if pos else empty), (np.concatenate(neg) if neg else empty)


def _assemble(spec, parts, meta=None) -> Dataset:
    X = np.concatenate([p for p, _ in parts]) if parts else np.empty((0, spec.dim))
    y = np.concatenate([np.full(len(p), lab) for p, lab in parts]) if parts else np.empty(0)
    return Dataset(X.reshape(-1, spec.dim), y, spec=spec, meta=meta or {})


def gen_standard(spec: DatasetSpec) -> Dataset:
    """Uniform box points with ``|w_true.x| >= gamma/2``, labeled by side."""
    if spec.kind != "standard":
        raise SpecError("gen_standard needs kind='standard'", "kind")
    half = spec.gamma / 2
    n_pos, n_neg = spec.class_counts
    rng = seeded_rng(spec.seed)
    P, N = _rejection(rng, spec, n_pos, n_neg, lambda p: p >= half, lambda p: p <= -half)
    return _assemble(spec, [(P, 1.0), (N, -1.0)])


def gen_concentrated(spec: DatasetSpec) -> Dataset:
    """Uniform box points inside the band ``gamma/2 <= |w_true.x| <= alpha*gamma``."""
    if spec.kind != "concentrated":
        raise SpecError("gen_concentrated needs kind='concentrated'", "kind")
    lo, hi = spec.gamma / 2, spec.alpha_sens * spec.gamma
    n_pos, n_neg = spec.class_counts
    rng = seeded_rng(spec.seed)
    P, N = _rejection(rng, spec, n_pos, n_neg,
                      lambda p: (p >= lo) & (p <= hi), lambda p: (p <= -lo) & (p >= -hi))
    return _assemble(spec, [(P, 1.0), (N, -1.0)])


def _onto_plane(X: np.ndarray, u: np.ndarray, level: float) -> np.ndarray:
    """Project rows onto ``u.x = level`` and nudge until ``sign*u.x >= |level|``.

    The target sits a relative 1e-9 outside ``level``: coordinates of size
    ``box`` carry dot-product rounding far above one ulp of ``level``.
    """
    level = level * (1 + PLANE_LIFT)
    X = X + np.outer(level - X @ u, u)
    sign = 1.0 if level > 0 else -1.0
    for _ in range(8):
        deficit = abs(level) - sign * (X @ u)
        short = deficit > 0
        if not short.any():
            break
        X[short] += sign * np.outer(deficit[short] + abs(level) * 2.0 ** -50, u)
    return X


def _plane_points(rng, spec: DatasetSpec, count: int, level: float) -> np.ndarray:
    """``count`` points on ``w_true.x = level``, laterally uniform in the box slice."""
    d, box = spec.dim, spec.box_halfwidth
    u = np.asarray(spec.w_true)
    h = PLANE_SLAB * box
    out, got, proposals = [], 0, 0
    while got < count:
        Xb = rng.uniform(-box, box, size=(BATCH, d))
        Xb = Xb[np.abs(Xb @ u - level) <= h]
        Xb = _onto_plane(Xb, u, level)
        Xb = Xb[np.all(np.abs(Xb) <= box, axis=1)][: count - got]
        out.append(Xb)
        got += len(Xb)
        proposals += BATCH
        if proposals == PROBE_PROPOSALS and got == 0:
            raise InfeasibleSpecError("margin planes do not meet the sampling box")
        if proposals >= MAX_PROPOSALS_PER_POINT * max(1, count):
            raise InfeasibleSpecError("planted sampling exceeded the proposal cap")
    return np.concatenate(out) if out else np.empty((0, d))


def _hulls_intersect(A: np.ndarray, B: np.ndarray) -> bool:
    """LP feasibility of a common point of conv(A) and conv(B)."""
    na, nb = len(A), len(B)
    d = A.shape[1]
    A_eq = np.zeros((d + 2, na + nb))
    A_eq[:d, :na] = A.T
    A_eq[:d, na:] = -B.T
    A_eq[d, :na] = 1.0
    A_eq[d + 1, na:] = 1.0
    b_eq = np.r_[np.zeros(d), 1.0, 1.0]
    res = linprog(np.zeros(na + nb), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 0


def gen_planted(spec: DatasetSpec) -> Dataset:
    """Planted support vectors on the margin planes plus a cleared population.

    ``s+`` points sit on ``w_true.x = gamma/2`` and ``s-`` on ``-gamma/2``.
    Population points need ``y w_true.x >= (1 + MARGIN_GAP) gamma/2``.  The
    planted sets are made to have intersecting lateral convex hulls (otherwise
    a tilted separator would have a larger margin); when they do not, the last
    planted point of the smaller class is moved to the lateral mean of the
    other class.  Output order: planted+, population+, planted-, population-.
    """
    if spec.kind != "planted":
        raise SpecError("gen_planted needs kind='planted'", "kind")
    if spec.planted_support_counts is None:
        raise SpecError("planted datasets need planted_support_counts", "planted_support_counts")
    s_pos, s_neg = spec.planted_support_counts
    n_pos, n_neg = spec.class_counts
    if s_pos < 1 or s_neg < 1 or s_pos > n_pos or s_neg > n_neg:
        raise SpecError("need 1 <= planted counts <= class counts", "planted_support_counts")
    half = spec.gamma / 2
    clear = half * (1 + MARGIN_GAP)
    u = np.asarray(spec.w_true)
    rng = seeded_rng(spec.seed)
    P, N = _rejection(rng, spec, n_pos - s_pos, n_neg - s_neg,
                      lambda p: p >= clear, lambda p: p <= -clear)
    SP = _plane_points(rng, spec, s_pos, half)
    SN = _plane_points(rng, spec, s_neg, -half)
    lat_p = SP - np.outer(SP @ u, u)
    lat_n = SN - np.outer(SN @ u, u)
    moved = None
    if spec.dim > 1 and not _hulls_intersect(lat_p, lat_n):
        if s_pos <= s_neg:
            SP[-1] = _onto_plane((lat_n.mean(axis=0) + half * u)[None, :], u, half)[0]
            moved = s_pos - 1
        else:
            SN[-1] = _onto_plane((lat_p.mean(axis=0) - half * u)[None, :], u, -half)[0]
            moved = n_pos + s_neg - 1
        if np.any(np.abs(SP) > spec.box_halfwidth) or np.any(np.abs(SN) > spec.box_halfwidth):
            raise InfeasibleSpecError("hull repair moved a planted point outside the box")
    planted = list(range(s_pos)) + list(range(n_pos, n_pos + s_neg))
    meta = {"planted_indices": planted, "hull_repair_index": moved}
    return _assemble(spec, [(SP, 1.0), (P, 1.0), (SN, -1.0), (N, -1.0)], meta)


def generate(spec: DatasetSpec) -> Dataset:
    """Dispatch on ``spec.kind``."""
    return {"standard": gen_standard, "concentrated": gen_concentrated,
            "planted": gen_planted}[spec.kind](spec)


def verify_margin(ds: Dataset) -> dict:
    """Recompute ``y w_true.x`` and list indices below ``gamma/2``."""
    if ds.spec is None:
        raise SpecError("verify_margin needs a dataset spec", "spec")
    u = np.asarray(ds.spec.w_true)
    m = ds.y * (ds.X @ u) if len(ds) else np.empty(0)
    half = ds.spec.gamma / 2
    return {
        "min_margin": float(m.min()) if len(m) else float("inf"),
        "max_margin": float(m.max()) if len(m) else float("-inf"),
        "violations": [int(i) for i in np.flatnonzero(m < half)],
        "half_gamma": half,
    }
