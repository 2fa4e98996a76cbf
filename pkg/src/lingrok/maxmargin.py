"""Hard-margin SVM, its duals, and the support-vector asymmetry quantities.

The SVM is solved in augmented coordinates ``z_i = y_i (x_i, 1)`` so that
``min |w|^2 + b^2  s.t.  z_i . (w, b) >= 1`` becomes a norm-minimization
over a polyhedron in ``d + 1`` unknowns.  Because that dimension is small, a
primal active-set method reaches the exact optimum in finitely many steps;
the duals then come from a nonnegative least-squares fit of the stationarity
condition on the active set.

``compute_w_tilde`` solves ``eta * exp(-z_s . omega~) = alpha_s`` for the
limit of the residual ``rho(t)``.  When the support vectors outnumber the
dimension the duals are not unique; gradient descent then picks the duals
that minimize the convex potential ``eta * sum_s exp(-z_s . omega) +
omega_hat . omega`` and those are what ``compute_w_tilde`` returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, nnls

from .types import Dataset, LingrokError, NumericError

ACTIVITY_TOL = 1e-5
SPAN_TOL = 1e-6
DESK_CAP = 100_000


class SeparabilityError(LingrokError):
    """The dataset admits no separating hyperplane."""


class DegenerateDualError(LingrokError):
    """A support vector carries a zero dual, so its log-relation is undefined."""


class OneSidedSupportError(LingrokError):
    """All support vectors are in one class; delta is undefined."""


@dataclass(frozen=True)
class SvmSolution:
    """Hard-margin solution plus the derived late-time quantities.

    ``duals`` is aligned with ``support_indices``.  ``support_X``/``support_y``
    keep the support points so the solution is self-contained.  ``b_tilde`` is
    the bias component of the residual limit (augmented problems only).
    """

    w_svm: np.ndarray
    b_svm: float
    support_indices: tuple[int, ...]
    duals: np.ndarray
    support_X: np.ndarray
    support_y: np.ndarray
    with_bias: bool = True
    w_tilde: np.ndarray | None = None
    b_tilde: float | None = None
    A_plus: float | None = None
    A_minus: float | None = None
    delta: float | None = None
    b_inf: float | None = None
    w_tilde_residual: float | None = None
    solver_duals: np.ndarray | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def class_split(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        pos = tuple(i for i, yy in zip(self.support_indices, self.support_y) if yy > 0)
        neg = tuple(i for i, yy in zip(self.support_indices, self.support_y) if yy < 0)
        return pos, neg

    @property
    def omega(self) -> np.ndarray:
        """Primal solution in solver coordinates: ``(w, b)`` or ``w``."""
        return np.r_[self.w_svm, self.b_svm] if self.with_bias else np.array(self.w_svm)

    def support_Z(self) -> np.ndarray:
        return _augment(self.support_X, self.support_y, self.with_bias)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "w_svm": arr(self.w_svm), "b_svm": self.b_svm,
            "support_indices": sorted(int(i) for i in self.support_indices),
            "duals": arr(self.duals), "support_X": arr(self.support_X),
            "support_y": arr(self.support_y), "with_bias": self.with_bias,
            "class_split": [list(self.class_split[0]), list(self.class_split[1])],
            "w_tilde": arr(self.w_tilde), "b_tilde": self.b_tilde,
            "A_plus": self.A_plus, "A_minus": self.A_minus,
            "delta": self.delta, "b_inf": self.b_inf,
            "w_tilde_residual": self.w_tilde_residual,
            "solver_duals": arr(self.solver_duals), "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmSolution":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)
        return cls(
            w_svm=arr(d["w_svm"]), b_svm=float(d["b_svm"]),
            support_indices=tuple(int(i) for i in d["support_indices"]),
            duals=arr(d["duals"]), support_X=arr(d["support_X"]).reshape(len(d["support_indices"]), -1),
            support_y=arr(d["support_y"]), with_bias=bool(d["with_bias"]),
            w_tilde=arr(d["w_tilde"]), b_tilde=d.get("b_tilde"),
            A_plus=d.get("A_plus"), A_minus=d.get("A_minus"), delta=d.get("delta"),
            b_inf=d.get("b_inf"), w_tilde_residual=d.get("w_tilde_residual"),
            solver_duals=arr(d.get("solver_duals")), warnings=tuple(d.get("warnings", ())),
        )


def _augment(X: np.ndarray, y: np.ndarray, with_bias: bool) -> np.ndarray:
    Z = np.c_[X, np.ones(len(X))] if with_bias else np.array(X, dtype=float)
    return Z * y[:, None]


def _feasible_point(Z: np.ndarray) -> np.ndarray:
    res = linprog(np.zeros(Z.shape[1]), A_ub=-Z, b_ub=-np.ones(len(Z)),
                  bounds=(None, None), method="highs")
    if res.status == 2:
        raise SeparabilityError("dataset is not linearly separable")
    if res.status != 0:
        raise NumericError(f"separability LP failed: {res.message}")
    return res.x


def _min_norm_active_set(Z: np.ndarray, omega: np.ndarray, max_iter: int):
    """Primal active-set method for ``min |omega|^2 s.t. Z omega >= 1``."""
    p = Z.shape[1]
    W: list[int] = []
    scale = 1.0
    for it in range(max_iter):
        scale = max(1.0, float(np.linalg.norm(omega)))
        if W:
            Q, _ = np.linalg.qr(Z[W].T)
            step = -(omega - Q @ (Q.T @ omega))
        else:
            step = -omega
        if np.linalg.norm(step) <= 1e-13 * scale:
            if not W:
                return omega, W, it
            lam, *_ = np.linalg.lstsq(Z[W].T, omega, rcond=None)
            j = int(np.argmin(lam))
            if lam[j] >= -1e-12 * scale:
                return omega, W, it
            W.pop(j)
            continue
        zs = Z @ step
        slack = Z @ omega - 1.0
        cand = zs < -1e-14 * np.linalg.norm(step) * np.linalg.norm(Z, axis=1)
        cand[W] = False
        alpha, block = 1.0, -1
        if cand.any():
            idx = np.flatnonzero(cand)
            ratios = np.maximum(slack[idx], 0.0) / -zs[idx]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(idx[k])
        omega = omega + alpha * step
        if block >= 0 and len(W) < p:
            W.append(block)
    raise NumericError(f"active-set solver did not converge in {max_iter} iterations "
                       f"(|omega|={scale:.3g}, working set {len(W)})")


def solve_hard_margin(ds: Dataset, with_bias: bool = True, cap: int = DESK_CAP) -> SvmSolution:
    """Unique minimizer of ``|w|^2 + b^2`` under ``y_i (w.x_i + b) >= 1``.

    With ``with_bias=False`` the bias is fixed at zero (separator through the
    origin).  Support vectors are the points whose margin is within
    ``ACTIVITY_TOL`` of 1.
    """
    if len(ds) == 0:
        raise SeparabilityError("empty dataset")
    if len(ds) > cap:
        raise ValueError(f"dataset of {len(ds)} points exceeds the desk-scale cap {cap}")
    Z = _augment(ds.X, ds.y, with_bias)
    omega0 = _feasible_point(Z)
    omega, _, _ = _min_norm_active_set(Z, omega0, max_iter=50 * (len(Z) + Z.shape[1]))
    margins = Z @ omega
    S = np.flatnonzero(np.abs(margins - 1.0) <= ACTIVITY_TOL)
    if len(S) == 0:
        raise NumericError("no active constraint at the optimum")
    ZS = Z[S]
    alpha, _ = nnls(ZS.T, omega, maxiter=50 * max(len(S), 10))
    # nnls fixes the positive pattern; re-solve on it for full precision
    pos = alpha > 0
    refit, *_ = np.linalg.lstsq(ZS[pos].T, omega, rcond=None)
    if np.all(refit >= 0):
        alpha = np.zeros(len(S))
        alpha[pos] = refit
    res = float(np.linalg.norm(ZS.T @ alpha - omega))
    if res > 1e-6 * max(1.0, np.linalg.norm(omega)):
        raise NumericError(f"dual stationarity residual {res:.3g} on the active set")
    d = ds.dim
    return SvmSolution(
        w_svm=omega[:d].copy(), b_svm=float(omega[d]) if with_bias else 0.0,
        support_indices=tuple(int(i) for i in S), duals=alpha,
        support_X=np.array(ds.X[S]), support_y=np.array(ds.y[S]), with_bias=with_bias,
        solver_duals=alpha.copy(),
    )


KKT_CHECKS = ("primal_feasibility", "dual_nonnegativity", "stationarity", "complementarity",
              "support_activity")


def kkt_report(sol: SvmSolution, ds: Dataset) -> dict:
    """Residuals of the KKT conditions over the whole dataset.

    ``complementarity`` is ``max_i alpha_i |m_i - 1|`` divided by
    ``max(1, sum alpha)``.  Since ``sum alpha = |omega|^2`` at the optimum this
    is the duality gap relative to the objective; the unscaled value, which
    carries a rounding floor of about ``alpha * 1e-16 * |score|``, is reported
    as ``complementarity_abs``.  Only the names in ``KKT_CHECKS`` are tested.
    """
    Z = _augment(ds.X, ds.y, sol.with_bias)
    omega = sol.omega
    margins = Z @ omega
    ZS = sol.support_Z()
    S = list(sol.support_indices)
    comp = float(np.max(np.abs(sol.duals * (margins[S] - 1.0))))
    return {
        "primal_feasibility": float(max(0.0, 1.0 - margins.min())),
        "dual_nonnegativity": float(max(0.0, -np.min(sol.duals))),
        "stationarity": float(np.linalg.norm(omega - ZS.T @ sol.duals)),
        "complementarity": comp / max(1.0, float(np.sum(sol.duals))),
        "support_activity": float(np.max(np.abs(margins[S] - 1.0))),
        "complementarity_abs": comp,
    }


def _potential_duals(ZS: np.ndarray, omega_hat: np.ndarray, eta: float,
                     tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Minimize ``eta * sum exp(-ZS omega) + omega_hat . omega`` on the row space of ZS."""
    U, s, Vt = np.linalg.svd(ZS, full_matrices=False)
    r = int(np.sum(s > s[0] * 1e-12))
    V = Vt[:r].T
    A = ZS @ V                       # support rows in row-space coordinates
    h = V.T @ omega_hat
    c = np.zeros(r)

    def phi(c):
        with np.errstate(over="ignore"):   # trial steps may overshoot; inf is rejected
            return eta * np.exp(-A @ c).sum() + h @ c

    def grad(c):
        with np.errstate(over="ignore"):
            e = eta * np.exp(-A @ c)
        return h - A.T @ e, e

    f = phi(c)
    g, e = grad(c)
    gn = float(np.linalg.norm(g))
    scale = max(1.0, float(np.linalg.norm(h)))
    stall = 0
    for _ in range(max_iter):
        if gn <= tol * scale:
            return V @ c
        H = (A.T * e) @ A
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        dec = g @ step
        t = 1.0
        while t > 1e-20:
            cn = c - t * step
            fn = phi(cn)
            if np.isfinite(fn):
                gn_new = float(np.linalg.norm(grad(cn)[0]))
                # near the optimum f stops resolving decreases; the gradient
                # norm still does, so either test accepts the step
                if fn <= f - 0.25 * t * dec or gn_new < gn:
                    break
            t *= 0.5
        else:
            break
        stall = stall + 1 if gn_new > 0.5 * gn else 0
        c, f = cn, fn
        g, e = grad(c)
        gn = float(np.linalg.norm(g))
        if stall >= 5 and gn <= 1e-9 * scale:
            return V @ c
    raise DegenerateDualError("dual-selection potential has no finite minimizer; "
                              "some support vector carries a zero dual")


def compute_w_tilde(sol: SvmSolution, eta: float) -> SvmSolution:
    """Solve ``eta * exp(-z_s . omega~) = alpha_s`` on the support set.

    Returns a new solution with ``w_tilde``, ``b_tilde`` and the asymmetry
    fields filled.  When the solver duals leave the system unsolvable (more
    support vectors than dimensions), the duals are reselected by the
    gradient-descent potential and a span warning records the original
    residual.
    """
    ZS = sol.support_Z()
    p = ZS.shape[1]
    warnings = list(sol.warnings)
    alpha = np.asarray(sol.duals, dtype=float)
    unique = np.linalg.matrix_rank(ZS) == len(ZS)
    residual = math.inf
    omega_t = None
    if np.all(alpha > 0):
        rhs = -np.log(alpha / eta)
        omega_t, *_ = np.linalg.lstsq(ZS, rhs, rcond=None)
        residual = float(np.max(np.abs(ZS @ omega_t - rhs)))
    elif unique:
        raise DegenerateDualError("zero dual on a support vector with unique duals")
    if residual > SPAN_TOL:
        warnings.append(f"span-violation: solver duals give residual {residual:.3g}; "
                        "duals reselected by the gradient-descent potential")
        omega_t = _potential_duals(ZS, sol.omega, eta)
        alpha = eta * np.exp(-ZS @ omega_t)
        # the exponentials carry rounding of order 1e-13 relative, which is far
        # above 1e-6 absolute once alpha ~ 1e5; restore exact stationarity by
        # the minimum-norm correction and refit omega~ in log space
        alpha = alpha + np.linalg.pinv(ZS.T) @ (sol.omega - ZS.T @ alpha)
        if np.any(alpha <= 0):
            raise DegenerateDualError("stationarity correction produced a nonpositive dual")
        rhs = -np.log(alpha / eta)
        omega_t, *_ = np.linalg.lstsq(ZS, rhs, rcond=None)
        residual = float(np.max(np.abs(ZS @ omega_t - rhs)))
    d = sol.support_X.shape[1]
    w_t = omega_t[:d]
    b_t = float(omega_t[d]) if p > d else None
    out = replace(sol, w_tilde=w_t, b_tilde=b_t, duals=alpha, w_tilde_residual=residual,
                  warnings=tuple(warnings))
    pos = sol.support_y > 0
    if pos.any() and (~pos).any():
        A_plus = float(np.exp(-(sol.support_X[pos] @ w_t)).sum())
        A_minus = float(np.exp(sol.support_X[~pos] @ w_t).sum())
        delta = math.sqrt(A_minus / A_plus)
        out = replace(out, A_plus=A_plus, A_minus=A_minus, delta=delta, b_inf=-math.log(delta))
    return out


def support_asymmetry(sol: SvmSolution) -> tuple[float, float, float, float]:
    """``(A_plus, A_minus, delta, b_inf)``; needs ``compute_w_tilde`` first."""
    if sol.w_tilde is None:
        raise ValueError("w_tilde not computed; call compute_w_tilde first")
    pos, neg = sol.class_split
    if not pos or not neg:
        raise OneSidedSupportError("support vectors only in one class; delta undefined")
    return sol.A_plus, sol.A_minus, sol.delta, sol.b_inf


def asymmetry_from_sums(A_plus: float, A_minus: float) -> tuple[float, float]:
    """``(delta, b_inf)`` from the two exponential sums."""
    if not (A_plus > 0 and A_minus > 0):
        raise ValueError("A_plus and A_minus must be positive")
    delta = math.sqrt(A_minus / A_plus)
    return delta, -math.log(delta)
