"""Nonnegative log-ratio regression of energy coefficients.

Minimizes ``J(k) = sum_i (log(x_i . k) - log E_i)^2`` over ``k >= 0``. The
squared log ratio treats a 30 kJ run and a 20 MJ run alike, which plain least
squares would not.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .energy_model import EnergyCoefficients, coefficient_names
from .errors import DegenerateDesign, DegenerateRow, InvalidMeasurement

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-8  # projected-gradient norm, scaled variables
    max_iter: int = 2000
    n_starts: int = 3
    seed: int = 0
    ridge: float = 1e-9
    rank_rtol: float = 1e-10
    armijo: float = 1e-4


@dataclass(frozen=True)
class FitProblem:
    rows: np.ndarray
    measured: np.ndarray
    labels: tuple[str, ...]
    run_ids: tuple = ()

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        measured = np.array(self.measured, dtype=float)
        rows.setflags(write=False)
        measured.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "measured", measured)
        object.__setattr__(self, "labels", tuple(self.labels))
        if rows.ndim != 2 or rows.shape[1] != 4 + 2 * len(self.labels):
            raise ValueError(f"rows must be (N, {4 + 2 * len(self.labels)}), got {rows.shape}")
        if measured.shape != (rows.shape[0],):
            raise ValueError("need one measured energy per row")
        if np.any(rows < 0) or not np.all(np.isfinite(rows)):
            raise ValueError("design rows must be finite and nonnegative")
        for i, e in enumerate(measured):
            if not (np.isfinite(e) and e > 0):
                rid = self.run_ids[i] if self.run_ids else i
                raise InvalidMeasurement(f"run {rid}: measured energy {e} is not positive", run_id=rid)

    @property
    def names(self) -> list[str]:
        return coefficient_names(self.labels)

    def row_name(self, i):
        return self.run_ids[i] if self.run_ids else i


@dataclass
class FitResult:
    coefficients: EnergyCoefficients
    mean_abs_rel_error: float
    rms_log_ratio: float
    iterations: int
    converged: bool
    objective: float
    supported: np.ndarray
    history: list[float] = field(default_factory=list, repr=False)

    def predict(self, rows) -> np.ndarray:
        return np.asarray(rows, dtype=float) @ self.coefficients.as_vector()


def error_metrics(predicted, measured) -> tuple[float, float]:
    """(mean |pred/meas - 1|, RMS of log(pred/meas))."""
    ratio = np.asarray(predicted, dtype=float) / np.asarray(measured, dtype=float)
    with np.errstate(divide="ignore"):
        logr = np.log(ratio)
    return float(np.mean(np.abs(ratio - 1))), float(np.sqrt(np.mean(logr**2)))


class _LogObjective:
    def __init__(self, X, logE, shift):
        self.X = X
        self.logE = logE
        self.shift = shift

    def value(self, u):
        r = self.X @ u + self.shift
        if np.any(r <= 0):
            return np.inf
        return float(np.sum((np.log(r) - self.logE) ** 2))

    def parts(self, u):
        r = self.X @ u + self.shift
        res = np.log(r) - self.logE
        jac = self.X / r[:, None]
        return float(res @ res), 2 * jac.T @ res, jac, res


def _check_rank(Xs, names, rtol):
    _, sv, vt = np.linalg.svd(Xs, full_matrices=False)
    if sv.size == 0 or sv[-1] <= rtol * sv[0]:
        null = vt[sv <= rtol * sv[0]] if sv.size else vt
        involved = sorted({names[j] for v in null for j in np.flatnonzero(np.abs(v) > 1e-3)})
        raise DegenerateDesign(
            "design matrix is rank deficient; these coefficients cannot be separated: "
            + ", ".join(involved),
            names=involved,
        )


def _projected_gradient_norm(u, g):
    return float(np.linalg.norm(u - np.maximum(u - g, 0.0)))


def _minimize(obj: _LogObjective, u0, cfg: FitConfig):
    """Two-metric projected Gauss-Newton with Armijo backtracking on the
    projection arc. Bound-active coordinates take plain gradient steps."""
    u = np.maximum(u0, 0.0)
    J, g, jac, _ = obj.parts(u)
    history = [J]
    lam = 1e-8
    for it in range(1, cfg.max_iter + 1):
        pg = _projected_gradient_norm(u, g)
        if pg <= cfg.tol:
            return u, history, it - 1, True
        eps_active = min(1e-12, pg)
        active = (u <= eps_active) & (g > 0)
        free = ~active
        d = np.zeros_like(u)
        if free.any():
            H = 2 * jac[:, free].T @ jac[:, free]
            H[np.diag_indices_from(H)] *= 1 + lam
            H[np.diag_indices_from(H)] += lam * np.trace(H) / H.shape[0] + 1e-300
            try:
                d[free] = -np.linalg.solve(H, g[free])
            except np.linalg.LinAlgError:
                d[free] = -g[free]
        d[active] = -g[active]
        if g @ d >= 0:
            d = -g

        alpha, accepted = 1.0, False
        for _ in range(60):
            trial = np.maximum(u + alpha * d, 0.0)
            Jt = obj.value(trial)
            if Jt <= J - cfg.armijo * (g @ (u - trial)) and Jt <= J:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # fall back to a projected steepest-descent step
            alpha = 1.0 / max(np.linalg.norm(g), 1e-300)
            for _ in range(200):
                trial = np.maximum(u - alpha * g, 0.0)
                Jt = obj.value(trial)
                if Jt <= J - cfg.armijo * (g @ (u - trial)) and Jt <= J:
                    accepted = True
                    break
                alpha *= 0.5
        if not accepted:
            return u, history, it, _projected_gradient_norm(u, g) <= cfg.tol
        lam = max(lam * 0.3, 1e-12) if alpha == 1.0 else min(lam * 10, 1.0)
        u = trial
        J, g, jac, _ = obj.parts(u)
        history.append(J)
    return u, history, cfg.max_iter, _projected_gradient_norm(u, g) <= cfg.tol


def fit(problem: FitProblem, config: FitConfig | None = None) -> FitResult:
    cfg = config or FitConfig()
    X, E = problem.rows, problem.measured
    names = problem.names

    zero_rows = np.flatnonzero(~np.any(X > 0, axis=1))
    if zero_rows.size:
        i = int(zero_rows[0])
        raise DegenerateRow(
            f"row {problem.row_name(i)} predicts zero energy for every nonnegative k", row=problem.row_name(i)
        )
    supported = np.any(X > 0, axis=0)
    n_free = int(supported.sum())
    if X.shape[0] < n_free:
        warnings.warn(f"{X.shape[0]} rows for {n_free} free coefficients; fit is underdetermined", stacklevel=2)

    colmax = X[:, supported].max(axis=0)
    Xs = X[:, supported] / colmax
    scale = float(np.exp(np.mean(np.log(E))))
    Es = E / scale
    _check_rank(Xs, [n for n, s in zip(names, supported) if s], cfg.rank_rtol)

    # warm start: nonnegative least squares on the relative (un-logged) residuals
    u_ws, _ = nnls(Xs / Es[:, None], np.ones_like(Es), maxiter=50 * n_free)
    if np.any(Xs @ u_ws <= 0):
        u_ws = np.maximum(u_ws, 1e-12)
    shift = np.where(Xs @ u_ws > 1e-12, 0.0, cfg.ridge * Xs[:, 0] if supported[0] else cfg.ridge)
    obj = _LogObjective(Xs, np.log(Es), shift)

    rng = np.random.default_rng(cfg.seed)
    starts = [u_ws] + [u_ws * np.exp(rng.normal(0.0, 1.0, u_ws.shape)) for _ in range(cfg.n_starts - 1)]
    best = None
    for s in starts:
        u, hist, iters, conv = _minimize(obj, s, cfg)
        if best is None or hist[-1] < best[1][-1]:
            best = (u, hist, iters, conv)
    u, hist, iters, conv = best

    k = np.zeros(X.shape[1])
    k[supported] = u * scale / colmax
    coeffs = EnergyCoefficients.from_vector(k, problem.labels)
    pred = X @ k
    mare, rms = error_metrics(pred, E)
    if not conv:
        log.warning("fit stopped after %d iterations without meeting tol=%g", iters, cfg.tol)
    return FitResult(
        coefficients=coeffs,
        mean_abs_rel_error=mare,
        rms_log_ratio=rms,
        iterations=iters,
        converged=conv,
        objective=hist[-1],
        supported=supported,
        history=hist,
    )


def holdout_split(n: int, frac: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, holdout) index split."""
    if not 0 <= frac < 1:
        raise ValueError("holdout fraction must be in [0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(frac * n))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])
