"""Mismatched divergence over a linear function class.

For a basis ``psi`` (rows of a ``d x m`` matrix) the mismatched divergence is

    D_MM(mu || pi) = sup_r  <mu, f_r> - log <pi, exp(f_r)>,   f_r = r @ psi

which is a smooth concave program in ``r``.  It is solved here by a damped
Newton method; the Hessian is minus the covariance of ``psi`` under the
tilted distribution ``tilt(pi, f_r)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from .prob import DistributionError, as_distribution, logsumexp, tilt

MINIMALITY_RTOL = 1e-9


class SmoothingRequiredError(ValueError):
    """``pi`` has a zero where the function class can move mass; smooth ``pi`` first."""


def _rank_with_ones(functions: np.ndarray, rtol: float = MINIMALITY_RTOL) -> int:
    m = functions.shape[1]
    a = np.vstack([np.ones((1, m)), functions])
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


def is_minimal(functions, rtol: float = MINIMALITY_RTOL) -> bool:
    """True iff ``{1, psi_1, ..., psi_d}`` are linearly independent."""
    functions = np.atleast_2d(np.asarray(functions, dtype=float))
    if functions.shape[0] == 0:
        return True
    if functions.shape[0] + 1 > functions.shape[1]:
        return False
    return _rank_with_ones(functions, rtol) == functions.shape[0] + 1


@dataclass(frozen=True)
class FeatureBasis:
    """A minimal set of ``d`` real functions on an alphabet of size ``m``.

    ``functions`` has shape ``(d, m)``; ``d = 0`` is allowed and gives the
    trivial class ``{0}``.
    """

    functions: np.ndarray

    def __post_init__(self):
        f = np.array(self.functions, dtype=float)
        if f.ndim == 1:
            f = f[None, :]
        if f.ndim != 2 or f.shape[1] < 2:
            raise ValueError(f"basis must be a (d, m) matrix with m >= 2, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("basis entries must be finite")
        if not is_minimal(f):
            raise ValueError("basis is not minimal: {1, psi_1, ..., psi_d} are linearly dependent")
        f.flags.writeable = False
        object.__setattr__(self, "functions", f)

    @property
    def d(self) -> int:
        return self.functions.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.functions.shape[1]

    @classmethod
    def empty(cls, alphabet_size: int) -> "FeatureBasis":
        return cls(np.zeros((0, alphabet_size)))

    def to_dict(self) -> dict:
        return {"alphabet_size": self.alphabet_size, "functions": self.functions.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureBasis":
        m = int(obj["alphabet_size"])
        rows = obj["functions"]
        f = np.array(rows, dtype=float).reshape(len(rows), m) if rows else np.zeros((0, m))
        return cls(f)

    @classmethod
    def from_json(cls, text: str) -> "FeatureBasis":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-9
    max_iter: int = 200
    r_max: float = 1e3

    def __post_init__(self):
        if self.grad_tol <= 0 or self.r_max <= 0 or self.max_iter < 1:
            raise ValueError("grad_tol, r_max must be positive and max_iter >= 1")


@dataclass
class MismatchedSolution:
    value: float
    r_star: np.ndarray
    grad_norm: float
    boundary_hit: bool
    iterations: int
    converged: bool = field(default=True)


def _check_reference(pi: np.ndarray, psi: np.ndarray) -> None:
    zero = pi <= 0
    if np.any(zero) and psi.shape[0] and np.any(psi[:, zero] != 0):
        raise SmoothingRequiredError(
            "reference distribution has zero mass where the basis is nonzero; smooth it first"
        )


def _functions(basis) -> np.ndarray:
    if isinstance(basis, FeatureBasis):
        return basis.functions
    return np.atleast_2d(np.asarray(basis, dtype=float))


def _objective(mu, pi, psi, r) -> float:
    f = r @ psi
    with np.errstate(divide="ignore"):
        return float(mu @ f - logsumexp(np.log(pi) + f))


def mismatched_objective(mu, pi, basis, r) -> float:
    """``<mu, f_r> - log <pi, exp(f_r)>`` with ``f_r = sum_i r_i psi_i``."""
    mu = as_distribution(mu)
    pi = as_distribution(pi)
    psi = _functions(basis)
    _check_reference(pi, psi)
    r = np.asarray(r, dtype=float).reshape(psi.shape[0])
    return _objective(mu, pi, psi, r)


def mismatched_gradient(mu, pi, basis, r) -> np.ndarray:
    """Gradient of :func:`mismatched_objective` in ``r``: ``psi @ (mu - tilt(pi, f_r))``."""
    mu = as_distribution(mu)
    pi = as_distribution(pi)
    psi = _functions(basis)
    r = np.asarray(r, dtype=float).reshape(psi.shape[0])
    return psi @ (mu - tilt(pi, r @ psi))


def _ball_step_limit(r, s, r_max) -> float:
    """Largest ``t >= 0`` with ``||r + t s|| <= r_max``."""
    a = s @ s
    b = 2.0 * (r @ s)
    c = r @ r - r_max**2
    disc = max(b * b - 4 * a * c, 0.0)
    return (-b + np.sqrt(disc)) / (2 * a)


def mismatched_divergence(mu, pi, basis, cfg: SolverConfig | None = None) -> MismatchedSolution:
    """Maximize the mismatched objective over ``r``.

    Newton steps on the centered basis with Levenberg damping when the tilted
    covariance is near singular, Armijo backtracking, and a gradient-ascent
    fallback.  ``r`` is confined to the ball ``||r|| <= cfg.r_max``; reaching
    its boundary sets ``boundary_hit`` (the supremum is then approached at
    infinity and ``value`` is the capped objective).
    """
    cfg = cfg or SolverConfig()
    mu = as_distribution(mu)
    pi = as_distribution(pi)
    psi = _functions(basis)
    if psi.shape[1] != pi.size or mu.size != pi.size:
        raise DistributionError("mu, pi and basis must share one alphabet")
    _check_reference(pi, psi)
    d = psi.shape[0]
    if d == 0:
        return MismatchedSolution(0.0, np.zeros(0), 0.0, False, 0)

    # centering changes f_r by a constant, which the objective ignores
    psi_c = psi - (psi @ pi)[:, None]
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    mean_mu = psi_c @ mu

    def evaluate(r):
        logits = log_pi + r @ psi_c
        lse = logsumexp(logits)
        return float(r @ mean_mu - lse), np.exp(logits - lse)

    r = np.zeros(d)
    value, nu = evaluate(r)
    grad = mean_mu - psi_c @ nu
    boundary_hit = False
    converged = False
    it = 0
    while True:
        if np.max(np.abs(grad)) <= cfg.grad_tol:
            converged = True
            break
        if it >= cfg.max_iter:
            break
        it += 1
        mean_nu = psi_c @ nu
        cov = (psi_c * nu) @ psi_c.T - np.outer(mean_nu, mean_nu)
        step = _newton_direction(cov, grad)
        slope = grad @ step
        if not np.isfinite(slope) or slope <= 0:
            step, slope = grad, grad @ grad

        t_cap = _ball_step_limit(r, step, cfg.r_max)
        t = min(1.0, t_cap)
        capped = t_cap <= 1.0
        while t > 1e-14:
            r_new = r + t * step
            v_new, nu_new = evaluate(r_new)
            # slack: near the optimum the predicted gain is below rounding
            if v_new >= value + 1e-4 * t * slope - 4e-16 * max(1.0, abs(value)):
                break
            t *= 0.5
            capped = False
        else:
            # no ascent left at machine precision
            converged = np.max(np.abs(grad)) <= 1e3 * cfg.grad_tol
            break
        # along a direction with negligible curvature (e.g. the supremum sits
        # at infinity) keep doubling the step instead of creeping linearly
        while t >= 1.0 and not capped and v_new - value >= 0.9 * t * slope:
            t2 = min(2.0 * t, t_cap)
            v2, nu2 = evaluate(r + t2 * step)
            if v2 < v_new:
                break
            t, r_new, v_new, nu_new = t2, r + t2 * step, v2, nu2
            capped = t2 >= t_cap
        r, value, nu = r_new, v_new, nu_new
        grad = mean_mu - psi_c @ nu
        if capped:
            boundary_hit = True
            break

    return MismatchedSolution(
        value=max(value, 0.0),
        r_star=r,
        grad_norm=float(np.linalg.norm(grad)),
        boundary_hit=boundary_hit,
        iterations=it,
        converged=bool(converged or boundary_hit),
    )


def _newton_direction(cov: np.ndarray, grad: np.ndarray) -> np.ndarray:
    scale = max(np.trace(cov) / cov.shape[0], 1e-300)
    lam = 0.0
    for _ in range(30):
        try:
            chol = np.linalg.cholesky(cov + lam * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            lam = 1e-12 * scale if lam == 0 else lam * 10
            continue
        diag = np.diag(chol)
        if diag.min() > 1e-8 * diag.max():
            y = np.linalg.solve(chol, grad)
            return np.linalg.solve(chol.T, y)
        lam = 1e-12 * scale if lam == 0 else lam * 10
    return grad


def loglik_basis(alternates, pi0) -> tuple[FeatureBasis, list[int]]:
    """Rows ``log(pi_i / pi0)``, keeping only those that preserve minimality.

    Returns the basis together with the (0-based) indices of the retained
    alternates.
    """
    pi0 = as_distribution(pi0)
    if np.any(pi0 <= 0):
        raise DistributionError("pi0 must have full support")
    rows = []
    for i, a in enumerate(alternates):
        a = as_distribution(a)
        if a.size != pi0.size:
            raise DistributionError("alternates must live on the same alphabet as pi0")
        if np.any(a <= 0):
            # log(0) rows are not finite functions; the class cannot represent them
            raise DistributionError(
                f"alternate {i} has zero entries; log-likelihood ratio is not a finite function"
            )
        rows.append(np.log(a) - np.log(pi0))
    kept: list[int] = []
    kept_rows: list[np.ndarray] = []
    for i, row in enumerate(rows):
        trial = np.array(kept_rows + [row])
        if is_minimal(trial):
            kept.append(i)
            kept_rows.append(row)
    if not kept_rows:
        return FeatureBasis.empty(pi0.size), []
    return FeatureBasis(np.array(kept_rows)), kept


def in_exponential_family(candidate, reference, basis, tol: float = 1e-8) -> bool:
    """Membership of ``candidate`` in the exponential family ``E(reference, span(basis))``.

    Tests whether the centered log-ratio lies within ``tol`` (Euclidean) of
    the span of the centered basis rows.
    """
    candidate = as_distribution(candidate)
    reference = as_distribution(reference)
    if np.any(candidate <= 0) or np.any(reference <= 0):
        raise DistributionError("membership test needs full-support distributions")
    g = np.log(candidate) - np.log(reference)
    g = g - g.mean()
    psi = _functions(basis)
    if psi.shape[0] == 0:
        return bool(np.linalg.norm(g) <= tol)
    a = (psi - psi.mean(axis=1, keepdims=True)).T
    coef, *_ = np.linalg.lstsq(a, g, rcond=None)
    return bool(np.linalg.norm(a @ coef - g) <= tol)
