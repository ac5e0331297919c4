"""Rank-constrained feature extraction by singular value projection.

The objective over a ``p x m`` matrix ``X`` (one row per alternate) is

    h(X) = (1/p) sum_i gamma_i (<pi_i, X_i> - log <pi0, exp(X_i)>)

maximized subject to ``rank(X) <= d`` by alternating a gradient step with a
truncated-SVD projection onto the rank-``d`` matrices.  The right singular
vectors of the solution span the extracted feature class.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mismatched import FeatureBasis, is_minimal
from .prob import DistributionError, as_distribution, kl_divergence, logsumexp

RANK_RTOL = 1e-10


class BasisReducedWarning(UserWarning):
    """The extracted singular vectors contained the constant direction, which was removed."""


@dataclass(frozen=True)
class ObjectiveSpec:
    pi0: np.ndarray
    alternates: np.ndarray
    weights: np.ndarray
    rank_bound: int

    def __post_init__(self):
        pi0 = as_distribution(self.pi0)
        if np.any(pi0 <= 0):
            raise DistributionError("pi0 must have full support")
        alts = np.array([as_distribution(a) for a in self.alternates])
        if alts.ndim != 2 or alts.shape[1] != pi0.size:
            raise DistributionError("alternates must be distributions on the alphabet of pi0")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != alts.shape[0] or np.any(w <= 0):
            raise ValueError("need one positive weight per alternate")
        for i, a in enumerate(alts):
            kl = kl_divergence(a, pi0)
            if not 0 < kl < np.inf:
                raise ValueError(f"alternate {i}: D(pi_i || pi0) = {kl} is not in (0, inf)")
        if not 1 <= self.rank_bound <= min(alts.shape):
            raise ValueError(f"rank bound must lie in 1..min(p, |Z|) = {min(alts.shape)}")
        for arr in (pi0, alts, w):
            arr.flags.writeable = False
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "alternates", alts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def with_inverse_kl_weights(cls, pi0, alternates, rank_bound: int) -> "ObjectiveSpec":
        """Weights ``1/D(pi_i || pi0)``, which cap the objective at 1."""
        w = [1.0 / kl_divergence(a, pi0) for a in alternates]
        return cls(pi0, alternates, w, rank_bound)

    @property
    def p(self) -> int:
        return self.alternates.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.pi0.size

    def log_ratios(self) -> np.ndarray:
        """Unconstrained maximizer: rows ``log(pi_i / pi0)``."""
        return np.log(self.alternates) - np.log(self.pi0)

    def kl_bound(self) -> float:
        """``(1/p) sum_i gamma_i D(pi_i || pi0)``, the unconstrained optimum."""
        kls = np.array([kl_divergence(a, self.pi0) for a in self.alternates])
        return float(self.weights @ kls / self.p)


def _check_shape(spec: ObjectiveSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != spec.alternates.shape:
        raise ValueError(f"X has shape {x.shape}, expected {spec.alternates.shape}")
    return x


def row_terms(spec: ObjectiveSpec, x) -> np.ndarray:
    """Per-row values ``<pi_i, X_i> - log <pi0, exp(X_i)>`` (unweighted)."""
    x = _check_shape(spec, x)
    return np.sum(spec.alternates * x, axis=1) - logsumexp(np.log(spec.pi0) + x, axis=1)


def objective_h(spec: ObjectiveSpec, x) -> float:
    return float(spec.weights @ row_terms(spec, x) / spec.p)


def gradient_h(spec: ObjectiveSpec, x) -> np.ndarray:
    """Row ``i`` is ``(gamma_i / p) (pi_i - tilt(pi0, X_i))``."""
    x = _check_shape(spec, x)
    logits = np.log(spec.pi0) + x
    tilted = np.exp(logits - logsumexp(logits, axis=1)[:, None])
    return (spec.weights / spec.p)[:, None] * (spec.alternates - tilted)


def lipschitz_constant(spec: ObjectiveSpec) -> float:
    return float(np.max(spec.weights) / spec.p)


def svp_project(y, d: int) -> np.ndarray:
    """Best Frobenius-norm approximation of ``y`` with rank at most ``d``.

    Singular values come out of LAPACK in nonincreasing order; on a tie at
    the cut the earlier one is kept.
    """
    if d < 1:
        raise ValueError("rank bound must be at least 1")
    y = np.asarray(y, dtype=float)
    if d >= min(y.shape):
        return y.copy()
    u, s, vt = np.linalg.svd(y, full_matrices=False)
    return (u[:, :d] * s[:d]) @ vt[:d]


@dataclass(frozen=True)
class SvpConfig:
    """``step=None`` means ``1/L``; ``init`` is ``"zero"``, ``"warm_start"`` or a matrix."""

    step: float | None = None
    stop_eps: float = 1e-8
    max_iter: int = 5000
    init: object = "warm_start"

    def __post_init__(self):
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.stop_eps <= 0 or self.max_iter < 1:
            raise ValueError("stop_eps must be positive and max_iter >= 1")
        if isinstance(self.init, str) and self.init not in ("zero", "warm_start"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        init = self.init if isinstance(self.init, str) else np.asarray(self.init).tolist()
        return {"step": self.step, "stop_eps": self.stop_eps, "max_iter": self.max_iter, "init": init}

    @classmethod
    def from_dict(cls, obj: dict) -> "SvpConfig":
        step = obj.get("step")
        if step == "auto":
            step = None
        init = obj.get("init", "warm_start")
        if not isinstance(init, str):
            init = np.array(init, dtype=float)
        return cls(
            step=None if step is None else float(step),
            stop_eps=float(obj.get("stop_eps", 1e-8)),
            max_iter=int(obj.get("max_iter", 5000)),
            init=init,
        )


@dataclass
class SvpResult:
    x_star: np.ndarray
    objective: float
    iterations: int
    converged: bool
    step_norms: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    def monotonicity_violations(self, tol: float = 1e-12) -> int:
        """Number of iterations where the objective went down (diagnostic only)."""
        h = np.asarray(self.objectives)
        return int(np.sum(np.diff(h) < -tol))

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "step_norms": list(map(float, self.step_norms)),
            "x_star": self.x_star.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def warm_start(spec: ObjectiveSpec) -> np.ndarray:
    # row constants do not change h, so centered log-ratios keep the whole
    # iteration orthogonal to the constant function
    w = spec.log_ratios()
    w = w - w.mean(axis=1, keepdims=True)
    return svp_project(w, spec.rank_bound)


def initial_point(spec: ObjectiveSpec, cfg: SvpConfig) -> np.ndarray:
    if isinstance(cfg.init, str):
        if cfg.init == "zero":
            return np.zeros(spec.alternates.shape)
        return warm_start(spec)
    x0 = _check_shape(spec, cfg.init)
    return svp_project(x0, spec.rank_bound)


def svp_solve(spec: ObjectiveSpec, cfg: SvpConfig | None = None) -> SvpResult:
    cfg = cfg or SvpConfig()
    lip = lipschitz_constant(spec)
    alpha = 1.0 / lip if cfg.step is None else cfg.step
    if not 0 < alpha < 2.0 / lip:
        raise ValueError(f"step {alpha} outside (0, 2/L) = (0, {2.0 / lip})")
    x = initial_point(spec, cfg)
    norms: list[float] = []
    objectives = [objective_h(spec, x)]
    converged = False
    k = 0
    while k < cfg.max_iter:
        x_next = svp_project(x + alpha * gradient_h(spec, x), spec.rank_bound)
        k += 1
        step = float(np.linalg.norm(x_next - x))
        x = x_next
        norms.append(step)
        objectives.append(objective_h(spec, x))
        if step <= cfg.stop_eps:
            converged = True
            break
    return SvpResult(
        x_star=x,
        objective=objectives[-1],
        iterations=k,
        converged=converged,
        step_norms=norms,
        objectives=objectives,
    )


def extract_basis(x_star, d: int) -> FeatureBasis:
    """Right singular vectors of ``x_star`` with nonzero singular values (at most ``d``).

    If these include the constant direction the basis would not be minimal;
    the constant component is projected out, the remainder re-orthonormalized
    and a :class:`BasisReducedWarning` issued.
    """
    x = np.asarray(x_star, dtype=float)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    if s.size == 0 or s[0] <= 0 or not np.isfinite(s[0]):
        raise ValueError("x_star is numerically zero; no basis to extract")
    keep = min(d, int(np.sum(s > RANK_RTOL * s[0])))
    rows = vt[:keep]
    if is_minimal(rows):
        return FeatureBasis(rows)
    m = rows.shape[1]
    centered = rows - rows.mean(axis=1, keepdims=True)
    _, sc, vc = np.linalg.svd(centered, full_matrices=False)
    kept = vc[sc > 1e-8 * max(1.0, sc[0] if sc.size else 0.0)]
    warnings.warn(
        f"extracted directions included the constant function; reduced basis from "
        f"{keep} to {kept.shape[0]} rows",
        BasisReducedWarning,
        stacklevel=2,
    )
    if kept.shape[0] == 0:
        return FeatureBasis.empty(m)
    return FeatureBasis(kept)
