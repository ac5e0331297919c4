"""Finite-sample Hoeffding and mismatched universal tests.

Both tests threshold a divergence of the empirical distribution from the
null distribution ``pi0``; the mismatched test restricts the variational
supremum to a linear feature class.  :func:`monte_carlo_variance` estimates
the spread of ``n * statistic`` under the null.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .mismatched import FeatureBasis, SolverConfig, mismatched_divergence
from .prob import RngSeed, as_distribution, empirical_from_samples, kl_divergence, sample_iid

H0 = "H0"
H1 = "H1"

VARIANCE_CSV_HEADER = ["variant", "|Z|", "d", "n", "trials", "mean_scaled", "var_scaled", "theory", "seed"]


@dataclass(frozen=True)
class TestSpec:
    """Null distribution, threshold and statistic (``basis=None`` is Hoeffding)."""

    __test__ = False  # not a pytest class

    pi0: np.ndarray
    threshold: float
    basis: FeatureBasis | None = None
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        pi0 = as_distribution(self.pi0)
        object.__setattr__(self, "pi0", pi0)
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.basis is not None:
            if np.any(pi0 <= 0):
                raise ValueError("the mismatched test needs pi0 with full support")
            if self.basis.alphabet_size != pi0.size:
                raise ValueError("basis and pi0 live on different alphabets")

    @property
    def variant(self) -> str:
        return "hoeffding" if self.basis is None else "mismatched"

    @property
    def dimension(self) -> int:
        return self.pi0.size - 1 if self.basis is None else self.basis.d


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    statistic: float
    decision: str
    n: int
    boundary_hit: bool = False


def statistic(spec: TestSpec, gamma: np.ndarray) -> tuple[float, bool]:
    """Divergence of the empirical distribution ``gamma`` from ``spec.pi0``."""
    if spec.basis is None:
        return kl_divergence(gamma, spec.pi0), False
    sol = mismatched_divergence(gamma, spec.pi0, spec.basis, spec.solver)
    return sol.value, sol.boundary_hit


def run_test(spec: TestSpec, samples) -> TestOutcome:
    emp = empirical_from_samples(samples, spec.pi0.size)
    value, capped = statistic(spec, emp.probs)
    decision = H1 if value >= spec.threshold else H0
    return TestOutcome(statistic=value, decision=decision, n=emp.n, boundary_hit=capped)


@dataclass
class VarianceReport:
    variant: str
    alphabet_size: int
    d: int
    n: int
    trials: int
    mean_scaled: float
    var_scaled: float
    theory: float
    seed: RngSeed
    boundary_hits: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seed"] = {"master_seed": self.seed.master_seed, "stream_index": self.seed.stream_index}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_row(self) -> list:
        return [
            self.variant,
            self.alphabet_size,
            self.d,
            self.n,
            self.trials,
            repr(self.mean_scaled),
            repr(self.var_scaled),
            repr(self.theory),
            self.seed.master_seed,
        ]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(VARIANCE_CSV_HEADER)
        w.writerow(self.csv_row())
        return buf.getvalue()


def _trial_block(spec: TestSpec, n: int, seed: RngSeed, lo: int, hi: int):
    scaled = np.empty(hi - lo)
    hits = 0
    for k, j in enumerate(range(lo, hi)):
        samples = sample_iid(spec.pi0, n, seed.generator(j))
        counts = np.bincount(samples - 1, minlength=spec.pi0.size)
        value, capped = statistic(spec, counts / n)
        scaled[k] = n * value
        hits += capped
    return scaled, hits


def monte_carlo_variance(
    spec: TestSpec, n: int, trials: int, seed: RngSeed, workers: int = 1
) -> VarianceReport:
    """Mean and variance of ``n * statistic`` over ``trials`` null samples of size ``n``.

    Trial ``j`` draws from ``seed.generator(j)``, so the report does not
    depend on ``workers``.
    """
    if n < 1 or trials < 2:
        raise ValueError("need n >= 1 and trials >= 2")
    if workers <= 1:
        scaled, hits = _trial_block(spec, n, seed, 0, trials)
    else:
        edges = np.linspace(0, trials, workers + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    _trial_block,
                    [spec] * workers,
                    [n] * workers,
                    [seed] * workers,
                    edges[:-1].tolist(),
                    edges[1:].tolist(),
                )
            )
        scaled = np.concatenate([p[0] for p in parts])
        hits = sum(p[1] for p in parts)
    return VarianceReport(
        variant=spec.variant,
        alphabet_size=spec.pi0.size,
        d=spec.dimension,
        n=n,
        trials=trials,
        mean_scaled=float(scaled.mean()),
        var_scaled=float(scaled.var(ddof=1)),
        theory=spec.dimension / 2,
        seed=seed,
        boundary_hits=int(hits),
    )
