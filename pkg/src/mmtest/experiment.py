"""Training/testing experiment on a randomly perturbed exponential family.

A hidden model is a ``q``-dimensional basis plus a ``q'``-dimensional
perturbation basis.  Distributions are drawn by sampling coefficients
uniformly (wide for the main basis, narrow for the perturbation).  Features
are extracted from ``p`` training alternates by SVP for every rank ``d`` in
the sweep, and the mismatched/KL ratio is averaged over training and fresh
testing distributions.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .features import ObjectiveSpec, SvpConfig, extract_basis, svp_solve
from .mismatched import is_minimal, mismatched_divergence
from .prob import as_generator, kl_divergence, normalize_from_logits, stream

log = logging.getLogger(__name__)

CSV_HEADER = ["d", "avg_ratio_train", "avg_ratio_test", "p", "objective", "iterations", "seed"]
RATIO_SLACK = 1e-6
MAX_REDRAWS = 100

# stream tags under the master seed
_MODEL, _NULL, _TRAIN, _TEST = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NumericalFailure(RuntimeError):
    """A random draw could not be made valid within the retry budget."""


@dataclass(frozen=True)
class ExperimentConfig:
    alphabet_size: int = 20
    q: int = 8
    q_prime: int = 5
    p: int = 50
    t: int = 100
    d_values: tuple = tuple(range(1, 11))
    theta_range: float = 1.0
    theta_prime_range: float = 0.1
    master_seed: int = 0
    svp: SvpConfig = field(default_factory=SvpConfig)
    weight_rule: str = "inverse_kl"
    weights: tuple | None = None
    basis_draw: str = "normal"

    def __post_init__(self):
        object.__setattr__(self, "d_values", tuple(int(d) for d in self.d_values))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.q < 1 or self.q_prime < 0 or self.p < 1 or self.t < 1:
            raise ConfigError("need q >= 1, q_prime >= 0, p >= 1, t >= 1")
        if not self.d_values or min(self.d_values) < 1:
            raise ConfigError("d_values must be a nonempty list of ranks >= 1")
        if max(self.d_values) > min(self.p, self.alphabet_size):
            raise ConfigError("every d must be at most min(p, alphabet_size)")
        if self.q + self.q_prime + 1 > self.alphabet_size:
            raise ConfigError("q + q_prime + 1 must not exceed alphabet_size")
        if self.weight_rule not in ("inverse_kl", "uniform", "given"):
            raise ConfigError(f"unknown weight_rule {self.weight_rule!r}")
        if self.weight_rule == "given" and (self.weights is None or len(self.weights) != self.p):
            raise ConfigError("weight_rule 'given' needs p weights")
        if self.basis_draw not in ("normal", "uniform"):
            raise ConfigError(f"unknown basis_draw {self.basis_draw!r}")
        if self.theta_range < 0 or self.theta_prime_range < 0:
            raise ConfigError("coefficient ranges must be nonnegative")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d_values"] = list(self.d_values)
        out["svp"] = self.svp.to_dict()
        out["weights"] = None if self.weights is None else list(self.weights)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        if "svp" in kw:
            kw["svp"] = SvpConfig.from_dict(kw["svp"] or {})
        if isinstance(kw.get("master_seed"), dict):
            kw["master_seed"] = kw["master_seed"]["master_seed"]
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Model:
    main: np.ndarray
    perturbation: np.ndarray
    theta_range: float
    theta_prime_range: float

    @property
    def full_basis(self) -> np.ndarray:
        return np.vstack([self.main, self.perturbation])


@dataclass
class ResultRow:
    d: int
    avg_ratio_train: float
    avg_ratio_test: float
    p: int
    objective: float
    iterations: int
    seed: int
    converged: bool = True


def generate_model(cfg: ExperimentConfig) -> Model:
    """Draw ``q + q'`` centered rows, redrawing any that would break minimality."""
    rng = stream(cfg.master_seed, _MODEL)
    m = cfg.alphabet_size
    rows: list[np.ndarray] = []
    redraws = 0
    while len(rows) < cfg.q + cfg.q_prime:
        if cfg.basis_draw == "normal":
            row = rng.standard_normal(m)
        else:
            row = rng.uniform(-1.0, 1.0, m)
        row = row - row.mean()
        if is_minimal(np.array(rows + [row])):
            rows.append(row)
            continue
        redraws += 1
        if redraws > MAX_REDRAWS:
            raise NumericalFailure("could not draw a minimal model basis")
    rows_arr = np.array(rows)
    return Model(rows_arr[: cfg.q], rows_arr[cfg.q :], cfg.theta_range, cfg.theta_prime_range)


def generate_distribution(model: Model, seed) -> np.ndarray:
    """Draw coefficients uniformly and normalize; ``seed`` is an RngSeed or Generator."""
    rng = as_generator(seed)
    theta = rng.uniform(-model.theta_range, model.theta_range, model.main.shape[0])
    theta_p = rng.uniform(-model.theta_prime_range, model.theta_prime_range, model.perturbation.shape[0])
    return normalize_from_logits(theta @ model.main + theta_p @ model.perturbation)


def _draw_alternate(model, pi0, master_seed, tag, index):
    for attempt in range(MAX_REDRAWS):
        mu = generate_distribution(model, stream(master_seed, tag, index, attempt))
        if kl_divergence(mu, pi0) > 0:
            return mu
    raise NumericalFailure(f"alternate {index} coincides with pi0 after {MAX_REDRAWS} draws")


@dataclass(frozen=True)
class Dataset:
    pi0: np.ndarray
    train: np.ndarray
    test: np.ndarray
    weights: np.ndarray


def generate_dataset(cfg: ExperimentConfig) -> Dataset:
    model = generate_model(cfg)
    pi0 = generate_distribution(model, stream(cfg.master_seed, _NULL))
    train = np.array([_draw_alternate(model, pi0, cfg.master_seed, _TRAIN, i) for i in range(cfg.p)])
    test = np.array([_draw_alternate(model, pi0, cfg.master_seed, _TEST, j) for j in range(cfg.t)])
    if cfg.weight_rule == "inverse_kl":
        weights = np.array([1.0 / kl_divergence(a, pi0) for a in train])
    elif cfg.weight_rule == "uniform":
        weights = np.ones(cfg.p)
    else:
        weights = np.array(cfg.weights, dtype=float)
    return Dataset(pi0, train, test, weights)


def average_ratio(dists: np.ndarray, pi0: np.ndarray, basis) -> float:
    """Mean over ``dists`` of ``D_MM(mu || pi0) / D(mu || pi0)``."""
    ratios = [
        mismatched_divergence(mu, pi0, basis).value / kl_divergence(mu, pi0) for mu in dists
    ]
    return float(np.mean(ratios))


def run_rank(cfg: ExperimentConfig, data: Dataset, d: int) -> ResultRow:
    spec = ObjectiveSpec(data.pi0, data.train, data.weights, d)
    res = svp_solve(spec, cfg.svp)
    if not res.converged:
        log.warning("d=%d: SVP stopped after %d iterations without meeting stop_eps", d, res.iterations)
    basis = extract_basis(res.x_star, d)
    return ResultRow(
        d=d,
        avg_ratio_train=average_ratio(data.train, data.pi0, basis),
        avg_ratio_test=average_ratio(data.test, data.pi0, basis),
        p=cfg.p,
        objective=res.objective,
        iterations=res.iterations,
        seed=cfg.master_seed,
        converged=res.converged,
    )


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> list[ResultRow]:
    """One :class:`ResultRow` per rank in ``cfg.d_values``, in that order.

    All random draws happen before the per-rank fan-out, so the rows do not
    depend on ``workers``.
    """
    data = generate_dataset(cfg)
    if workers <= 1:
        return [run_rank(cfg, data, d) for d in cfg.d_values]
    n = len(cfg.d_values)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_rank, [cfg] * n, [data] * n, cfg.d_values))


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def format_csv(rows) -> str:
    """CSV text for ``rows``; refuses ratios outside ``[0, 1 + 1e-6]``."""
    for r in rows:
        for ratio in (r.avg_ratio_train, r.avg_ratio_test):
            if not 0 <= ratio <= 1 + RATIO_SLACK:
                raise ValueError(f"d={r.d}: ratio {ratio} outside [0, 1]")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(
            [r.d, _fmt(r.avg_ratio_train), _fmt(r.avg_ratio_test), r.p, _fmt(r.objective), r.iterations, r.seed]
        )
    return buf.getvalue()


def emit_csv(rows, path) -> None:
    text = format_csv(rows)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
