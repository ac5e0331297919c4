"""Epsilon-distinguishable families in exponential families.

Level sets, extremality and distinguishability certificates, the explicit
basis constructions behind the lower bound on the number of
distinguishable distributions, the closed-form lower/upper bounds, and a
brute-force count of half-space dichotomies of the basis columns.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .mismatched import FeatureBasis
from .prob import as_distribution, normalize_from_logits

MAX_ENUM_ALPHABET = 20


@dataclass(frozen=True)
class LevelSet:
    """Points (1-based) where ``source`` is within ``epsilon`` of its maximum."""

    members: frozenset
    epsilon: float
    source: tuple


def f_epsilon_set(x, epsilon: float) -> LevelSet:
    x = np.asarray(x, dtype=float)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("x must be a nonempty finite vector")
    top = x.max()
    members = frozenset(int(z) + 1 for z in np.flatnonzero(x >= top - epsilon))
    return LevelSet(members=members, epsilon=float(epsilon), source=tuple(x.tolist()))


def is_epsilon_extremal(pi, epsilon: float) -> bool:
    pi = np.asarray(pi, dtype=float)
    level = f_epsilon_set(pi, epsilon)
    mass = pi[[z - 1 for z in level.members]].sum()
    return bool(mass >= 1 - epsilon)


def is_epsilon_distinguishable(pi1, pi2, epsilon: float) -> bool:
    a = f_epsilon_set(pi1, epsilon).members
    b = f_epsilon_set(pi2, epsilon).members
    return bool(a - b) and bool(b - a)


def certify_family(dists, epsilon: float) -> bool:
    """Every member is epsilon-extremal and every pair epsilon-distinguishable."""
    dists = [np.asarray(p, dtype=float) for p in dists]
    if not all(is_epsilon_extremal(p, epsilon) for p in dists):
        return False
    sets = [f_epsilon_set(p, epsilon).members for p in dists]
    return all(a - b and b - a for a, b in itertools.combinations(sets, 2))


# -- constructions ---------------------------------------------------------


def _two_dim_rows(m: int) -> np.ndarray:
    k = np.arange(1, m + 1)
    return np.vstack([m - k, 2.0 - 2.0 ** (1 - k)]).astype(float)


def construct_two_dim_basis(alphabet_size: int) -> FeatureBasis:
    """A descending ramp and the partial sums of ``2^-j``.

    ``psi_1(k) = m - k`` and ``psi_2(k) = 2 - 2^(1-k)`` for ``k = 1..m``.
    """
    if alphabet_size < 2:
        raise ValueError("alphabet size must be at least 2")
    return FeatureBasis(_two_dim_rows(alphabet_size))


def two_dim_logits(alphabet_size: int, k: int) -> np.ndarray:
    """``u_k = psi_1 + 2^(k - 1/2) psi_2``, whose argmax is point ``k``."""
    psi1, psi2 = _two_dim_rows(alphabet_size)
    return psi1 + 2.0 ** (k - 0.5) * psi2


def construct_two_dim_family(alphabet_size: int, beta: float) -> list[np.ndarray]:
    if beta <= 0:
        raise ValueError("beta must be positive")
    return [
        normalize_from_logits(beta * two_dim_logits(alphabet_size, k))
        for k in range(1, alphabet_size + 1)
    ]


def find_certifying_beta(build, epsilon: float, beta_max: float = 1e6) -> float | None:
    """Smallest ``beta`` in ``1, 2, 4, ...`` with ``certify_family(build(beta), epsilon)``."""
    beta = 1.0
    while beta <= beta_max:
        if certify_family(build(beta), epsilon):
            return beta
        beta *= 2
    return None


def construct_indicator_basis(alphabet_size: int, d: int) -> FeatureBasis:
    if not 1 <= d <= alphabet_size:
        raise ValueError("need 1 <= d <= alphabet size")
    return FeatureBasis(np.eye(alphabet_size)[:d])


def indicator_witness_family(alphabet_size: int, d: int, beta: float) -> list[np.ndarray]:
    """One tilted distribution per ``floor(d/2)``-subset of ``{1..d}``.

    Each member is ``exp(beta * sum_{k in S} 1{z = k})`` normalized, which
    puts nearly all its mass uniformly on ``S`` when ``beta`` is large.
    """
    basis = construct_indicator_basis(alphabet_size, d).functions
    half = d // 2
    out = []
    for subset in itertools.combinations(range(d), half):
        out.append(normalize_from_logits(beta * basis[list(subset)].sum(axis=0)))
    return out


def _kronecker_layout(alphabet_size: int, d: int) -> tuple[int, int]:
    if d < 2 or alphabet_size < d:
        raise ValueError("need d >= 2 and alphabet size >= d")
    blocks = d // 2
    return blocks, alphabet_size // blocks


def construct_kronecker_basis(alphabet_size: int, d: int) -> FeatureBasis:
    """Block copies of the two-dimensional basis.

    With ``b = floor(d/2)`` blocks of length ``J = floor(m/b)``, row ``k``
    carries the ramp on block ``k`` and row ``k + b`` the ``2^-j`` sums on
    block ``k``; points past ``b*J`` are zero in every row.  For odd ``d``
    the basis has ``2b = d - 1`` rows.
    """
    blocks, j_len = _kronecker_layout(alphabet_size, d)
    if j_len < 2:
        raise ValueError("blocks need at least two points each")
    psi1, psi2 = _two_dim_rows(j_len)
    rows = np.zeros((2 * blocks, alphabet_size))
    for k in range(blocks):
        sl = slice(k * j_len, (k + 1) * j_len)
        rows[k, sl] = psi1
        rows[k + blocks, sl] = psi2
    return FeatureBasis(rows)


def kronecker_witness_family(alphabet_size: int, d: int, beta: float) -> list[np.ndarray]:
    """Product family: one point ``k_b`` picked in every block.

    Block ``b`` gets the logits ``u_{k_b}`` of the two-dimensional
    construction, scaled so that every block peaks at 1.  The result lies in
    the span of :func:`construct_kronecker_basis` and its level set is the
    tuple of picked points.
    """
    blocks, j_len = _kronecker_layout(alphabet_size, d)
    peaks = {k: two_dim_logits(j_len, k) for k in range(1, j_len + 1)}
    out = []
    for choice in itertools.product(range(1, j_len + 1), repeat=blocks):
        logits = np.zeros(alphabet_size)
        for b, k in enumerate(choice):
            u = peaks[k]
            logits[b * j_len:(b + 1) * j_len] = u / u.max()
        out.append(normalize_from_logits(beta * logits))
    return out


# -- bounds ----------------------------------------------------------------


def lower_bound(d: int, alphabet_size: int) -> float:
    """``exp(b (log m - log b - 1))`` with ``b = floor(d/2)``; 1 when ``b = 0``."""
    if d < 1 or alphabet_size < 2:
        raise ValueError("need d >= 1 and alphabet size >= 2")
    b = d // 2
    if b == 0:
        return 1.0
    return math.exp(b * (math.log(alphabet_size) - math.log(b) - 1))


def upper_bound(d: int, alphabet_size: int) -> float:
    """``exp((d+1)(1 + log m - log(d+1)))``, i.e. Sauer's ``(e m / (d+1))^(d+1)``."""
    if d < 1 or alphabet_size < 2:
        raise ValueError("need d >= 1 and alphabet size >= 2")
    return math.exp((d + 1) * (1 + math.log(alphabet_size) - math.log(d + 1)))


def sauer_bound(n_points: int, vc: int) -> float:
    return (math.e * n_points / vc) ** vc


def halfspace_feasible(points: np.ndarray, subset) -> bool:
    """Is there a half-space containing exactly ``points[subset]``?

    Solved as an LP in ``(r, b)``: ``r.y >= b`` inside, ``r.y <= b - 1``
    outside.  The constraints are invariant under positive scaling, so the
    unit margin is the same as strict separation.
    """
    n, dim = points.shape
    inside = np.zeros(n, dtype=bool)
    inside[list(subset)] = True
    # variables (r, b); rows written as A x <= c
    a = np.hstack([points, -np.ones((n, 1))])
    a[inside] *= -1
    c = np.where(inside, 0.0, -1.0)
    res = linprog(
        np.zeros(dim + 1),
        A_ub=a,
        b_ub=c,
        bounds=[(None, None)] * (dim + 1),
        method="highs",
    )
    if res.status not in (0, 2):
        raise RuntimeError(f"LP solver failed: {res.message}")
    return res.status == 0


def basis_points(basis: FeatureBasis) -> np.ndarray:
    """Columns of the basis matrix: one point in ``R^d`` per alphabet point."""
    return basis.functions.T.copy()


def realizable_halfspace_subsets(basis: FeatureBasis) -> list[frozenset]:
    """All subsets of the alphabet (1-based) cut out by a half-space on the basis columns."""
    m = basis.alphabet_size
    if m > MAX_ENUM_ALPHABET:
        raise ValueError(f"alphabet of size {m} is too large to enumerate (max {MAX_ENUM_ALPHABET})")
    pts = basis_points(basis)
    found = []
    for mask in range(2**m):
        subset = [i for i in range(m) if mask >> i & 1]
        if halfspace_feasible(pts, subset):
            found.append(frozenset(i + 1 for i in subset))
    return found


def count_halfspace_subsets(basis: FeatureBasis) -> int:
    """``tau(B)``: the number of subsets (the empty set included) realizable by half-spaces."""
    return len(realizable_halfspace_subsets(basis))
