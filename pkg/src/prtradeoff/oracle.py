"""Exhaustive verification of the Lipschitz-perception lower bound on finite models.

For a discrete joint law of ``(X, Y)`` every deterministic estimator with
outputs in ``x_vals`` is a map ``g`` from y-atoms to x-atoms. Each map gets
an exact Wasserstein distance between the joints of ``(X, Y)`` and
``(g(Y), Y)`` under the L2 norm on R^2, and its Lipschitz constant over the
measurement support; the bound says a small distance forces a large
Lipschitz constant.

The bound uses certified constants ``(beta, k, p_sy)``: on a set of
measurements of total probability ``p_sy`` the posterior puts mass at least
``k`` on two atoms at least ``beta`` apart. With L2 norms throughout, all
norm-equivalence constants equal 1 and

    t = (2 gamma^(p/2) / (k p_sy))^(1/p) (1 + 1e-6)
    g(eps) = (beta - 2 t sqrt(eps)) / (2 t sqrt(eps))

for any ``0 < eps <= gamma``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from prtradeoff.errors import InvalidParameterError, TooLargeError, VerificationFailure
from prtradeoff.models import DiscreteJointModel, discrete_model
from prtradeoff.rng import make_rng
from prtradeoff.transport import TransportResult, cost_matrix, exact_ot

MAX_MAPS = 10**6
T_MARGIN = 1e-6
TOL = 1e-12


def n_maps(model: DiscreteJointModel) -> int:
    return len(model.x_vals) ** len(model.y_vals)


def enumerate_deterministic(model: DiscreteJointModel):
    """Yield every map as a tuple of x-indices, one per y-atom, in lexicographic order."""
    total = n_maps(model)
    if total > MAX_MAPS:
        raise TooLargeError(f"{total} maps exceed the enumeration guard of {MAX_MAPS}")
    return itertools.product(range(len(model.x_vals)), repeat=len(model.y_vals))


def lipschitz_discrete(g, model: DiscreteJointModel) -> float:
    """Largest slope of ``g`` between measurement atoms of positive probability."""
    sup = np.flatnonzero(model.p_y > 0)
    if len(sup) < 2:
        raise InvalidParameterError("need at least two measurement atoms with positive probability")
    out = model.x_vals[np.asarray(g)[sup]]
    y = model.y_vals[sup]
    dx = np.abs(out[:, None] - out[None, :])
    dy = np.abs(y[:, None] - y[None, :])
    off = ~np.eye(len(sup), dtype=bool)
    return float(np.max(dx[off] / dy[off]))


def _joint_atoms(model: DiscreteJointModel) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.nonzero(model.pmf > 0)
    pts = np.column_stack([model.x_vals[i], model.y_vals[j]])
    return pts, model.pmf[i, j]


def wasserstein_of_map(g, model: DiscreteJointModel, p: int = 1, ground: str = "l2") -> TransportResult:
    """Exact W_p between the law of ``(X, Y)`` and that of ``(g(Y), Y)``; see ``result.wp``."""
    real, w_real = _joint_atoms(model)
    sup = np.flatnonzero(model.p_y > 0)
    mapped = np.column_stack([model.x_vals[np.asarray(g)[sup]], model.y_vals[sup]])
    py = model.p_y[sup]
    return exact_ot(w_real / w_real.sum(), py / py.sum(), cost_matrix(real, mapped, ground, p), p)


@dataclass(frozen=True)
class BoundConstants:
    beta: float
    k: float
    p_sy: float
    sy_indices: tuple
    witnesses: dict = field(default_factory=dict)  # y index -> ((x index,), (x index,))

    def to_dict(self) -> dict:
        return {"beta": self.beta, "k": self.k, "p_sy": self.p_sy, "sy_indices": list(self.sy_indices)}


def _require_non_invertible(model: DiscreteJointModel) -> None:
    if model.invertible:
        raise InvalidParameterError("the model is invertible: every posterior is a single atom")


def certify_constants(model: DiscreteJointModel, p: int = 1) -> BoundConstants:
    """Search all certified ``(beta, k)`` candidates and keep the one giving the largest bound.

    ``beta`` ranges over pairwise x-distances and ``k`` over posterior
    masses. The bound equals ``beta / (2 t sqrt(eps)) - 1`` with ``t``
    proportional to ``(k p_sy)^(-1/p)``, so the best candidate maximises
    ``beta (k p_sy)^(1/p)`` whatever ``eps`` and ``gamma`` are.
    """
    _require_non_invertible(model)
    xv = model.x_vals
    sup = np.flatnonzero(model.p_y > 0)
    post = {j: model.pmf[:, j] / model.p_y[j] for j in sup}
    dist = np.abs(xv[:, None] - xv[None, :])
    betas = np.unique(dist[dist > 0])
    ks = np.unique(np.concatenate([q[q > 0] for q in post.values()]))
    best, best_score = None, -np.inf
    for beta in betas:
        for k in ks:
            sy, wit = [], {}
            for j in sup:
                heavy = np.flatnonzero(post[j] >= k)
                pairs = [(a, b) for a in heavy for b in heavy if a < b and dist[a, b] >= beta]
                if pairs:
                    sy.append(int(j))
                    wit[int(j)] = ((int(pairs[0][0]),), (int(pairs[0][1]),))
            if not sy:
                continue
            p_sy = float(model.p_y[sy].sum())
            score = beta * (k * p_sy) ** (1.0 / p)
            if score > best_score:
                best_score = score
                best = BoundConstants(float(beta), float(k), p_sy, tuple(sy), wit)
    if best is None:
        raise InvalidParameterError("no posterior has two atoms with positive mass")
    return best


def t_value(c: BoundConstants, p: int, gamma: float) -> float:
    return (2.0 * gamma ** (p / 2.0) / (c.k * c.p_sy)) ** (1.0 / p) * (1.0 + T_MARGIN)


def bound_g(c: BoundConstants, p: int, epsilon: float, gamma: float) -> float:
    """Lower bound on the Lipschitz constant of any map at distance ``epsilon <= gamma``.

    Values at or below zero mean the bound is vacuous.
    """
    if not epsilon > 0:
        raise InvalidParameterError("epsilon must be positive")
    if epsilon > gamma:
        raise InvalidParameterError("epsilon must not exceed gamma")
    r = 2.0 * t_value(c, p, gamma) * np.sqrt(epsilon)
    return float((c.beta - r) / r)


@dataclass
class MapRecord:
    map_id: int
    g: tuple
    wp: float
    k: float
    bound: float
    satisfied: bool


@dataclass
class TheoremReport:
    records: list
    constants: BoundConstants
    p: int
    gamma_policy: str
    gamma: float | None  # None under the per-map policy
    t: float | None
    min_wp: float

    @property
    def all_satisfied(self) -> bool:
        return all(r.satisfied for r in self.records)

    def summary(self) -> dict:
        return {**{k: v for k, v in self.constants.to_dict().items() if k != "sy_indices"},
                "t": self.t, "gamma": self.gamma, "gamma_policy": self.gamma_policy, "p": self.p,
                "min_wp": self.min_wp, "all_satisfied": self.all_satisfied, "n_maps": len(self.records)}

    def rows(self) -> list[tuple]:
        return [(r.map_id, r.wp, r.k, r.bound, r.satisfied) for r in self.records]

    def frontier(self) -> tuple[np.ndarray, np.ndarray]:
        """Distances in increasing order and the smallest K among maps at most that far."""
        wp = np.array([r.wp for r in self.records])
        K = np.array([r.k for r in self.records])
        order = np.argsort(wp, kind="stable")
        return wp[order], np.minimum.accumulate(K[order])


def verify_theorem(model: DiscreteJointModel, p: int = 1, gamma_policy: str = "global") -> TheoremReport:
    """Check ``K >= max(0, g(W_p))`` for every deterministic map and ``min W_p > 0``.

    ``gamma_policy`` is ``"global"`` (gamma = largest W_p over all maps) or
    ``"per_map"`` (gamma = the map's own W_p). Raises
    :class:`VerificationFailure` with the offending map on any violation.
    """
    if gamma_policy not in ("global", "per_map"):
        raise InvalidParameterError(f"unknown gamma policy {gamma_policy!r}")
    _require_non_invertible(model)
    maps = list(enumerate_deterministic(model))
    c = certify_constants(model, p)
    wps = [wasserstein_of_map(g, model, p).wp for g in maps]
    ks = [lipschitz_discrete(g, model) for g in maps]
    gamma = max(wps) if gamma_policy == "global" else None
    records = []
    for idx, (g, w, K) in enumerate(zip(maps, wps, ks)):
        if w <= 0:
            raise VerificationFailure(f"map {g} reproduces the joint law exactly", counterexample=g)
        b = bound_g(c, p, w, gamma if gamma is not None else w)
        ok = K >= max(0.0, b) - TOL
        records.append(MapRecord(idx, g, w, K, b, ok))
        if not ok:
            raise VerificationFailure(f"map {g}: K = {K} below bound {b} at W_p = {w}", counterexample=g)
    return TheoremReport(records, c, p, gamma_policy, gamma,
                         t_value(c, p, gamma) if gamma is not None else None, float(min(wps)))


def random_discrete_model(nx: int, ny: int, seed: int, x_vals=None, y_vals=None) -> DiscreteJointModel:
    """A joint pmf with Dirichlet(1) masses on integer grids; almost surely non-invertible."""
    rng = make_rng(seed)
    pmf = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    pmf = pmf / pmf.sum()
    xv = np.arange(nx, dtype=np.float64) if x_vals is None else x_vals
    yv = np.arange(ny, dtype=np.float64) if y_vals is None else y_vals
    return discrete_model(xv, yv, pmf)


def uniform_2x2() -> DiscreteJointModel:
    return discrete_model([0.0, 1.0], [0.0, 1.0], np.full((2, 2), 0.25))
