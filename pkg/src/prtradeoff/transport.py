"""Exact and entropic optimal transport between discrete measures.

The exact solver is a successive-shortest-path min-cost flow (see
``_flow``); ``sinkhorn`` is a log-domain entropic solver with
epsilon-scaling; ``w1_sorted_1d`` and ``gaussian_w2`` are closed forms used
as independent cross-checks. ``jemd`` measures the joint perceptual index
of a deterministic estimator on the Gaussian toy model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from prtradeoff._flow import transport_ssp
from prtradeoff.errors import InvalidParameterError
from prtradeoff.estimators import Estimator, require_deterministic
from prtradeoff.models import GaussianToyModel, sample_joint, sample_measurements
from prtradeoff.rng import make_rng, resolve_seed

WEIGHT_TOL = 1e-12
EXACT_MAX_POINTS = 2000
ABSORB_LOG = 30.0  # Sinkhorn scalings are folded into the potentials beyond exp(+-30)


@dataclass(frozen=True)
class WeightedPointSet:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if pts.ndim != 2 or len(pts) != len(w) or len(w) == 0:
            raise InvalidParameterError("points must be (n, d) with one weight per point, n > 0")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("point coordinates must be finite")
        _check_weights(w)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "WeightedPointSet":
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    def __len__(self) -> int:
        return len(self.weights)


def _check_weights(w: np.ndarray) -> None:
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidParameterError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise InvalidParameterError(f"weights sum to {w.sum()!r}, not 1")


def _points(A) -> np.ndarray:
    if isinstance(A, WeightedPointSet):
        return A.points
    a = np.asarray(A, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def cost_matrix(A, B, ground: str = "l1", p: int = 1) -> np.ndarray:
    """Entry (i, j) is ``||a_i - b_j||_ground ** p`` for ground in {l1, l2}."""
    a, b = _points(A), _points(B)
    if a.shape[1] != b.shape[1]:
        raise InvalidParameterError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if p not in (1, 2):
        raise InvalidParameterError("p must be 1 or 2")
    ground = ground.lower()
    if ground == "l1":
        d = np.zeros((len(a), len(b)))
        for k in range(a.shape[1]):
            d += np.abs(a[:, k, None] - b[None, :, k])
        return d**p
    if ground == "l2":
        sq = np.zeros((len(a), len(b)))
        for k in range(a.shape[1]):
            sq += (a[:, k, None] - b[None, :, k]) ** 2
        return sq if p == 2 else np.sqrt(sq)
    raise InvalidParameterError(f"unknown ground metric {ground!r}")


@dataclass
class TransportResult:
    """``cost`` is the optimal value of sum(plan * cost matrix), i.e. W_p ** p."""

    cost: float
    p: int
    plan: np.ndarray  # rows of (i, j, mass)
    exact: bool
    iterations: int
    runtime_ms: float
    converged: bool = True
    potentials: tuple | None = field(default=None, repr=False)

    @property
    def wp(self) -> float:
        return max(self.cost, 0.0) ** (1.0 / self.p)

    def dense_plan(self, n: int, m: int) -> np.ndarray:
        P = np.zeros((n, m))
        np.add.at(P, (self.plan[:, 0].astype(int), self.plan[:, 1].astype(int)), self.plan[:, 2])
        return P


def exact_ot(mu, nu, cost, p: int = 1) -> TransportResult:
    """Exact discrete optimal transport by min-cost flow.

    ``cost`` holds the ground cost already raised to ``p``; ``p`` only sets
    ``result.wp``. Zero-weight atoms are dropped before solving.
    """
    t0 = time.perf_counter()
    a = np.asarray(mu, dtype=np.float64).ravel()
    b = np.asarray(nu, dtype=np.float64).ravel()
    C = np.asarray(cost, dtype=np.float64)
    _check_weights(a)
    _check_weights(b)
    if C.shape != (len(a), len(b)):
        raise InvalidParameterError(f"cost shape {C.shape} != ({len(a)}, {len(b)})")
    if not np.all(np.isfinite(C)):
        raise InvalidParameterError("cost entries must be finite")
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    Cs = np.ascontiguousarray(C[np.ix_(rows, cols)])
    flow, u, v, n_aug, _ = transport_ssp(a[rows] / a[rows].sum(), b[cols] / b[cols].sum(), Cs, 1e-15)
    jj, ii = np.nonzero(flow)
    mass = flow[jj, ii]
    plan = np.column_stack([rows[ii], cols[jj], mass]).astype(np.float64)
    order = np.lexsort((plan[:, 1], plan[:, 0]))
    plan = plan[order]
    value = float(np.dot(mass[order], C[plan[:, 0].astype(int), plan[:, 1].astype(int)]))
    ua, vb = np.zeros(len(a)), np.zeros(len(b))
    ua[rows], vb[cols] = u, v
    return TransportResult(
        cost=value,
        p=p,
        plan=plan,
        exact=True,
        iterations=int(n_aug),
        runtime_ms=(time.perf_counter() - t0) * 1e3,
        potentials=(ua, vb),
    )


def aggregate(points, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge duplicate points and drop zero weights.

    Returns ``(unique_points, merged_weights, group)`` where ``group[k]`` is
    the index into the unique arrays of input point ``k`` (-1 if dropped).
    """
    pts = _points(points)
    w = np.asarray(weights, dtype=np.float64)
    keep = w > 0
    group = np.full(len(w), -1)
    uniq, inv = np.unique(pts[keep], axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    group[keep] = inv
    merged = np.bincount(inv, weights=w[keep], minlength=len(uniq))
    return uniq, merged, group


def _disaggregate(plan, group, w, n_groups):
    """Split each aggregated row index back over its members in proportion to weight."""
    members = [[] for _ in range(n_groups)]
    for k, g in enumerate(group):
        if g >= 0:
            members[g].append(k)
    out = []
    for i, j, mass in plan:
        ks = members[int(i)]
        tot = sum(w[k] for k in ks)
        for k in ks:
            out.append((k, j, mass * w[k] / tot))
    return np.array(out, dtype=np.float64).reshape(-1, 3)


def wasserstein(A: WeightedPointSet, B: WeightedPointSet, ground: str = "l1", p: int = 1) -> TransportResult:
    """Exact W_p between weighted point sets with duplicate aggregation.

    The returned plan refers to the original point indices.
    """
    pa, wa, ga = aggregate(A.points, A.weights)
    pb, wb, gb = aggregate(B.points, B.weights)
    res = exact_ot(wa / wa.sum(), wb / wb.sum(), cost_matrix(pa, pb, ground, p), p)
    plan = _disaggregate(res.plan, ga, A.weights, len(pa))
    plan = _disaggregate(plan[:, [1, 0, 2]], gb, B.weights, len(pb))[:, [1, 0, 2]]
    order = np.lexsort((plan[:, 1], plan[:, 0]))
    res.plan = plan[order]
    return res


def w1_sorted_1d(a, b) -> float:
    """W1 between equal-size, equal-weight 1-D samples: mean |sort(a) - sort(b)|."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if len(a) != len(b):
        raise InvalidParameterError("w1_sorted_1d needs equal sample counts")
    if len(a) == 0:
        raise InvalidParameterError("empty samples")
    return float(np.mean(np.abs(a - b)))


@dataclass
class SinkhornResult:
    cost: float  # sum(plan * C) for the entropic plan
    f: np.ndarray
    g: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float
    epsilon: float
    runtime_ms: float

    def plan(self, mu, nu, cost) -> np.ndarray:
        return np.exp(
            (self.f[:, None] + self.g[None, :] - np.asarray(cost)) / self.epsilon
            + np.log(mu)[:, None]
            + np.log(nu)[None, :]
        )


def sinkhorn(mu, nu, cost, epsilon: float, max_iters: int = 10000, tol: float = 1e-6,
             scaling: float = 0.5) -> SinkhornResult:
    """Entropic OT via log-stabilised Sinkhorn iterations with epsilon-scaling.

    The regularisation starts at ``max(cost)`` and is multiplied by
    ``scaling`` until it reaches ``epsilon``, warm-starting the dual
    potentials ``f, g``. Scaling iterations run on the kernel
    ``exp((f + g - C) / eps)`` and are folded into ``f, g`` whenever they
    leave ``exp(+-ABSORB_LOG)``. Iterations at the target epsilon continue until the
    L1 row-marginal violation drops below ``tol``. Non-convergence within
    ``max_iters`` total iterations is reported via ``converged=False``.

    Potentials are returned with the additive gauge fixed by
    ``<mu, f> = <nu, g>``.
    """
    t0 = time.perf_counter()
    if not epsilon > 0:
        raise InvalidParameterError("epsilon must be positive")
    a = np.asarray(mu, dtype=np.float64).ravel()
    b = np.asarray(nu, dtype=np.float64).ravel()
    C = np.asarray(cost, dtype=np.float64)
    _check_weights(a)
    _check_weights(b)
    if C.shape != (len(a), len(b)):
        raise InvalidParameterError(f"cost shape {C.shape} != ({len(a)}, {len(b)})")
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    eps = max(float(C.max()), epsilon)
    it = 0
    err = np.inf
    converged = False
    while True:
        at_target = eps <= epsilon
        # a log-domain half step keeps every row and column of the kernel alive
        f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
        inner = 0
        while it < max_iters:
            # scaling iterations on K = exp((f + g - C) / eps), absorbed into f, g when they grow
            K = np.exp((f[:, None] + g[None, :] - C) / eps)
            Ka, Kb = K * a[:, None], K * b[None, :]
            u = np.ones(len(a))
            v = np.ones(len(b))
            while it < max_iters:
                Kv = Kb @ v
                it += 1
                inner += 1
                # columns of the current plan are exact; its row sums are a * u * Kv
                err = float(np.sum(a * np.abs(u * Kv - 1.0)))
                if err < tol or (not at_target and inner >= 50):
                    break
                u = 1.0 / Kv
                v = 1.0 / (Ka.T @ u)
                if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                    u = v = None
                    break
                if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > ABSORB_LOG:
                    break
            if u is None:
                f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
                g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
                continue
            f, g = f + eps * np.log(u), g + eps * np.log(v)
            if err < tol or (not at_target and inner >= 50):
                break
        converged = at_target and err < tol
        if at_target or it >= max_iters:
            break
        eps = max(eps * scaling, epsilon)
    P = np.exp((f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :])
    shift = 0.5 * (np.dot(a, f) - np.dot(b, g))
    return SinkhornResult(
        cost=float(np.sum(P * C)),
        f=f - shift,
        g=g + shift,
        converged=converged,
        iterations=it,
        marginal_error=err,
        epsilon=eps,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
    )


def _sqrtm_psd(S: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if not np.allclose(S, S.T, atol=1e-12, rtol=0):
        raise InvalidParameterError("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    if np.any(vals < -tol):
        raise InvalidParameterError(f"matrix is not positive semidefinite (eigenvalue {vals.min():g})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def gaussian_w2(mu1, cov1, mu2, cov2) -> float:
    """Closed-form W2 (Frechet distance, square-rooted) between two Gaussians."""
    m1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    m2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    S1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    S2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if S1.shape != S2.shape or S1.shape != (len(m1), len(m1)) or m1.shape != m2.shape:
        raise InvalidParameterError("mean/covariance shapes disagree")
    r1 = _sqrtm_psd(S1)
    _sqrtm_psd(S2)
    cross = _sqrtm_psd(r1 @ S2 @ r1)
    d2 = float(np.sum((m1 - m2) ** 2) + np.trace(S1 + S2 - 2.0 * cross))
    return float(np.sqrt(max(d2, 0.0)))


def empirical_wp(A, B, ground: str = "l1", p: int = 1, solver: str = "auto",
                 epsilon_factor: float = 1e-2) -> TransportResult:
    """W_p between two equal-weight samples; ``solver`` in {exact, sinkhorn, auto}."""
    a, b = _points(A), _points(B)
    C = cost_matrix(a, b, ground, p)
    mu = np.full(len(a), 1.0 / len(a))
    nu = np.full(len(b), 1.0 / len(b))
    if solver == "auto":
        solver = "exact" if max(len(a), len(b)) <= EXACT_MAX_POINTS else "sinkhorn"
    if solver == "exact":
        return exact_ot(mu, nu, C, p)
    if solver == "sinkhorn":
        eps = epsilon_factor * float(np.median(C))
        s = sinkhorn(mu, nu, C, eps)
        return TransportResult(s.cost, p, np.empty((0, 3)), False, s.iterations, s.runtime_ms,
                               s.converged, (s.f, s.g))
    raise InvalidParameterError(f"unknown solver {solver!r}")


@dataclass(frozen=True)
class JemdSamples:
    """The two point sets compared by :func:`jemd`."""

    real: np.ndarray  # (n, 2) records (x, y)
    fake: np.ndarray  # (n, 2) records (f(y'), y')


def jemd_samples(e: Estimator, model: GaussianToyModel, n: int, seed: int,
                 paired: bool = False) -> JemdSamples:
    """Build the real and estimated joint samples.

    The real set is ``sample_joint(model, n, seed)``. In the default
    independent mode the estimator sees a fresh measurement sample drawn
    from the substream ``resolve_seed(seed, "jemd/y")``; in paired mode it
    sees the real set's own measurements. Either way the draws depend only
    on ``(model, n, seed)``, so different estimators share them.
    """
    require_deterministic(e)
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    s = sample_joint(model, n, seed)
    y = s.y[:, 0] if paired else sample_measurements(model, n, make_rng(resolve_seed(seed, "jemd/y")))
    return JemdSamples(s.points, np.column_stack([e.evaluate(y), y]))


def jemd(e: Estimator, model: GaussianToyModel, n: int, seed: int, ground: str = "l1",
         p: int = 1, solver: str = "exact", paired: bool = False) -> float:
    """Joint EMD: empirical W_p between (x, y) ~ p_{X,Y} and (f(y'), y')."""
    s = jemd_samples(e, model, n, seed, paired)
    return empirical_wp(s.real, s.fake, ground, p, solver).wp
