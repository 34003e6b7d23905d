"""Lipschitz lower bounds, I-FGSM perturbations and farthest-point exploration.

All routines act elementwise on batches of scalar measurements, so one call
attacks or probes many inputs at once. Attacks follow the sign of the
objective's input gradient; a zero gradient counts as positive, which makes
the first step well defined when the objective starts at a stationary point
(as ``||f(y_t) - f(y)||^2`` does at ``y_t = y``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from prtradeoff.errors import InvalidParameterError
from prtradeoff.estimators import Estimator, require_deterministic
from prtradeoff.models import GaussianToyModel, sample_measurements
from prtradeoff.rng import make_rng

MAX_OUTPUT_CHANGE = "max_output_change"
FPS_SPREAD = "fps_spread"
FPS_STEPS = 150  # exploration runs a longer attack than Lipschitz probing


@dataclass(frozen=True)
class AttackConfig:
    """I-FGSM settings: ``steps`` updates of size ``alpha / steps`` inside the l-inf ball of radius ``alpha``."""

    alpha: float
    steps: int = 10
    objective: str = MAX_OUTPUT_CHANGE
    seed: int = 0
    fps_literal: bool = False  # FPS loss uses only the newest list entry

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidParameterError("alpha must be positive")
        if self.steps < 1:
            raise InvalidParameterError("steps must be at least 1")
        if self.objective not in (MAX_OUTPUT_CHANGE, FPS_SPREAD):
            raise InvalidParameterError(f"unknown objective {self.objective!r}")

    @property
    def step_size(self) -> float:
        return self.alpha / self.steps


@dataclass
class TradeoffPoint:
    control: float
    jemd: float
    kbar: float
    n_eval: int
    seed: int | str
    auxiliary: dict = field(default_factory=dict)


def k_ratio(e: Estimator, y1, y2) -> float:
    """``||f(y1) - f(y2)||_2 / ||y1 - y2||_2`` for one pair of measurements."""
    require_deterministic(e)
    a = np.atleast_1d(np.asarray(y1, dtype=np.float64))
    b = np.atleast_1d(np.asarray(y2, dtype=np.float64))
    den = float(np.linalg.norm(a - b))
    if den == 0.0:
        raise InvalidParameterError("k_ratio needs two distinct inputs")
    return float(np.linalg.norm(np.atleast_1d(e.evaluate(a)) - np.atleast_1d(e.evaluate(b)))) / den


def _pair_ratios(e: Estimator, y: np.ndarray, y_adv: np.ndarray) -> np.ndarray:
    # pairs the attack left in place produced no output change and count as 0
    dy = np.abs(y_adv - y)
    df = np.abs(e.evaluate(y_adv) - e.evaluate(y))
    return np.divide(df, dy, out=np.zeros_like(df), where=dy > 0)


def kbar_random(e: Estimator, model: GaussianToyModel, n: int, sigma_z2: float = 0.2,
                seed: int = 0) -> float:
    """Mean of K(y, y + z) over n draws of y ~ p_Y and z ~ N(0, sigma_z2)."""
    require_deterministic(e)
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    if not sigma_z2 > 0:
        raise InvalidParameterError("sigma_z2 must be positive")
    rng = make_rng(seed)
    y = sample_measurements(model, n, rng)
    z = np.sqrt(sigma_z2) * rng.standard_normal(n)
    return float(np.mean(_pair_ratios(e, y, y + z)))


def _sign(g: np.ndarray) -> np.ndarray:
    return np.where(g >= 0, 1.0, -1.0)


def _ascend(e: Estimator, y: np.ndarray, cfg: AttackConfig, grad_fn) -> np.ndarray:
    lo, hi = y - cfg.alpha, y + cfg.alpha
    y_t = y.copy()
    for _ in range(cfg.steps):
        y_t = np.clip(y_t + cfg.step_size * _sign(grad_fn(y_t)), lo, hi)
    return y_t


def ifgsm(e: Estimator, y, cfg: AttackConfig, objective: str | None = None, anchors=None,
          literal: bool | None = None):
    """Iterative FGSM ascent started at ``y`` and projected onto the ``alpha`` ball around it.

    ``max_output_change`` maximises ``||f(y_t) - f(y)||^2``. ``fps_spread``
    maximises ``(1/i) sum_s ||anchors[s] - f(y_t)||^2`` over the ``i``
    previously collected outputs in ``anchors``; with ``literal`` only the
    newest anchor enters the sum.
    """
    require_deterministic(e)
    objective = objective or cfg.objective
    literal = cfg.fps_literal if literal is None else literal
    y0 = np.asarray(y, dtype=np.float64)
    flat = y0.reshape(-1)
    if objective == MAX_OUTPUT_CHANGE:
        f0 = e.evaluate(flat)

        def grad(y_t):
            return 2.0 * (e.evaluate(y_t) - f0) * e.input_gradient(y_t)

    elif objective == FPS_SPREAD:
        if anchors is None or len(anchors) == 0:
            raise InvalidParameterError("fps_spread needs at least one anchor output")
        A = np.stack([np.asarray(a, dtype=np.float64).reshape(-1) for a in anchors])
        if literal:
            A = np.repeat(A[-1:], len(A), axis=0)

        def grad(y_t):
            fy = e.evaluate(y_t)
            return 2.0 * np.mean(fy[None, :] - A, axis=0) * e.input_gradient(y_t)

    else:
        raise InvalidParameterError(f"unknown objective {objective!r}")
    out = _ascend(e, flat, cfg, grad)
    return float(out[0]) if y0.ndim == 0 else out.reshape(y0.shape)


def kbar_ifgsm(e: Estimator, model: GaussianToyModel, n: int, cfg: AttackConfig) -> float:
    """Mean of K(y, y_adv) with y_adv from I-FGSM (output-change objective) over n draws of y."""
    require_deterministic(e)
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    y = sample_measurements(model, n, make_rng(cfg.seed))
    y_adv = ifgsm(e, y, cfg, MAX_OUTPUT_CHANGE)
    return float(np.mean(_pair_ratios(e, y, y_adv)))


@dataclass
class FpsResult:
    outputs: np.ndarray  # (S,) + shape of y
    inputs: np.ndarray  # attacked measurements; inputs[0] is y itself

    def __len__(self) -> int:
        return len(self.outputs)

    @property
    def spread(self):
        """Largest pairwise distance between collected outputs (per measurement)."""
        return self.outputs.max(axis=0) - self.outputs.min(axis=0)


def fps_explore(e: Estimator, y, S: int, cfg: AttackConfig, literal: bool | None = None) -> FpsResult:
    """Collect S diverse outputs by farthest-point-style I-FGSM ascent.

    The first output is ``f(y)`` with no attack. Each later one is ``f(y_adv)``
    where ``y_adv`` maximises the mean squared distance of its output to the
    outputs collected so far.
    """
    require_deterministic(e)
    if S < 1:
        raise InvalidParameterError("S must be at least 1")
    y = np.asarray(y, dtype=np.float64)
    outputs = [np.asarray(e.evaluate(y), dtype=np.float64)]
    inputs = [y.copy()]
    for _ in range(1, S):
        y_adv = np.asarray(ifgsm(e, y, cfg, FPS_SPREAD, anchors=outputs, literal=literal))
        inputs.append(y_adv)
        outputs.append(np.asarray(e.evaluate(y_adv), dtype=np.float64))
    return FpsResult(np.stack(outputs), np.stack(inputs))
