"""Estimators of X from Y for the Gaussian toy problem.

Every estimator maps scalar measurements to scalar estimates and works on
batches: ``evaluate(e, y)`` accepts a scalar, a 1-D array of measurements
or an ``(n, 1)`` array and returns the same shape. ``input_gradient``
returns the per-sample derivative (the 1x1 Jacobian) in that same shape.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.special import ndtri

from prtradeoff.errors import ContractViolationError, InvalidParameterError
from prtradeoff.mlp import MlpParams, mlp_backward, mlp_forward
from prtradeoff.models import GaussianToyModel
from prtradeoff.rng import make_rng


def _as_measurements(y) -> tuple[np.ndarray, tuple]:
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim > 2 or (arr.ndim == 2 and arr.shape[1] != 1):
        raise InvalidParameterError(f"measurements are scalar; got array of shape {arr.shape}")
    return arr.reshape(-1), arr.shape


def _restore(vals: np.ndarray, shape: tuple):
    return float(vals[0]) if shape == () else vals.reshape(shape)


def fd_step(y: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-6 * np.abs(y))


class Estimator:
    """Base class. Subclasses implement ``_f`` and optionally ``_df`` on 1-D arrays."""

    variant: str = ""
    stochastic: bool = False

    def evaluate(self, y):
        flat, shape = _as_measurements(y)
        return _restore(self._f(flat), shape)

    __call__ = evaluate

    def input_gradient(self, y):
        if self.stochastic:
            raise ContractViolationError(f"{self.variant} is stochastic and has no input gradient")
        flat, shape = _as_measurements(y)
        return _restore(self._df(flat), shape)

    def _f(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _df(self, y: np.ndarray) -> np.ndarray:
        h = fd_step(y)
        return (self._f(y + h) - self._f(y - h)) / (2.0 * h)

    def parameters(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"variant": self.variant, "parameters": self.parameters(), "seed": getattr(self, "seed", None)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.parameters()})"


class _Linear(Estimator):
    def __init__(self, model: GaussianToyModel):
        self.model = model

    def _f(self, y):
        return self.slope * y

    def _df(self, y):
        return np.full_like(y, self.slope)

    def parameters(self):
        return {"sigma_n": self.model.sigma_n}


class Mmse(_Linear):
    variant = "Mmse"

    @property
    def slope(self) -> float:
        return self.model.shrinkage


class Dmax(_Linear):
    """Minimum-MSE estimator among those with perfect marginal perceptual quality."""

    variant = "Dmax"

    @property
    def slope(self) -> float:
        return 1.0 / np.sqrt(1.0 + self.model.noise_var)


class PosteriorSampler(Estimator):
    """Stochastic reference: posterior mean plus fresh N(0, posterior variance) noise."""

    variant = "PosteriorSamplerRef"
    stochastic = True

    def __init__(self, model: GaussianToyModel, seed: int):
        self.model = model
        self.seed = int(seed)
        self._rng = make_rng(self.seed)

    def _f(self, y):
        return self.model.shrinkage * y + self.model.posterior_std * self._rng.standard_normal(len(y))

    def clone(self, seed: int) -> "PosteriorSampler":
        return PosteriorSampler(self.model, seed)

    def parameters(self):
        return {"sigma_n": self.model.sigma_n}


class Zigzag(Estimator):
    """Sweeps posterior quantiles inside bins of width ``delta`` anchored at 0.

    ``f(y) = m(y) + s * Phi^-1(q_clip + u(y) (1 - 2 q_clip))`` with
    ``u(y) = (y - delta floor(y / delta)) / delta``. As ``delta`` shrinks the
    joint law of ``(f(Y), Y)`` approaches ``p_{X,Y}`` while the slope grows
    like ``1 / delta``.
    """

    variant = "Zigzag"

    def __init__(self, model: GaussianToyModel, delta: float, q_clip: float = 1e-3):
        if not (np.isfinite(delta) and delta > 0):
            raise InvalidParameterError("delta must be positive")
        if not (0 < q_clip < 0.5):
            raise InvalidParameterError("q_clip must lie in (0, 0.5)")
        self.model = model
        self.delta = float(delta)
        self.q_clip = float(q_clip)

    def bin_fraction(self, y: np.ndarray) -> np.ndarray:
        u = (y - self.delta * np.floor(y / self.delta)) / self.delta
        return np.clip(u, 0.0, 1.0)

    def _f(self, y):
        q = self.q_clip + self.bin_fraction(y) * (1.0 - 2.0 * self.q_clip)
        return self.model.shrinkage * y + self.model.posterior_std * ndtri(q)

    @property
    def output_bounds(self) -> tuple[float, float]:
        """Offsets from the posterior mean that bound every output."""
        s = self.model.posterior_std
        return s * float(ndtri(self.q_clip)), s * float(ndtri(1.0 - self.q_clip))

    def parameters(self):
        return {"sigma_n": self.model.sigma_n, "delta": self.delta, "q_clip": self.q_clip}


class TrainedMlp(Estimator):
    variant = "TrainedMlp"

    def __init__(self, params: MlpParams, sigma_n: float | None = None):
        if params.input_dim != 1 or params.output_dim != 1:
            raise InvalidParameterError("a denoiser network maps scalars to scalars")
        self.params = params
        self.sigma_n = sigma_n

    def _f(self, y):
        out, _ = mlp_forward(self.params, y[:, None])
        return out[:, 0]

    def _df(self, y):
        out, cache = mlp_forward(self.params, y[:, None])
        _, gin = mlp_backward(self.params, cache, np.ones_like(out))
        return gin[:, 0]

    def parameters(self):
        d = self.params.to_dict()
        if self.sigma_n is not None:
            d["sigma_n"] = self.sigma_n
        return d


def make_mmse(model: GaussianToyModel) -> Mmse:
    return Mmse(model)


def make_dmax(model: GaussianToyModel) -> Dmax:
    return Dmax(model)


def make_posterior_sampler(model: GaussianToyModel, seed: int) -> PosteriorSampler:
    return PosteriorSampler(model, seed)


def make_zigzag(model: GaussianToyModel, delta: float, q_clip: float = 1e-3) -> Zigzag:
    return Zigzag(model, delta, q_clip)


def evaluate(e: Estimator, y):
    return e.evaluate(y)


def input_gradient(e: Estimator, y):
    return e.input_gradient(y)


def require_deterministic(e: Estimator) -> None:
    if e.stochastic:
        raise ContractViolationError(f"{e.variant} is stochastic; a deterministic estimator is required")


def from_dict(d: dict) -> Estimator:
    """Rebuild an estimator from its JSON descriptor."""
    variant, params = d["variant"], d["parameters"]
    if variant == "TrainedMlp":
        return TrainedMlp(MlpParams.from_dict(params), params.get("sigma_n"))
    model = GaussianToyModel(params["sigma_n"])
    if variant == "Mmse":
        return Mmse(model)
    if variant == "Dmax":
        return Dmax(model)
    if variant == "PosteriorSamplerRef":
        return PosteriorSampler(model, d["seed"])
    if variant == "Zigzag":
        return Zigzag(model, params["delta"], params["q_clip"])
    raise InvalidParameterError(f"unknown estimator variant {variant!r}")


def from_json(text: str) -> Estimator:
    return from_dict(json.loads(text))
