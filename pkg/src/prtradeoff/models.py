"""Probabilistic worlds: the jointly Gaussian toy problem and finite joint pmfs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from prtradeoff.errors import InvalidParameterError, UndefinedPosteriorError
from prtradeoff.rng import make_rng


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaussianToyModel:
    """X ~ N(0, 1), N ~ N(0, sigma_n^2) independent, Y = X + N."""

    sigma_n: float

    def __post_init__(self):
        s = float(self.sigma_n)
        if not np.isfinite(s) or s <= 0:
            raise InvalidParameterError(
                f"sigma_n must be positive (got {self.sigma_n}); "
                "sigma_n = 0 makes the degradation invertible"
            )
        object.__setattr__(self, "sigma_n", s)

    @property
    def noise_var(self) -> float:
        return self.sigma_n**2

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def cov(self) -> np.ndarray:
        return np.array([[1.0, 1.0], [1.0, 1.0 + self.noise_var]])

    @property
    def shrinkage(self) -> float:
        """Posterior mean slope 1 / (1 + sigma_n^2)."""
        return 1.0 / (1.0 + self.noise_var)

    @property
    def posterior_var(self) -> float:
        return 1.0 - self.shrinkage

    @property
    def posterior_std(self) -> float:
        return float(np.sqrt(self.posterior_var))

    def posterior_mean(self, y):
        m = np.asarray(y, dtype=np.float64) * self.shrinkage
        return float(m) if m.ndim == 0 else m


def gaussian_toy(sigma_n: float) -> GaussianToyModel:
    return GaussianToyModel(sigma_n)


def posterior_params(model: GaussianToyModel, y):
    """Mean and variance of X | Y = y.

    Returns ``(y / (1 + sigma_n^2), 1 - 1 / (1 + sigma_n^2))``; ``y`` may be
    an array, in which case the mean is an array and the variance a float.
    """
    return model.posterior_mean(y), model.posterior_var


@dataclass(frozen=True)
class EmpiricalJointSample:
    """n i.i.d. pairs; ``x`` and ``y`` are (n, dx) and (n, dy) arrays."""

    x: np.ndarray
    y: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
            raise InvalidParameterError("x and y must hold the same number of records")
        if len(x) == 0:
            raise InvalidParameterError("an empirical sample needs at least one pair")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))

    def __len__(self) -> int:
        return len(self.x)

    @property
    def points(self) -> np.ndarray:
        """Concatenated (x, y) records, shape (n, dx + dy)."""
        return np.hstack([self.x, self.y])

    def to_csv(self, path=None) -> str:
        if self.x.shape[1] != 1 or self.y.shape[1] != 1:
            raise InvalidParameterError("CSV export supports scalar x and y only")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"])
        for xi, yi in zip(self.x[:, 0], self.y[:, 0]):
            w.writerow([repr(float(xi)), repr(float(yi))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, seed: int | None = None) -> "EmpiricalJointSample":
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
        if not rows or [h.strip() for h in rows[0]] != ["x", "y"]:
            raise InvalidParameterError("expected header 'x,y'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64)
        return cls(data[:, 0], data[:, 1], seed)


def sample_joint(model: GaussianToyModel, n: int, seed: int) -> EmpiricalJointSample:
    """Draw n pairs (x, x + noise); x first, then noise, from one seeded stream."""
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    rng = make_rng(seed)
    x = rng.standard_normal(n)
    y = x + model.sigma_n * rng.standard_normal(n)
    return EmpiricalJointSample(x, y, seed)


def sample_measurements(model: GaussianToyModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n values from p_Y using the same x-then-noise recipe as :func:`sample_joint`."""
    x = rng.standard_normal(n)
    return x + model.sigma_n * rng.standard_normal(n)


@dataclass(frozen=True)
class DiscreteJointModel:
    """Finite-support joint pmf, ``pmf[i, j] = P(X = x_vals[i], Y = y_vals[j])``."""

    x_vals: np.ndarray
    y_vals: np.ndarray
    pmf: np.ndarray
    p_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "p_y", _frozen(self.pmf.sum(axis=0)))

    @property
    def support_y(self) -> np.ndarray:
        """Indices of y atoms with positive marginal mass."""
        return np.flatnonzero(self.p_y > 0)

    @property
    def invertible(self) -> bool:
        """True when every positive-mass column puts all its mass on one x atom."""
        for j in self.support_y:
            if np.count_nonzero(self.pmf[:, j] > 0) > 1:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "x_vals": self.x_vals.tolist(),
            "y_vals": self.y_vals.tolist(),
            "pmf": self.pmf.tolist(),
        }


def discrete_model(x_vals, y_vals, pmf) -> DiscreteJointModel:
    """Validate and build a :class:`DiscreteJointModel`.

    Grid values are sorted (the pmf is permuted to match). Negative mass,
    a total differing from 1 by more than 1e-12, duplicate grid values or
    mismatched shapes raise :class:`InvalidParameterError`. Invertible
    models are accepted; check ``model.invertible``.
    """
    xv = np.asarray(x_vals, dtype=np.float64).ravel()
    yv = np.asarray(y_vals, dtype=np.float64).ravel()
    p = np.asarray(pmf, dtype=np.float64)
    if p.shape != (len(xv), len(yv)):
        raise InvalidParameterError(f"pmf shape {p.shape} does not match grids ({len(xv)}, {len(yv)})")
    if len(xv) == 0 or len(yv) == 0:
        raise InvalidParameterError("grids must be non-empty")
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv)) and np.all(np.isfinite(p))):
        raise InvalidParameterError("non-finite grid value or mass")
    if len(np.unique(xv)) != len(xv) or len(np.unique(yv)) != len(yv):
        raise InvalidParameterError("duplicate grid values")
    if np.any(p < 0):
        raise InvalidParameterError("negative probability mass")
    if abs(p.sum() - 1.0) > 1e-12:
        raise InvalidParameterError(f"pmf sums to {p.sum()!r}, not 1")
    ix, iy = np.argsort(xv, kind="stable"), np.argsort(yv, kind="stable")
    return DiscreteJointModel(_frozen(xv[ix]), _frozen(yv[iy]), _frozen(p[np.ix_(ix, iy)]))


def discrete_posterior(model: DiscreteJointModel, y_index: int) -> np.ndarray:
    col = model.pmf[:, y_index]
    mass = col.sum()
    if mass <= 0:
        raise UndefinedPosteriorError(f"y atom {y_index} has zero marginal probability")
    return col / mass
