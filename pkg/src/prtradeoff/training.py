"""Conditional GAN training of the toy denoiser with an optional robustness term.

The generator ``G`` maps ``y`` to an estimate of ``x``; the discriminator
``D`` scores pairs ``(x, y)``. Losses are the non-saturating GAN losses with
an R1 penalty on real pairs, and the generator additionally minimises
``lam * E||G(Y) - G(Y + Z)||^2``. Networks alternate one Adam step each.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, log_expit

from prtradeoff.errors import InvalidParameterError, TrainingDivergedError
from prtradeoff.estimators import TrainedMlp
from prtradeoff.mlp import (
    DISCRIMINATOR_ARCH,
    GENERATOR_ARCH,
    MlpParams,
    adam_init,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from prtradeoff.models import EmpiricalJointSample, GaussianToyModel, sample_joint
from prtradeoff.rng import make_rng, resolve_seed

DEFAULT_LAMBDAS = (0.0, 0.03, 0.1, 0.3, 1.0, 10.0)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters. Defaults are the desk-scale run.

    ``sigma_z2`` is the variance of the robustness perturbation unless
    ``z_is_std`` is set, in which case it is read as a standard deviation.
    """

    lam: float = 0.0
    sigma_z2: float = 0.2
    z_is_std: bool = False
    steps: int = 20000
    batch: int = 128
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    r1_coeff: float = 1.0
    r1_h: float = 1e-3
    lr_halving_start: int = 10000
    lr_halving_period: int = 1000
    n_train: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidParameterError("lambda must be nonnegative")
        for name in ("sigma_z2", "lr", "r1_h"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be positive")
        if self.r1_coeff < 0:
            raise InvalidParameterError("r1_coeff must be nonnegative")
        for name in ("steps", "batch", "lr_halving_period", "n_train"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be at least 1")
        if self.lr_halving_start < 0:
            raise InvalidParameterError("lr_halving_start must be nonnegative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise InvalidParameterError("Adam betas must lie in [0, 1)")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        base = dict(steps=100000, n_train=100000, lr_halving_start=50000, lr_halving_period=5000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def scaled(cls, steps: int, **overrides) -> "TrainConfig":
        """A run of ``steps`` steps whose halving schedule keeps the desk proportions."""
        base = dict(steps=steps, lr_halving_start=steps // 2, lr_halving_period=max(1, steps // 20))
        base.update(overrides)
        return cls(**base)

    @property
    def z_var(self) -> float:
        return self.sigma_z2**2 if self.z_is_std else self.sigma_z2

    def lr_at(self, step: int) -> float:
        if step < self.lr_halving_start:
            return self.lr
        k = (step - self.lr_halving_start) // self.lr_halving_period + 1
        return self.lr * 0.5**k

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def _pairs(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, EmpiricalJointSample):
        return batch.x[:, 0], batch.y[:, 0]
    x, y = batch
    return np.asarray(x, dtype=np.float64).reshape(-1), np.asarray(y, dtype=np.float64).reshape(-1)


@dataclass
class GanLosses:
    d_loss: float
    g_loss: float
    d_grads: MlpParams
    g_grads: MlpParams


def gan_step_losses(D: MlpParams, G: MlpParams, batch) -> GanLosses:
    """Non-saturating conditional GAN losses and their gradients on one batch.

    ``batch`` is an ``EmpiricalJointSample`` or a pair ``(x, y)``. The
    discriminator gradient treats the fake pairs as constants; the generator
    gradient flows through the first coordinate of the fake pairs.
    """
    x, y = _pairs(batch)
    n = len(y)
    g_out, g_cache = mlp_forward(G, y[:, None])
    fake = g_out[:, 0]
    inp = np.concatenate([np.column_stack([x, y]), np.column_stack([fake, y])])
    logits, d_cache = mlp_forward(D, inp)
    lr_, lf = logits[:n, 0], logits[n:, 0]
    d_loss = -np.mean(log_expit(lr_)) - np.mean(log_expit(-lf))
    g_loss = -np.mean(log_expit(lf))
    d_grad_out = np.concatenate([(expit(lr_) - 1.0) / n, expit(lf) / n])
    d_grads, _ = mlp_backward(D, d_cache, d_grad_out)

    # generator loss seen through D on the fake half only
    logits_f, cache_f = mlp_forward(D, inp[n:])
    _, gin = mlp_backward(D, cache_f, (expit(logits_f[:, 0]) - 1.0) / n)
    g_grads, _ = mlp_backward(G, g_cache, gin[:, :1])
    return GanLosses(float(d_loss), float(g_loss), d_grads, g_grads)


def _stencil(points: np.ndarray, h: float) -> np.ndarray:
    # rows: x+h e1, x-h e1, x+h e2, x-h e2 for every point
    n = len(points)
    out = np.repeat(points[None], 4, axis=0)
    out[0, :, 0] += h
    out[1, :, 0] -= h
    out[2, :, 1] += h
    out[3, :, 1] -= h
    return out.reshape(4 * n, 2)


def _r1_grad_out(o: np.ndarray, n: int, h: float, coeff: float) -> tuple[float, np.ndarray]:
    o = o.reshape(4, n)
    g1 = (o[0] - o[1]) / (2 * h)
    g2 = (o[2] - o[3]) / (2 * h)
    value = coeff * float(np.mean(g1**2 + g2**2))
    s1 = coeff * 2 * g1 / (2 * h * n)
    s2 = coeff * 2 * g2 / (2 * h * n)
    return value, np.concatenate([s1, -s1, s2, -s2])


def r1_penalty(D: MlpParams, real_batch, h: float, coeff: float = 1.0) -> tuple[float, MlpParams]:
    """``coeff * mean ||grad_input D||^2`` at real pairs, by central differences.

    The input gradient is approximated with a step ``h`` along each of the
    two input coordinates, and the parameter gradient backpropagates through
    all four stencil evaluations.
    """
    if not h > 0:
        raise InvalidParameterError("stencil step h must be positive")
    x, y = _pairs(real_batch)
    n = len(y)
    out, cache = mlp_forward(D, _stencil(np.column_stack([x, y]), h))
    value, grad_out = _r1_grad_out(out[:, 0], n, h, coeff)
    grads, _ = mlp_backward(D, cache, grad_out)
    return value, grads


def robustness_loss(G: MlpParams, y_batch, sigma_z2: float, stream: np.random.Generator | None = None,
                    z=None) -> tuple[float, MlpParams]:
    """Batch mean of ``(G(y) - G(y + z))^2`` with ``z ~ N(0, sigma_z2)`` and its gradient.

    Pass ``z`` to freeze the perturbation; otherwise it is drawn from ``stream``.
    """
    if not sigma_z2 > 0:
        raise InvalidParameterError("sigma_z2 must be positive")
    y = np.asarray(y_batch, dtype=np.float64).reshape(-1)
    n = len(y)
    if z is None:
        if stream is None:
            raise InvalidParameterError("need a random stream or an explicit z")
        z = np.sqrt(sigma_z2) * stream.standard_normal(n)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    out, cache = mlp_forward(G, np.concatenate([y, y + z])[:, None])
    diff = out[:n, 0] - out[n:, 0]
    s = 2 * diff / n
    grads, _ = mlp_backward(G, cache, np.concatenate([s, -s]))
    return float(np.mean(diff**2)), grads


@dataclass
class TrainHistory:
    """Per-step records of the discriminator and generator updates."""

    d_loss: np.ndarray
    g_loss: np.ndarray
    r1: np.ndarray
    lr: np.ndarray
    robustness_loss: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.d_loss)

    @property
    def losses(self) -> np.ndarray:
        """One entry per network update: D then G at every step."""
        return np.column_stack([self.d_loss, self.g_loss]).reshape(-1)

    def __len__(self) -> int:
        return 2 * self.steps

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "d_loss", "g_loss", "r1", "lr", "robustness_loss"])
        for i in range(self.steps):
            w.writerow([i, repr(float(self.d_loss[i])), repr(float(self.g_loss[i])), repr(float(self.r1[i])),
                        repr(float(self.lr[i])), repr(float(self.robustness_loss[i]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def train_denoiser(model: GaussianToyModel, cfg: TrainConfig) -> tuple[TrainedMlp, TrainHistory]:
    """Train a generator for ``model`` and return it as a deterministic estimator.

    Every random draw (data, initialisation, minibatches, perturbations) comes
    from substreams of ``cfg.seed``, so the result depends only on
    ``(model, cfg)``.
    """
    data = sample_joint(model, cfg.n_train, resolve_seed(cfg.seed, "train/data"))
    X, Y = data.x[:, 0], data.y[:, 0]
    G = init_mlp(GENERATOR_ARCH, resolve_seed(cfg.seed, "train/G"))
    D = init_mlp(DISCRIMINATOR_ARCH, resolve_seed(cfg.seed, "train/D"))
    g_state, d_state = adam_init(G), adam_init(D)
    rng = make_rng(resolve_seed(cfg.seed, "train/batches"))
    z_rng = make_rng(resolve_seed(cfg.seed, "train/z"))
    B, h = cfg.batch, cfg.r1_h
    z_std = np.sqrt(cfg.z_var)
    hist = {k: np.empty(cfg.steps) for k in ("d_loss", "g_loss", "r1", "lr", "robustness_loss")}
    betas = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)

    for step in range(cfg.steps):
        lr = cfg.lr_at(step)

        # discriminator: real, fake and the R1 stencil in one forward pass
        idx = rng.integers(0, cfg.n_train, B)
        x, y = X[idx], Y[idx]
        fake = mlp_forward(G, y[:, None])[0][:, 0]
        real = np.column_stack([x, y])
        inp = np.concatenate([real, np.column_stack([fake, y]), _stencil(real, h)])
        out, cache = mlp_forward(D, inp)
        o = out[:, 0]
        lr_, lf = o[:B], o[B : 2 * B]
        d_loss = -np.mean(log_expit(lr_)) - np.mean(log_expit(-lf))
        r1, r1_out = _r1_grad_out(o[2 * B :], B, h, cfg.r1_coeff)
        grad_out = np.concatenate([(expit(lr_) - 1.0) / B, expit(lf) / B, r1_out])
        d_grads, _ = mlp_backward(D, cache, grad_out)
        D, d_state = adam_step(d_state, D, d_grads, lr, **betas)

        # generator: adversarial term plus lam * robustness term
        idx = rng.integers(0, cfg.n_train, B)
        y = Y[idx]
        if cfg.lam > 0:
            z = z_std * z_rng.standard_normal(B)
            g_in = np.concatenate([y, y + z])
        else:
            g_in = y
        g_out, g_cache = mlp_forward(G, g_in[:, None])
        fake = g_out[:B, 0]
        logits, d_cache = mlp_forward(D, np.column_stack([fake, y]))
        lf = logits[:, 0]
        g_loss = -np.mean(log_expit(lf))
        _, gin = mlp_backward(D, d_cache, (expit(lf) - 1.0) / B)
        g_grad_out = gin[:, 0]
        rob = 0.0
        if cfg.lam > 0:
            diff = fake - g_out[B:, 0]
            rob = float(np.mean(diff**2))
            s = cfg.lam * 2 * diff / B
            g_grad_out = np.concatenate([g_grad_out + s, -s])
        g_grads, _ = mlp_backward(G, g_cache, g_grad_out)
        G, g_state = adam_step(g_state, G, g_grads, lr, **betas)

        if not (np.isfinite(d_loss) and np.isfinite(g_loss) and np.isfinite(r1) and np.isfinite(rob)):
            raise TrainingDivergedError(step, f"non-finite loss at step {step}")
        hist["d_loss"][step] = d_loss
        hist["g_loss"][step] = g_loss
        hist["r1"][step] = r1
        hist["lr"][step] = lr
        hist["robustness_loss"][step] = rob

    return TrainedMlp(G, model.sigma_n), TrainHistory(**hist, config=cfg.to_dict())
