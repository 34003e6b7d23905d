"""Conditional MSE, residual-noise diagnostics and tradeoff sweeps."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import spearmanr

from prtradeoff.errors import InvalidParameterError, TrainingDivergedError
from prtradeoff.estimators import Estimator, make_mmse, make_zigzag
from prtradeoff.models import GaussianToyModel, sample_joint
from prtradeoff.rng import make_rng, resolve_seed
from prtradeoff.robustness import TradeoffPoint, kbar_random
from prtradeoff.training import DEFAULT_LAMBDAS, TrainConfig, train_denoiser
from prtradeoff.transport import jemd

MSE_KINDS = ("Mmse", "PosteriorSampler", "Dmax")


def conditional_mse_closed(kind: str, model: GaussianToyModel, y):
    """``E[(X - Xhat)^2 | Y = y]`` for the three analytic estimators."""
    s2 = model.noise_var
    base = 1.0 - 1.0 / (1.0 + s2)
    y = np.asarray(y, dtype=np.float64)
    if kind == "Mmse":
        out = np.full_like(y, base)
    elif kind == "PosteriorSampler":
        out = np.full_like(y, 2.0 * base)
    elif kind == "Dmax":
        c = (np.sqrt(1.0 + s2) - 1.0) / (1.0 + s2)
        out = base + c**2 * y**2
    else:
        raise InvalidParameterError(f"unknown estimator kind {kind!r}; expected one of {MSE_KINDS}")
    return float(out) if out.ndim == 0 else out


def conditional_mse_mc(e: Estimator, model: GaussianToyModel, y: float, n: int, seed: int,
                       return_se: bool = False):
    """Monte-Carlo ``E[(X - f(y))^2 | Y = y]`` from n posterior draws of X.

    A stochastic estimator gets a fresh output for every draw. With
    ``return_se`` the standard error of the estimate is returned as well.
    """
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    rng = make_rng(seed)
    x = model.posterior_mean(float(y)) + model.posterior_std * rng.standard_normal(n)
    yy = np.full(n, float(y))
    xhat = e.evaluate(yy)
    sq = (x - xhat) ** 2
    mse = float(sq.mean())
    if not return_se:
        return mse
    se = float(sq.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return mse, se


def _kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Survival function of the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    k = np.arange(1, terms + 1)
    if lam < 1.0:
        # theta-function form, fast for small arguments
        s = np.sum(np.exp(-((2 * k - 1) ** 2) * np.pi**2 / (8 * lam**2)))
        p = 1.0 - np.sqrt(2 * np.pi) / lam * s
    else:
        p = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * lam**2))
    return float(min(1.0, max(0.0, p)))


def ks_statistic(sample, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic and its asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=np.float64).reshape(-1))
    n = len(x)
    if n == 0:
        raise InvalidParameterError("empty sample")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    d = min(1.0, max(0.0, d))
    return d, _kolmogorov_sf(np.sqrt(n) * d)


@dataclass
class ResidualReport:
    ks_statistic: float
    ks_pvalue: float
    pearson_corr: float
    n: int


def residual_diagnostics(e: Estimator, model: GaussianToyModel, n: int, seed: int) -> ResidualReport:
    """Compare the residual ``Y - Xhat`` with the true noise law and test it against ``Xhat``."""
    if n < 100:
        raise InvalidParameterError("residual diagnostics need n >= 100")
    s = sample_joint(model, n, seed)
    y = s.y[:, 0]
    xhat = np.asarray(e.evaluate(y))
    resid = y - xhat
    sig = model.sigma_n
    stat, p = ks_statistic(resid, lambda t: ndtr(t / sig))
    corr = float(np.corrcoef(resid, xhat)[0, 1])
    return ResidualReport(stat, p, corr, n)


# sweeps


@dataclass(frozen=True)
class ZigzagSweep:
    """Zigzag estimators over bin widths, probed with ``probe_var_scale * sigma_z2``-variance noise."""

    deltas: tuple = (1.0, 0.5, 0.25, 0.125, 0.0625)
    q_clip: float = 1e-3
    sigma_z2: float = 0.2
    probe_var_scale: float = 1e-3
    name = "zigzag"

    @property
    def controls(self) -> tuple:
        return tuple(self.deltas)


@dataclass(frozen=True)
class LambdaSweep:
    """Trained denoisers over robustness weights, probed with ``sigma_z2``-variance noise."""

    lambdas: tuple = DEFAULT_LAMBDAS
    config: TrainConfig = field(default_factory=TrainConfig)
    sigma_z2: float = 0.2
    probe_var_scale: float = 1.0
    name = "lambda"

    @property
    def controls(self) -> tuple:
        return tuple(self.lambdas)


@dataclass
class SweepResult:
    family: str
    cells: list  # one TradeoffPoint per (control, seed) in grid order
    points: list  # seed-aggregated TradeoffPoint per control

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "control", "seed", "jemd", "kbar", "jemd_sd", "kbar_sd", "status"])
        for c in self.cells:
            w.writerow([self.family, repr(c.control), c.seed, repr(c.jemd), repr(c.kbar), "", "",
                        c.auxiliary.get("status", "ok")])
        for p in self.points:
            a = p.auxiliary
            w.writerow([self.family, repr(p.control), "mean", repr(p.jemd), repr(p.kbar),
                        repr(a["jemd_sd"]), repr(a["kbar_sd"]), a["status"]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def spearman(self) -> tuple[float, float]:
        """Rank correlations of the aggregated K-bar and JEMD with the control value."""
        pts = [p for p in self.points if np.isfinite(p.jemd)]
        c = [p.control for p in pts]
        return (float(spearmanr(c, [p.kbar for p in pts])[0]),
                float(spearmanr(c, [p.jemd for p in pts])[0]))


def _build(family, model: GaussianToyModel, control: float, seed: int) -> tuple[Estimator, dict]:
    if isinstance(family, ZigzagSweep):
        return make_zigzag(model, control, family.q_clip), {}
    cfg = family.config.with_(lam=float(control), seed=int(seed))
    e, hist = train_denoiser(model, cfg)
    return e, {"final_d_loss": float(hist.d_loss[-1]), "final_g_loss": float(hist.g_loss[-1])}


def _cell(args) -> TradeoffPoint:
    family, model, control, seed, n_metric, n_probe, paired, solver = args
    metric_seed = resolve_seed(seed, "sweep/metric")
    probe_seed = resolve_seed(seed, "sweep/probe")
    try:
        e, aux = _build(family, model, control, seed)
    except TrainingDivergedError as err:
        return TradeoffPoint(control, float("nan"), float("nan"), n_metric, seed,
                             {"status": "diverged", "diverged_step": err.step})
    j_pair = jemd(e, model, n_metric, metric_seed, solver=solver, paired=True)
    j_ind = jemd(e, model, n_metric, metric_seed, solver=solver, paired=False)
    kbar = kbar_random(e, model, n_probe, family.sigma_z2 * family.probe_var_scale, probe_seed)
    aux.update(status="ok", jemd_paired=j_pair, jemd_independent=j_ind)
    return TradeoffPoint(control, j_pair if paired else j_ind, kbar, n_metric, seed, aux)


def tradeoff_sweep(family, model: GaussianToyModel, n_metric: int, n_probe: int, seeds=(0,),
                   paired: bool = True, solver: str = "exact", workers: int = 1) -> SweepResult:
    """Evaluate JEMD and K-bar for every control value and seed of ``family``.

    Every cell derives its randomness from its seed alone; all controls share
    the same metric and probe draws for a given seed. Cells whose training
    diverges are flagged and left out of the aggregates. ``workers > 1`` runs
    cells in separate processes; results are identical and in grid order.
    """
    controls = family.controls
    if len(controls) == 0:
        raise InvalidParameterError("empty sweep grid")
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) == 0:
        raise InvalidParameterError("need at least one seed")
    jobs = [(family, model, float(c), s, n_metric, n_probe, paired, solver) for c in controls for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell, jobs))
    else:
        cells = [_cell(j) for j in jobs]

    points = []
    for k, c in enumerate(controls):
        group = cells[k * len(seeds) : (k + 1) * len(seeds)]
        ok = [g for g in group if g.auxiliary["status"] == "ok"]
        if ok:
            j = np.array([g.jemd for g in ok])
            kb = np.array([g.kbar for g in ok])
            aux = {"jemd_sd": float(j.std(ddof=1)) if len(ok) > 1 else 0.0,
                   "kbar_sd": float(kb.std(ddof=1)) if len(ok) > 1 else 0.0,
                   "n_ok": len(ok), "status": "ok" if len(ok) == len(group) else "partial"}
            points.append(TradeoffPoint(float(c), float(j.mean()), float(kb.mean()), n_metric, "mean", aux))
        else:
            aux = {"jemd_sd": float("nan"), "kbar_sd": float("nan"), "n_ok": 0, "status": "failed"}
            points.append(TradeoffPoint(float(c), float("nan"), float("nan"), n_metric, "mean", aux))
    return SweepResult(family.name, cells, points)


def mmse_reference_jemd(model: GaussianToyModel, n_metric: int, seed: int, paired: bool = True,
                        solver: str = "exact") -> float:
    """JEMD of the posterior mean on the same evaluation sample a sweep cell with ``seed`` uses."""
    return jemd(make_mmse(model), model, n_metric, resolve_seed(seed, "sweep/metric"), solver=solver,
                paired=paired)


def tradeoff_svg(points, log_log: bool = False, title: str = "K-bar vs JEMD",
                 timestamp: str | None = None, width: int = 480, height: int = 360) -> str:
    """A self-contained SVG line chart of K-bar against JEMD."""
    pts = [(p.jemd, p.kbar, p.control) for p in points if np.isfinite(p.jemd) and np.isfinite(p.kbar)]
    if not pts:
        raise InvalidParameterError("nothing to plot")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if log_log:
        if np.any(xs <= 0) or np.any(ys <= 0):
            raise InvalidParameterError("log-log plot needs positive values")
        xs, ys = np.log10(xs), np.log10(ys)
    m = 50

    def scale(v, lo, hi, a, b):
        return (a + b) / 2 if hi == lo else a + (v - lo) / (hi - lo) * (b - a)

    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    px = [scale(v, x0, x1, m, width - m / 2) for v in xs]
    py = [scale(v, y0, y1, height - m, m / 2) for v in ys]
    pre = "log10 " if log_log else ""
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if timestamp is not None:
        out.append(f"<!-- generated {timestamp} -->")
    out += [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13" font-family="sans-serif">{title}</text>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m / 2}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{m}" y2="{m / 2}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{pre}JEMD</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 14 {height / 2})">{pre}K-bar</text>',
        f'<text x="{m}" y="{height - m + 14}" font-size="10" font-family="sans-serif">{x0:.3g}</text>',
        f'<text x="{width - m / 2}" y="{height - m + 14}" text-anchor="end" font-size="10" '
        f'font-family="sans-serif">{x1:.3g}</text>',
        f'<text x="{m - 4}" y="{height - m}" text-anchor="end" font-size="10" font-family="sans-serif">{y0:.3g}</text>',
        f'<text x="{m - 4}" y="{m / 2 + 8}" text-anchor="end" font-size="10" font-family="sans-serif">{y1:.3g}</text>',
        '<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="'
        + " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py)) + '"/>',
    ]
    for a, b, (_, _, c) in zip(px, py, pts):
        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3.5" fill="steelblue"/>')
        out.append(f'<text x="{a + 5:.2f}" y="{b - 5:.2f}" font-size="9" font-family="sans-serif">{c:g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
