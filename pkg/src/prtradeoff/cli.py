"""Command-line front end.

Every command resolves its configuration from built-in defaults, then an
optional ``--config`` JSON file, then explicitly given flags (later wins).
Artifacts go to ``--out``, else ``$PRTRADEOFF_OUT``, else ``./runs``. Each
artifact is written atomically and paired with a ``<name>.config.json``
sidecar holding the resolved configuration.

Exit codes: 0 success, 1 verification failure or training divergence,
2 usage or configuration error.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone

import click
import numpy as np

from prtradeoff import __version__
from prtradeoff.analytics import (
    MSE_KINDS,
    LambdaSweep,
    ZigzagSweep,
    conditional_mse_closed,
    conditional_mse_mc,
    mmse_reference_jemd,
    residual_diagnostics,
    tradeoff_svg,
    tradeoff_sweep,
)
from prtradeoff.errors import (
    InvalidParameterError,
    TooLargeError,
    TrainingDivergedError,
    UndefinedPosteriorError,
    VerificationFailure,
)
from prtradeoff.estimators import from_json, make_dmax, make_mmse, make_posterior_sampler, make_zigzag
from prtradeoff.models import discrete_model, gaussian_toy
from prtradeoff.oracle import verify_theorem
from prtradeoff.rng import DEFAULT_MASTER_SEED, resolve_seed
from prtradeoff.robustness import FPS_STEPS, AttackConfig, fps_explore, kbar_ifgsm, kbar_random
from prtradeoff.training import DEFAULT_LAMBDAS, TrainConfig, train_denoiser
from prtradeoff.transport import empirical_wp

OUT_ENV = "PRTRADEOFF_OUT"

resolve_seeds = resolve_seed


# plumbing


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _resolve(ctx: click.Context, defaults: dict) -> dict:
    """Defaults, overlaid by the --config file, overlaid by explicit flags."""
    cfg = dict(defaults)
    path = ctx.params.get("config")
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise click.UsageError(f"cannot read config {path}: {err}")
        if not isinstance(loaded, dict):
            raise click.UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for name, value in ctx.params.items():
        if name in ("config", "out") or name not in defaults:
            continue
        if ctx.get_parameter_source(name) == click.core.ParameterSource.COMMANDLINE:
            cfg[name] = value
    return cfg


def _out_dir(out: str | None) -> str:
    d = out or os.environ.get(OUT_ENV) or "runs"
    os.makedirs(d, exist_ok=True)
    return d


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(out_dir: str, name: str, text: str, cfg: dict, command: str) -> str:
    path = os.path.join(out_dir, name)
    _atomic_write(path, text)
    _atomic_write(path + ".config.json", _dumps({"command": command, "version": __version__, "config": cfg}))
    click.echo(path)
    return path


def _estimator(cfg: dict):
    model = gaussian_toy(cfg["sigma_n"])
    kind = cfg["estimator"]
    if kind == "mmse":
        return make_mmse(model), model
    if kind == "dmax":
        return make_dmax(model), model
    if kind == "zigzag":
        return make_zigzag(model, cfg["delta"], cfg["q_clip"]), model
    if kind == "checkpoint":
        if not cfg.get("checkpoint"):
            raise InvalidParameterError("--checkpoint is required for estimator 'checkpoint'")
        with open(cfg["checkpoint"]) as fh:
            return from_json(fh.read()), model
    raise InvalidParameterError(f"unknown estimator {kind!r}")


def _run(fn):
    """Map library errors onto exit codes."""
    try:
        fn()
    except (VerificationFailure, TrainingDivergedError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    except (InvalidParameterError, TooLargeError, UndefinedPosteriorError, OSError, KeyError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(2)


_common = [
    click.option("--config", type=click.Path(dir_okay=False), default=None, help="JSON config file."),
    click.option("--out", type=click.Path(file_okay=False), default=None, help=f"Output dir (default ${OUT_ENV} or ./runs)."),
    click.option("--seed", type=int, default=DEFAULT_MASTER_SEED, show_default=True, help="Master seed."),
]

_estimator_opts = [
    click.option("--estimator", type=click.Choice(["mmse", "dmax", "zigzag", "checkpoint"]), default="zigzag",
                 show_default=True),
    click.option("--sigma-n", type=float, default=1.0, show_default=True),
    click.option("--delta", type=float, default=0.25, show_default=True),
    click.option("--q-clip", type=float, default=1e-3, show_default=True),
    click.option("--checkpoint", type=click.Path(dir_okay=False), default=None),
]


def _with(opts):
    def deco(f):
        for o in reversed(opts):
            f = o(f)
        return f

    return deco


def _defaults(ctx: click.Context) -> dict:
    return {p.name: p.default for p in ctx.command.params if p.name not in ("config", "out")}


@click.group()
@click.version_option(__version__)
def main():
    """Perception, distortion and robustness experiments on the Gaussian toy problem."""


@main.command()
@_with(_common)
@click.option("--family", type=click.Choice(["zigzag", "lambda"]), default="zigzag", show_default=True)
@click.option("--deltas", default="1,0.5,0.25,0.125,0.0625", show_default=True)
@click.option("--lambdas", default=",".join(str(v) for v in DEFAULT_LAMBDAS), show_default=True)
@click.option("--sigma-n", type=float, default=1.0, show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True, help="Cell seeds, combined with the master seed.")
@click.option("--n-metric", type=int, default=2000, show_default=True)
@click.option("--n-probe", type=int, default=1000, show_default=True)
@click.option("--sigma-z2", type=float, default=0.2, show_default=True)
@click.option("--probe-var-scale", type=float, default=None, help="Probe variance factor (zigzag 1e-3, lambda 1).")
@click.option("--steps", type=int, default=20000, show_default=True)
@click.option("--paired/--independent", default=True, show_default=True, help="JEMD sample pairing.")
@click.option("--solver", type=click.Choice(["exact", "sinkhorn"]), default="exact", show_default=True)
@click.option("--log-log", is_flag=True, default=False)
@click.option("--no-timestamp", is_flag=True, default=False, help="Omit the SVG timestamp comment.")
@click.pass_context
def sweep(ctx, **_):
    """Tradeoff sweep: JEMD and K-bar along a control grid (CSV + SVG)."""
    cfg = _resolve(ctx, _defaults(ctx))

    def go():
        model = gaussian_toy(cfg["sigma_n"])
        seeds = [resolve_seed(cfg["seed"], ("sweep", s)) for s in _ints(cfg["seeds"])]
        if cfg["family"] == "zigzag":
            scale = 1e-3 if cfg["probe_var_scale"] is None else cfg["probe_var_scale"]
            fam = ZigzagSweep(tuple(_floats(cfg["deltas"])), sigma_z2=cfg["sigma_z2"], probe_var_scale=scale)
        else:
            scale = 1.0 if cfg["probe_var_scale"] is None else cfg["probe_var_scale"]
            fam = LambdaSweep(tuple(_floats(cfg["lambdas"])), TrainConfig.scaled(cfg["steps"]),
                              sigma_z2=cfg["sigma_z2"], probe_var_scale=scale)
        res = tradeoff_sweep(fam, model, cfg["n_metric"], cfg["n_probe"], seeds, cfg["paired"], cfg["solver"])
        out = _out_dir(ctx.params["out"])
        _emit(out, f"sweep_{fam.name}.csv", res.to_csv(), cfg, "sweep")
        stamp = None if cfg["no_timestamp"] else datetime.now(timezone.utc).isoformat(timespec="seconds")
        svg = tradeoff_svg(res.points, cfg["log_log"], f"{fam.name} sweep", timestamp=stamp)
        _emit(out, f"sweep_{fam.name}.svg", svg, cfg, "sweep")
        if any(p.auxiliary["status"] != "ok" for p in res.points):
            raise TrainingDivergedError(-1, "some sweep cells diverged; see the status column")
        if cfg["family"] == "lambda":
            ref = float(np.mean([mmse_reference_jemd(model, cfg["n_metric"], s, cfg["paired"], cfg["solver"])
                                 for s in seeds]))
            click.echo(f"mmse reference jemd: {ref!r}")

    _run(go)


@main.command()
@_with(_common)
@click.option("--lambda", "lam", type=float, default=0.0, show_default=True)
@click.option("--sigma-n", type=float, default=1.0, show_default=True)
@click.option("--sigma-z2", type=float, default=0.2, show_default=True)
@click.option("--z-is-std", is_flag=True, default=False, help="Read --sigma-z2 as a standard deviation.")
@click.option("--steps", type=int, default=20000, show_default=True)
@click.option("--paper-scale", is_flag=True, default=False, help="100k steps, 100k samples, paper LR schedule.")
@click.pass_context
def train(ctx, **_):
    """Train a denoiser; writes the loss history CSV and a checkpoint JSON."""
    cfg = _resolve(ctx, _defaults(ctx))

    def go():
        kw = dict(lam=cfg["lam"], sigma_z2=cfg["sigma_z2"], z_is_std=cfg["z_is_std"], seed=cfg["seed"])
        tc = TrainConfig.paper_scale(**kw) if cfg["paper_scale"] else TrainConfig.scaled(cfg["steps"], **kw)
        e, hist = train_denoiser(gaussian_toy(cfg["sigma_n"]), tc)
        out = _out_dir(ctx.params["out"])
        full = {**cfg, "train_config": tc.to_dict()}
        _emit(out, "history.csv", hist.to_csv(), full, "train")
        _emit(out, "checkpoint.json", _dumps(e.to_dict()), full, "train")

    _run(go)


@main.command()
@_with(_common)
@_with(_estimator_opts)
@click.option("--method", type=click.Choice(["random", "ifgsm"]), default="random", show_default=True)
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--sigma-z2", type=float, default=0.2, show_default=True, help="Probe variance (random).")
@click.option("--alpha", type=float, default=0.1, show_default=True, help="Attack radius (ifgsm).")
@click.option("--steps", "T", type=int, default=10, show_default=True)
@click.pass_context
def kbar(ctx, **_):
    """Average Lipschitz lower bound K-bar of an estimator (JSON)."""
    cfg = _resolve(ctx, _defaults(ctx))

    def go():
        e, model = _estimator(cfg)
        s = resolve_seed(cfg["seed"], "kbar")
        if cfg["method"] == "random":
            val = kbar_random(e, model, cfg["n"], cfg["sigma_z2"], s)
        else:
            val = kbar_ifgsm(e, model, cfg["n"], AttackConfig(cfg["alpha"], cfg["T"], seed=s))
        doc = {"kbar": val, "n": cfg["n"], "alpha": cfg["alpha"], "T": cfg["T"], "method": cfg["method"]}
        _emit(_out_dir(ctx.params["out"]), "kbar.json", _dumps(doc), cfg, "kbar")

    _run(go)


def _read_points(path: str) -> np.ndarray:
    try:
        pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as err:
        raise InvalidParameterError(f"{path}: {err}")
    if pts.size == 0:
        raise InvalidParameterError(f"{path} holds no points")
    return pts


@main.command()
@click.argument("a_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("b_csv", type=click.Path(exists=True, dir_okay=False))
@_with(_common)
@click.option("--ground", type=click.Choice(["l1", "l2"]), default="l1", show_default=True)
@click.option("--p", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option("--solver", type=click.Choice(["auto", "exact", "sinkhorn"]), default="auto", show_default=True)
@click.option("--exact", is_flag=True, default=False, help="Force the exact solver at any size.")
@click.option("--no-timing", is_flag=True, default=False, help="Write runtime_ms as null for byte-stable output.")
@click.pass_context
def emd(ctx, a_csv, b_csv, **_):
    """Empirical Wasserstein distance between two uniformly weighted point CSVs (JSON)."""
    cfg = _resolve(ctx, _defaults(ctx))
    cfg.update(a_csv=a_csv, b_csv=b_csv)

    def go():
        A, B = _read_points(a_csv), _read_points(b_csv)
        p = int(cfg["p"])
        t0 = time.perf_counter()
        res = empirical_wp(A, B, cfg["ground"], p, "exact" if cfg["exact"] else cfg["solver"])
        ms = (time.perf_counter() - t0) * 1e3
        doc = {"cost": res.cost, "wp": res.wp, "p": p, "ground": cfg["ground"], "exact": bool(res.exact),
               "iterations": int(res.iterations), "runtime_ms": None if cfg["no_timing"] else ms}
        _emit(_out_dir(ctx.params["out"]), "emd.json", _dumps(doc), cfg, "emd")

    _run(go)


@main.command()
@_with(_common)
@_with(_estimator_opts)
@click.option("--y", "y", type=float, default=0.37, show_default=True, help="Measurement to explore.")
@click.option("--S", "S", type=int, default=5, show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--steps", "T", type=int, default=FPS_STEPS, show_default=True)
@click.option("--literal", is_flag=True, default=False, help="FPS loss on the newest output only.")
@click.pass_context
def fps(ctx, **_):
    """Farthest-point exploration of an estimator's outputs around one measurement (CSV)."""
    cfg = _resolve(ctx, _defaults(ctx))

    def go():
        e, _ = _estimator(cfg)
        res = fps_explore(e, cfg["y"], cfg["S"], AttackConfig(cfg["alpha"], cfg["T"], fps_literal=cfg["literal"]))
        rows = ["sample_index,y_adv,output"]
        rows += [f"{i},{float(a)!r},{float(o)!r}" for i, (a, o) in enumerate(zip(res.inputs, res.outputs))]
        _emit(_out_dir(ctx.params["out"]), "fps.csv", "\n".join(rows) + "\n", cfg, "fps")

    _run(go)


@main.command()
@_with(_common)
@_with(_estimator_opts)
@click.option("--n", type=int, default=10000, show_default=True)
@click.option("--ys", default="0,1,2,3", show_default=True, help="Measurements for the conditional MSE table.")
@click.option("--n-mc", type=int, default=100000, show_default=True)
@click.pass_context
def diag(ctx, **_):
    """Residual diagnostics and conditional MSE table (JSON)."""
    cfg = _resolve(ctx, _defaults(ctx))

    def go():
        e, model = _estimator(cfg)
        rep = residual_diagnostics(e, model, cfg["n"], resolve_seed(cfg["seed"], "diag/residual"))
        ref = residual_diagnostics(make_posterior_sampler(model, resolve_seed(cfg["seed"], "diag/sampler")),
                                   model, cfg["n"], resolve_seed(cfg["seed"], "diag/residual"))
        table = []
        for y in _floats(cfg["ys"]):
            row = {"y": y, "estimator_mc": conditional_mse_mc(e, model, y, cfg["n_mc"],
                                                               resolve_seed(cfg["seed"], ("diag/mse", y)))}
            row.update({k: conditional_mse_closed(k, model, y) for k in MSE_KINDS})
            table.append(row)
        doc = {"estimator": e.variant, "residual": vars(rep), "posterior_sampler_residual": vars(ref),
               "conditional_mse": table}
        _emit(_out_dir(ctx.params["out"]), "diag.json", _dumps(doc), cfg, "diag")

    _run(go)


@main.command()
@_with(_common)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON {x_vals, y_vals, pmf}.")
@click.option("--p", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option("--gamma-policy", type=click.Choice(["global", "per_map"]), default="global", show_default=True)
@click.pass_context
def oracle(ctx, model_path, **_):
    """Exhaustive check of the Lipschitz lower bound on a discrete model (CSV + JSON)."""
    cfg = _resolve(ctx, _defaults(ctx))
    cfg["model_path"] = model_path

    def go():
        with open(model_path) as fh:
            spec = json.load(fh)
        model = discrete_model(spec["x_vals"], spec["y_vals"], spec["pmf"])
        out = _out_dir(ctx.params["out"])
        try:
            rep = verify_theorem(model, int(cfg["p"]), cfg["gamma_policy"])
        except VerificationFailure as err:
            _emit(out, "oracle_summary.json", _dumps({"all_satisfied": False, "counterexample":
                                                       list(err.counterexample or ())}), cfg, "oracle")
            raise
        rows = ["map_id,wp,k,g,satisfied"]
        rows += [f"{i},{w!r},{k!r},{g!r},{str(s).lower()}" for i, w, k, g, s in rep.rows()]
        _emit(out, "oracle_report.csv", "\n".join(rows) + "\n", cfg, "oracle")
        _emit(out, "oracle_summary.json", _dumps(rep.summary()), cfg, "oracle")

    _run(go)


if __name__ == "__main__":  # pragma: no cover
    main()
