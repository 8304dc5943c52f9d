"""Experiment definitions: configs, per-cell runners and sweep summaries.

A sweep is split into independent cells ``(method, n, replicate)``.  Each
cell builds its model from the config, runs one sampler and returns its
metrics together with the skeleton and samples it produced.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analysis as an
from .core import PhaseState, Skeleton, TargetModel
from .models import (
    CauchyModel,
    GaussianMeanModel,
    LogisticModel,
    NonIdentifiableLogisticModel,
    ProductGaussianModel,
    load_csv,
    synth_gaussian,
    synth_logistic,
    synth_nonident,
)
from .samplers import (
    ConfigurationError,
    MaxEpochs,
    MaxTime,
    RunReport,
    find_reference,
    simulate_zz,
    simulate_zz_cv,
    simulate_zz_hessian,
    simulate_zz_ss,
)

EXPERIMENTS = ("gaussian-mse", "logistic-scaling", "nonidentifiable", "custom")
METHODS = ("zz", "zz-hessian", "zz-ss", "zz-cv", "zz-socv", "mala", "sgld")
MODELS = ("gaussian", "logistic", "nonident", "cauchy", "product")
ZZ_METHODS = ("zz", "zz-hessian", "zz-ss", "zz-cv", "zz-socv")


@dataclass
class ExperimentConfig:
    """Parameters of one sweep; unset fields take experiment-specific defaults."""

    experiment: str = "custom"
    methods: tuple = ("zz",)
    model: str = "gaussian"
    ns: tuple = (100,)
    d: int = 2
    seed: int = 0
    replicates: int = 1
    epochs: float = 1000.0
    max_time: float = 0.0
    burn_in: float = 0.1
    samples: int = 10000
    checkpoints: int = 13
    xi0: tuple = (1.0,)
    sigma: float = 1.0
    rho: float = 1.0
    fixed_data: bool = False
    so_fraction: float = 0.1
    sgld_c1: float = 1.0
    sgld_c2: float = 0.01
    sgld_step_factor: float = 100.0
    sgld_batches: int = 100
    mala_burn_in: float = 0.1
    ess_max_grid: int = 10**6
    horizon_scale: float = 1.0
    record: str = "all"
    write_skeleton: bool = True
    write_samples: bool = True
    data: str = ""
    init: tuple = ()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigurationError(f"unknown methods {bad}; choose from {METHODS}")
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}; choose from {MODELS}")
        if not self.ns or any(int(n) < 1 for n in self.ns):
            raise ConfigurationError("ns must be positive integers")
        if self.replicates < 1 or self.samples < 100:
            raise ConfigurationError("need replicates >= 1 and samples >= 100")
        if not 0 <= self.burn_in < 1:
            raise ConfigurationError("burn_in must lie in [0, 1)")
        if self.epochs <= 0 and self.max_time <= 0:
            raise ConfigurationError("set a positive epochs or max_time")
        if self.record not in ("all", "switches"):
            raise ConfigurationError("record must be 'all' or 'switches'")
        for method in self.methods:
            _check_method(self, method)


DEFAULTS = {
    "gaussian-mse": dict(methods=("zz", "zz-cv", "zz-socv", "sgld"), model="gaussian", ns=(100, 10000),
                         replicates=50, epochs=1000.0, xi0=(1.0,), fixed_data=True, record="switches",
                         write_skeleton=False),
    "logistic-scaling": dict(methods=("zz-hessian", "zz-ss", "zz-cv", "mala"), model="logistic",
                             ns=tuple(2**k for k in range(8, 15)), d=2, replicates=10, epochs=1000.0,
                             xi0=(1.0, 2.0), record="switches", write_skeleton=False),
    "nonidentifiable": dict(methods=("zz", "zz-cv", "sgld"), model="nonident", ns=(1000,), d=2,
                            replicates=1, epochs=10000.0, xi0=(-2.0, 1.0), record="switches"),
    "custom": {},
}

_ALIASES = {"method": "methods", "n": "ns", "xi_true": "xi0"}


def _coerce(name: str, text: str):
    f = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[name]
    default = f.default
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{name}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if name == "methods":
                return tuple(parts)
            if name == "ns":
                return tuple(int(float(p)) for p in parts)
            return tuple(float(p) for p in parts)
        if isinstance(default, int):
            return int(float(text))
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"{name}: cannot parse {text!r}") from exc
    return text


def parse_pairs(pairs) -> dict:
    """Parse ``key=value`` strings into typed config fields."""
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for raw in pairs:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in names:
            raise ConfigurationError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def make_config(pairs=(), overrides=()) -> ExperimentConfig:
    """Build a config from file lines and command-line overrides (later wins)."""
    given = parse_pairs(pairs)
    given.update(parse_pairs(overrides))
    exp = given.get("experiment", "custom")
    if exp not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {exp!r}; choose from {EXPERIMENTS}")
    values = dict(DEFAULTS[exp])
    values.update(given)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def config_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(an.fmt(x) if not isinstance(x, str) else x for x in v)
        elif not isinstance(v, str):
            v = an.fmt(v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# models and methods


@dataclass(frozen=True)
class Cell:
    method: str
    n: int
    replicate: int

    @property
    def key(self) -> str:
        return f"{self.method}_n{self.n}_r{self.replicate}"


def cells(cfg: ExperimentConfig) -> list[Cell]:
    return [Cell(m, int(n), r) for n in cfg.ns for m in cfg.methods for r in range(cfg.replicates)]


def data_seed(cfg: ExperimentConfig, replicate: int) -> int:
    return cfg.seed if cfg.fixed_data else cfg.seed + replicate


def build_model(cfg: ExperimentConfig, n: int, replicate: int = 0) -> TargetModel:
    s = data_seed(cfg, replicate)
    if cfg.model == "gaussian":
        if cfg.data:
            return load_csv(cfg.data, "gaussian", sigma=cfg.sigma, rho=cfg.rho)
        return synth_gaussian(n, cfg.xi0[0], cfg.sigma, s, rho=cfg.rho)
    if cfg.model == "logistic":
        if cfg.data:
            return load_csv(cfg.data, "logistic")
        xi0 = np.broadcast_to(np.asarray(cfg.xi0, dtype=float), (cfg.d,))
        return synth_logistic(n, cfg.d, xi0, s)
    if cfg.model == "nonident":
        if cfg.data:
            return load_csv(cfg.data, "nonident", horizon_scale=cfg.horizon_scale)
        xi0 = tuple(cfg.xi0) if len(cfg.xi0) == 2 else (-2.0, 1.0)
        return synth_nonident(n, xi0, s, horizon_scale=cfg.horizon_scale)
    if cfg.model == "cauchy":
        return CauchyModel()
    if cfg.model == "product":
        return ProductGaussianModel(np.ones(cfg.d))
    raise ConfigurationError(f"unknown model {cfg.model!r}")


def _check_method(cfg: ExperimentConfig, method: str) -> None:
    """Fail early when the model lacks the metadata a method needs."""
    model = build_model(cfg, int(cfg.ns[0]))
    if method == "zz" and model.zz_bounds() is None:
        raise ConfigurationError(f"zz needs rate bounds, which the {cfg.model} model does not provide")
    if method == "zz-hessian" and model.hessian_dominator is None:
        raise ConfigurationError(f"zz-hessian needs a Hessian dominator ({cfg.model} has none)")
    if method == "zz-ss" and model.ss_bounds() is None:
        raise ConfigurationError(f"zz-ss needs per-datum bounds ({cfg.model} has none)")
    if method in ("zz-cv", "zz-socv"):
        probe = find_reference(model.fresh(), init=_guess(cfg, model), max_iter=50)
        if model.cv_bounds(probe) is None:
            raise ConfigurationError(f"{method} needs Lipschitz constants ({cfg.model} has none)")


def _guess(cfg: ExperimentConfig, model: TargetModel) -> np.ndarray:
    if cfg.init:
        return np.broadcast_to(np.asarray(cfg.init, dtype=float), (model.dim,)).copy()
    if isinstance(model, NonIdentifiableLogisticModel):
        return np.array([-1.0, 0.5])
    if isinstance(model, LogisticModel):
        return np.zeros(model.dim)
    return np.zeros(model.dim)


def _stop(cfg: ExperimentConfig):
    return MaxTime(cfg.max_time) if cfg.max_time > 0 else MaxEpochs(cfg.epochs)


def _sampler_seed(cfg: ExperimentConfig, cell: Cell) -> int:
    return cfg.seed + cell.replicate


def run_zigzag(cfg: ExperimentConfig, model: TargetModel, cell: Cell) -> tuple[RunReport, dict]:
    """Run one Zig-Zag variant from the mode (or ``cfg.init``)."""
    seed = _sampler_seed(cfg, cell)
    mode = find_reference(model, init=_guess(cfg, model))
    start = np.asarray(cfg.init, dtype=float) if cfg.init else mode.xi_star
    start = np.broadcast_to(start, (model.dim,))
    init = PhaseState(start, np.ones(model.dim, dtype=np.int8))
    stop = _stop(cfg)
    info = {"mode": mode.xi_star, "mode_converged": mode.converged}
    if cell.method == "zz":
        rep = simulate_zz(model, init, stop, seed=seed, record=cfg.record)
    elif cell.method == "zz-hessian":
        rep = simulate_zz_hessian(model, init, stop, seed=seed, record=cfg.record)
    elif cell.method == "zz-ss":
        rep = simulate_zz_ss(model, init, stop, seed=seed, record=cfg.record)
    else:
        ref = mode
        if cell.method == "zz-socv":
            ref = find_reference(model, init=mode.xi_star, subsample=cfg.so_fraction, seed=seed)
        info["reference"] = ref.xi_star
        rep = simulate_zz_cv(model, ref, init=init, stop=stop, seed=seed, record=cfg.record)
    return rep, info


def sgld_step(cfg: ExperimentConfig, model: TargetModel, mode: np.ndarray) -> tuple[float, int]:
    """Step size and batch size for SGLD under the experiment's convention."""
    n = model.n_data
    if cfg.experiment == "nonidentifiable":
        lam = float(np.linalg.eigvalsh(model.hessian(mode)).max())
        return cfg.sgld_step_factor / lam, max(1, n // cfg.sgld_batches)
    return cfg.sgld_c1 / n, max(1, int(round(cfg.sgld_c2 * n)))


def run_chain(cfg: ExperimentConfig, model: TargetModel, cell: Cell) -> tuple[an.ChainResult, dict]:
    seed = _sampler_seed(cfg, cell)
    mode = find_reference(model, init=_guess(cfg, model)).xi_star
    start = np.asarray(cfg.init, dtype=float) if cfg.init else mode
    n = model.n_data
    if cell.method == "mala":
        total = max(2, int(cfg.epochs))
        burn = int(cfg.mala_burn_in * total)
        h0 = 1.0 / float(np.trace(np.atleast_2d(model.hessian(mode))))
        res = an.mala(model, h0, total - burn, start, seed=seed, burn_in=burn)
        return res, {"step": res.step, "acceptance": res.acceptance}
    h, batch = sgld_step(cfg, model, mode)
    iters = max(1, int(math.ceil(cfg.epochs * n / batch)))
    res = an.sgld(model, h, batch, iters, start, seed=seed)
    return res, {"step": h, "batch_size": batch}


# ---------------------------------------------------------------------------
# per-cell metrics


def checkpoints(cfg: ExperimentConfig) -> np.ndarray:
    """Log-spaced epoch budgets from 1 to ``cfg.epochs``."""
    return np.logspace(0.0, math.log10(cfg.epochs), cfg.checkpoints)


def running_moment(skeleton: Skeleton, i: int, p: int, t_ends: np.ndarray) -> np.ndarray:
    """Time averages of ``xi_i^p`` over ``[0, t]`` for each ``t`` in ``t_ends``."""
    t = skeleton.times
    x = skeleton.positions[:, i]
    v = skeleton.velocities[:, i].astype(float)
    dt = np.diff(t)
    seg = an._segment_integrals(x[:-1], v[:-1], dt, p)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    k = np.clip(np.searchsorted(t, t_ends, side="right") - 1, 0, len(t) - 1)
    part = an._segment_integrals(x[k], v[k], t_ends - t[k], p)
    return (cum[k] + part) / t_ends


def epoch_times(report: RunReport, epochs: np.ndarray) -> np.ndarray:
    """Trajectory times at which the cumulative work first reaches each budget."""
    w = report.work
    target = np.asarray(epochs) * report.n_data
    k = np.minimum(np.searchsorted(w, target, side="left"), len(w) - 1)
    return report.skeleton.times[k]


def truth(model: TargetModel) -> Optional[dict]:
    if isinstance(model, GaussianMeanModel):
        mu, var = model.posterior_mean, model.posterior_var
        return {"m1": mu, "m2": mu * mu + var}
    if isinstance(model, ProductGaussianModel):
        return {"m1": 0.0, "m2": float(model.sigmas[0] ** 2)}
    return None


def run_cell(cfg: ExperimentConfig, cell: Cell) -> dict:
    """Run one cell; returns ``{"metrics", "skeleton", "samples"}``."""
    model = build_model(cfg, cell.n, cell.replicate)
    out: dict = {"skeleton": None, "samples": None}
    met: dict = {"method": cell.method, "n": cell.n, "replicate": cell.replicate,
                 "seed": _sampler_seed(cfg, cell), "dim": model.dim}
    exact = truth(model)
    if exact:
        met["truth_m1"], met["truth_m2"] = exact["m1"], exact["m2"]
    if cell.method in ZZ_METHODS:
        rep, info = run_zigzag(cfg, model, cell)
        met.update(info)
        met.update(epochs=rep.epochs, proposals=rep.proposals, switches=rep.accepted_switches,
                   setup_evals=rep.setup_evals, final_time=rep.skeleton.final_time, wall_time=rep.wall_time)
        sk = rep.skeleton
        samples = an.sample_trajectory(sk, cfg.samples, cfg.burn_in)
        out["skeleton"], out["samples"] = sk, samples
        met["m1"] = [an.integrate_moment(sk, i, 1, cfg.burn_in) for i in range(model.dim)]
        met["m2"] = [an.integrate_moment(sk, i, 2, cfg.burn_in) for i in range(model.dim)]
        _zz_extras(cfg, model, rep, met)
    else:
        res, info = run_chain(cfg, model, cell)
        met.update(info)
        met.update(epochs=res.epochs, diverged=res.diverged, flagged=res.flagged, iterations=len(res.chain))
        chain = res.chain
        idx = np.arange(1, len(chain) + 1, dtype=float)
        out["samples"] = an.SampleSet(idx, chain)
        burn = int(cfg.burn_in * len(chain)) if cell.method == "sgld" else 0
        kept = chain[burn:]
        met["m1"] = kept.mean(axis=0) if len(kept) else np.full(model.dim, np.nan)
        met["m2"] = (kept**2).mean(axis=0) if len(kept) else np.full(model.dim, np.nan)
        _chain_extras(cfg, model, res, met)
    return {"metrics": met, **out}


def _zz_extras(cfg, model, rep: RunReport, met: dict) -> None:
    sk = rep.skeleton
    if cfg.experiment == "gaussian-mse":
        E = checkpoints(cfg)
        ts = np.maximum(epoch_times(rep, E), np.finfo(float).tiny)
        met["checkpoint_epochs"] = E
        met["est_m1"] = running_moment(sk, 0, 1, ts)
        met["est_m2"] = running_moment(sk, 0, 2, ts)
    if cfg.experiment in ("logistic-scaling", "custom") and sk.final_time > 0:
        ess_c, grid = [], []
        for i in range(model.dim):
            try:
                e, m = an.trajectory_ess(sk, i, cfg.burn_in, cfg.ess_max_grid)
            except an.DegenerateSeriesError:
                e, m = 0.0, 0
            ess_c.append(e)
            grid.append(m)
        met["ess"], met["ess_grid"] = ess_c, grid
        met["esspe"] = min(ess_c) / rep.epochs
    if cfg.experiment == "nonidentifiable":
        s = _nonid_s(an.sample_trajectory(sk, cfg.samples, cfg.burn_in).positions)
        met["s_mean"] = float(s.mean())
        met["s_stderr"] = an.mc_stderr(s)


def _chain_extras(cfg, model, res: an.ChainResult, met: dict) -> None:
    chain = res.chain
    if cfg.experiment == "gaussian-mse":
        E = checkpoints(cfg)
        per_iter = res.epochs / max(len(chain), 1)
        k = np.clip(np.ceil(E / per_iter).astype(int), 1, len(chain))
        c1 = np.cumsum(chain[:, 0])
        c2 = np.cumsum(chain[:, 0] ** 2)
        met["checkpoint_epochs"] = E
        met["est_m1"] = c1[k - 1] / k
        met["est_m2"] = c2[k - 1] / k
    if cfg.experiment in ("logistic-scaling", "custom") and len(chain) >= 100:
        try:
            ess_c = [an.ess(chain[:, i]) for i in range(model.dim)]
        except an.DegenerateSeriesError:
            ess_c = [0.0] * model.dim
        met["ess"] = ess_c
        met["esspe"] = min(ess_c) / res.epochs
    if cfg.experiment == "nonidentifiable":
        s = _nonid_s(chain[int(cfg.burn_in * len(chain)):]) if len(chain) else np.array([np.nan])
        met["s_mean"] = float(s.mean()) if np.all(np.isfinite(s)) else float("nan")


def _nonid_s(pos: np.ndarray) -> np.ndarray:
    return pos[:, 0] + pos[:, 1] ** 2


# ---------------------------------------------------------------------------
# sweep summaries


def summarize(cfg: ExperimentConfig, metrics: list[dict]) -> dict:
    """Aggregate cell metrics into per-method tables for the experiment."""
    out: dict = {}
    by = {}
    for m in metrics:
        by.setdefault((m["method"], m["n"]), []).append(m)
    if cfg.experiment == "gaussian-mse":
        for (method, n), ms in sorted(by.items()):
            key = f"{method}/n={n}"
            err1 = np.array([np.asarray(m["est_m1"]) - m["truth_m1"] for m in ms])
            err2 = np.array([np.asarray(m["est_m2"]) - m["truth_m2"] for m in ms])
            R = len(ms)
            row = {
                "epochs": ms[0]["checkpoint_epochs"],
                "mse_m1": np.mean(err1**2, axis=0),
                "mse_m2": np.mean(err2**2, axis=0),
                "mse_m1_stderr": np.std(err1**2, axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(err1.shape[1]),
                "mse_m2_stderr": np.std(err2**2, axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(err2.shape[1]),
            }
            for p in (1, 2):
                final = np.array([np.asarray(m[f"m{p}"])[0] - m[f"truth_m{p}"] for m in ms])
                row[f"final_m{p}_bias"] = float(final.mean())
                row[f"final_m{p}_stderr"] = float(final.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
                row[f"final_m{p}_z"] = (row[f"final_m{p}_bias"] / row[f"final_m{p}_stderr"]
                                        if R > 1 and row[f"final_m{p}_stderr"] > 0 else float("nan"))
            row["last_decade_m2_ratio"] = last_decade_ratio(row["epochs"], row["mse_m2"])
            out[key] = row
    elif cfg.experiment == "logistic-scaling":
        for method in cfg.methods:
            ns, means = [], []
            for n in cfg.ns:
                vals = [m["esspe"] for m in by.get((method, int(n)), []) if "esspe" in m]
                if vals:
                    ns.append(int(n))
                    means.append(float(np.mean(vals)))
            row = {"n": ns, "mean_esspe": means}
            if len(ns) >= 2 and all(v > 0 for v in means):
                row["slope"] = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
            out[method] = row
    elif cfg.experiment == "nonidentifiable":
        for (method, n), ms in sorted(by.items()):
            out[f"{method}/n={n}"] = {
                "s_mean": [m.get("s_mean") for m in ms],
                "diverged": [bool(m.get("diverged", False)) for m in ms],
            }
    return out


def last_decade_ratio(epochs: np.ndarray, mse: np.ndarray) -> float:
    """``MSE(E_max / 10) / MSE(E_max)``: how much the MSE falls over the last decade."""
    epochs = np.asarray(epochs)
    mse = np.asarray(mse)
    k = int(np.argmin(np.abs(np.log10(epochs) - (math.log10(epochs[-1]) - 1.0))))
    return float(mse[k] / mse[-1])


def long_rows(cfg: ExperimentConfig, metrics: list[dict]) -> list[dict]:
    """Scalar metrics flattened to ``(experiment, method, n, seed, metric, value)`` rows."""
    rows = []
    for m in metrics:
        base = dict(experiment=cfg.experiment, method=m["method"], n=m["n"], seed=m["seed"])
        for k in sorted(m):
            if k in ("method", "n", "seed", "replicate"):
                continue
            v = m[k]
            if isinstance(v, (bool, np.bool_, int, float, np.integer, np.floating)):
                rows.append({**base, "metric": k, "value": v})
            elif isinstance(v, (list, tuple, np.ndarray)):
                for j, x in enumerate(np.asarray(v).ravel()):
                    rows.append({**base, "metric": f"{k}[{j}]", "value": x})
    return rows
