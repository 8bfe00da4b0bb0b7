"""Configuration-driven experiments.

A config is an INI file whose values are JSON::

    [meta]
    schema_version = 1
    experiment = "flow_decay"
    seed = 0

    [model]
    prior = "ou"
    prior_params = {"sigma2": 1.0}
    likelihood = "zero"
    metric = "euclidean"
    metric_params = {"dim": 1}
    domain = [[-8.0], [8.0]]

    [numerics]
    ...

    [outputs]
    dir = "out"

Each experiment reads its own keys from ``[numerics]`` (and ``[metrics]`` or
``[graph]`` where relevant); :data:`SCHEMA` lists them. Results go to the
output directory together with ``report.json``, which holds the config echo,
named scalars, a sha256 manifest of every file written, and the wall time.
Floats are written with 17 significant digits.
"""
import configparser
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import catalog
from .errors import ConfigError
from .functionals import BayesModel
from .geometry import Box, drift_lipschitz, lambda_G
from .grid import Grid, GridDensity, format_density
from .serialize import dumps, fmt_float

__all__ = [
    "SCHEMA_VERSION",
    "EXPERIMENTS",
    "SCHEMA",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "parse_config",
    "validate",
    "run",
    "metric_rank",
    "dumps",
]

SCHEMA_VERSION = 1
EXPERIMENTS = ("lambda_g", "flow_decay", "sampler", "spectral", "graph_ssl", "metric_rank")
STOCHASTIC = ("sampler", "graph_ssl")

# numerics keys per experiment: name -> (required, default)
SCHEMA = {
    "lambda_g": {"sampler": (False, "grid"), "sample_count": (False, 64)},
    "metric_rank": {"sampler": (False, "grid"), "sample_count": (False, 64),
                    "lip_tol": (False, 1e-6)},
    "flow_decay": {"grid": (True, None), "initial": (True, None), "flow": (False, "kl_fp"),
                   "functional": (False, "KL"), "t_end": (True, None),
                   "record_every": (True, None), "dt": (False, None), "window": (False, None),
                   "scheme": (False, "semi-implicit")},
    "sampler": {"process": (False, "langevin"), "N": (True, None), "dt": (True, None),
                "t_end": (True, None), "initial": (True, None), "hist_grid": (False, None),
                "pde_grid": (False, None), "snapshot_every": (False, 0.005),
                "trace_particles": (False, 0), "trace_thin": (False, 1),
                "boundary": (False, "halt")},
    "spectral": {"grid": (True, None), "tol": (False, 1e-8), "max_iter": (False, 1000)},
    "graph_ssl": {"alpha": (False, 1.0), "gamma": (False, 1.0), "epsilon": (False, None),
                  "likelihood": (False, "probit"), "chains": (False, 10), "dt": (False, 0.02),
                  "n_steps": (False, 1000), "burn_in": (False, 100)},
}


@dataclass
class ExperimentConfig:
    """Validated experiment configuration."""

    experiment: str
    model: dict
    numerics: dict
    outputs: dict
    seed: int = None
    metrics: dict = field(default_factory=dict)
    graph: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    source: str = None

    def echo(self):
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "seed": self.seed,
            "model": self.model,
            "numerics": self.numerics,
            "metrics": self.metrics,
            "graph": self.graph,
        }


@dataclass
class ExperimentReport:
    """Config echo, named scalars, output manifest and wall time."""

    config: dict
    scalars: dict
    manifest: dict
    wall_time: float
    out_dir: str = None

    @property
    def result_hash(self):
        """sha256 over scalars and manifest (wall time excluded)."""
        payload = dumps({"scalars": self.scalars, "manifest": self.manifest})
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self):
        return {"config": self.config, "scalars": self.scalars, "manifest": self.manifest,
                "wall_time": self.wall_time, "result_hash": self.result_hash}


def _json_value(section, key, raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{section}.{key}: value is not valid JSON ({exc.msg})",
                          field=f"{section}.{key}") from None


def parse_config(text, source=None):
    """Parse and validate config text."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", field=None) from None
    data = {s: {k: _json_value(s, k, v) for k, v in cp[s].items()} for s in cp.sections()}
    meta = data.get("meta", {})
    if "schema_version" not in meta:
        raise ConfigError("meta.schema_version is required", field="meta.schema_version")
    if meta["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {meta['schema_version']!r}",
                          field="meta.schema_version")
    exp = meta.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"meta.experiment must be one of {EXPERIMENTS}, got {exp!r}",
                          field="meta.experiment")
    cfg = ExperimentConfig(
        experiment=exp,
        model=data.get("model", {}),
        numerics=data.get("numerics", {}),
        outputs=data.get("outputs", {}),
        seed=meta.get("seed"),
        metrics=data.get("metrics", {}),
        graph=data.get("graph", {}),
        source=source,
    )
    try:
        validate(cfg)
    except ConfigError as exc:
        exc.experiment = exp
        raise
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="path") from None
    return parse_config(text, source=os.path.abspath(path))


def _require(cond, message, fld):
    if not cond:
        raise ConfigError(message, field=fld)


def _positive(d, key, section="numerics"):
    v = d.get(key)
    _require(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0
             and math.isfinite(v), f"{section}.{key} must be a positive number", f"{section}.{key}")


def _check_catalog(table, name, fld):
    _require(isinstance(name, str) and name in table,
             f"unknown catalog key {name!r} for {fld}; known: {sorted(table)}", fld)


def _check_grid_spec(spec, fld):
    _require(isinstance(spec, dict) and {"lower", "upper"} <= set(spec)
             and ("dx" in spec or "n" in spec),
             f"{fld} needs lower, upper and dx or n", fld)


def validate(cfg):
    """Check catalog keys, required numerics and ranges; raises :class:`ConfigError`."""
    exp = cfg.experiment
    if exp in STOCHASTIC:
        _require(isinstance(cfg.seed, int) and not isinstance(cfg.seed, bool) and cfg.seed >= 0,
                 f"meta.seed (nonnegative integer) is mandatory for {exp}", "meta.seed")
    elif cfg.seed is not None:
        _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "meta.seed must be a nonnegative integer",
                 "meta.seed")
    if exp != "graph_ssl":
        m = cfg.model
        _check_catalog(catalog.POTENTIALS, m.get("prior"), "model.prior")
        if m.get("likelihood") is not None:
            _check_catalog(catalog.POTENTIALS, m["likelihood"], "model.likelihood")
        if m.get("metric") is not None:
            _check_catalog(catalog.METRICS, m["metric"], "model.metric")
        for key in ("prior_params", "likelihood_params", "metric_params"):
            _require(isinstance(m.get(key, {}), dict), f"model.{key} must be an object", f"model.{key}")
    for key, (required, _) in SCHEMA[exp].items():
        if required:
            _require(key in cfg.numerics, f"numerics.{key} is required for {exp}", f"numerics.{key}")
    unknown = set(cfg.numerics) - set(SCHEMA[exp])
    _require(not unknown, f"unknown numerics keys {sorted(unknown)} for {exp}",
             "numerics." + (sorted(unknown)[0] if unknown else ""))
    n = cfg.numerics
    if exp in ("lambda_g", "metric_rank"):
        _require(isinstance(cfg.model.get("domain"), list), "model.domain is required", "model.domain")
        _require(isinstance(cfg.metrics, dict) and cfg.metrics, "[metrics] needs at least one candidate",
                 "metrics")
        for name, spec in cfg.metrics.items():
            _require(isinstance(spec, dict) and "name" in spec,
                     f"metrics.{name} must be an object with a 'name'", f"metrics.{name}")
            _check_catalog(catalog.METRICS, spec["name"], f"metrics.{name}.name")
        if "sample_count" in n:
            _positive(n, "sample_count")
    if exp == "flow_decay":
        _check_grid_spec(n["grid"], "numerics.grid")
        _positive(n, "t_end")
        _positive(n, "record_every")
        if n.get("dt") is not None:
            _positive(n, "dt")
        _require(n.get("flow", "kl_fp") in ("kl_fp", "chi2_pm"), "numerics.flow must be kl_fp or chi2_pm",
                 "numerics.flow")
        _require(n.get("functional", "KL") in ("KL", "CHI2", "L2", "W2"),
                 "numerics.functional must be KL, CHI2, L2 or W2", "numerics.functional")
    if exp == "sampler":
        _positive(n, "N")
        _positive(n, "dt")
        _positive(n, "t_end")
        _require(n.get("process", "langevin") in ("langevin", "chi2"),
                 "numerics.process must be langevin or chi2", "numerics.process")
        if n.get("process") == "chi2":
            _check_grid_spec(n.get("pde_grid"), "numerics.pde_grid")
    if exp == "spectral":
        _check_grid_spec(n["grid"], "numerics.grid")
    if exp == "graph_ssl":
        g = cfg.graph
        _require("edges" in g or "points" in g, "[graph] needs edges or points", "graph")
        _require(n.get("likelihood", "probit") in ("probit", "logistic", "gl"),
                 "numerics.likelihood must be probit, logistic or gl", "numerics.likelihood")
        for key in ("alpha", "gamma", "dt"):
            if key in n:
                _positive(n, key)
    return cfg


# ---------------------------------------------------------------- builders

def _box(spec):
    try:
        lo, hi = spec
        return Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.domain must be [lower, upper]: {exc}", field="model.domain") from None


def build_model(cfg):
    m = cfg.model
    prior = catalog.make_potential(m["prior"], **m.get("prior_params", {}))
    like = None
    if m.get("likelihood") is not None:
        params = dict(m.get("likelihood_params", {}))
        if m["likelihood"] in ("zero", "constant"):
            params.setdefault("dim", prior.dim)
        like = catalog.make_potential(m["likelihood"], **params)
    metric = None
    if m.get("metric") is not None:
        metric = catalog.make_metric(m["metric"], **m.get("metric_params", {}))
    domain = _box(m["domain"]) if "domain" in m else None
    try:
        return BayesModel(prior, like, metric, domain, name=m["prior"])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"inconsistent model: {exc}", field="model") from None


def _grid(spec):
    if "dx" in spec:
        return Grid.with_spacing(spec["lower"], spec["upper"], spec["dx"])
    return Grid.uniform(spec["lower"], spec["upper"], spec["n"])


def _gaussian_density(grid, spec, fld):
    if not (isinstance(spec, dict) and spec.get("kind", "gaussian") == "gaussian"):
        raise ConfigError(f"{fld} must be {{'kind': 'gaussian', 'mean': ..., 'var': ...}}", field=fld)
    mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=float), (grid.dim,))
    cov = np.asarray(spec.get("var", 1.0), dtype=float)
    cov = np.diag(np.broadcast_to(cov, (grid.dim,))) if cov.ndim < 2 else cov
    P = np.linalg.inv(cov)
    d = grid.points - mean
    return GridDensity(grid, np.exp(-0.5 * np.einsum("ni,ij,nj->n", d, P, d)), normalize=True), mean, cov


class _Writer:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.manifest = {}
        os.makedirs(out_dir, exist_ok=True)

    def write(self, name, text):
        path = os.path.join(self.out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        self.manifest[name] = hashlib.sha256(text.encode()).hexdigest()


# ------------------------------------------------------------- experiments

def _candidate_metrics(cfg):
    return {name: catalog.make_metric(spec["name"], **spec.get("params", {}))
            for name, spec in cfg.metrics.items()}


def _exp_lambda_g(cfg, w):
    model = build_model(cfg)
    n = cfg.numerics
    F = model.potential
    kw = dict(sampler=n.get("sampler", "grid"), sample_count=n.get("sample_count", 64),
              seed=cfg.seed or 0)
    scalars, rows = {}, {}
    for name, G in _candidate_metrics(cfg).items():
        rep = lambda_G(F, G, model.domain, **kw)
        lip = drift_lipschitz(F, G, model.domain, **kw)
        scalars[f"lambda_{name}"] = rep.lambda_
        scalars[f"lip_{name}"] = lip
        rows[name] = {"lambda": rep.lambda_, "lip": lip,
                      "argmin": rep.argmin_point, "on_boundary": rep.on_boundary}
    w.write("lambda_g.json", dumps(rows) + "\n")
    return scalars


def metric_rank(target, candidates, domain, sampler="grid", sample_count=64, seed=0,
                lip_tol=1e-6):
    """Rank constant candidate metrics by ``lambda_G`` among feasible ones.

    A metric is feasible when its drift Lipschitz constant is at most
    ``1 + lip_tol``. Returns rows ``(name, lambda_G, lip, feasible)``:
    feasible metrics first by decreasing ``lambda_G``, then the rest.
    """
    rows = []
    for name, G in candidates.items():
        lam = lambda_G(target, G, domain, sampler, sample_count, seed).lambda_
        lip = drift_lipschitz(target, G, domain, sampler, sample_count, seed)
        rows.append((name, lam, lip, bool(lip <= 1 + lip_tol)))
    return sorted(rows, key=lambda r: (not r[3], -r[1], r[0]))


def _exp_metric_rank(cfg, w):
    model = build_model(cfg)
    n = cfg.numerics
    rows = metric_rank(model.potential, _candidate_metrics(cfg), model.domain,
                       n.get("sampler", "grid"), n.get("sample_count", 64), cfg.seed or 0,
                       n.get("lip_tol", 1e-6))
    lines = ["rank,metric,lambda_G,lip,feasible"]
    for k, (name, lam, lip, ok) in enumerate(rows, 1):
        lines.append(f"{k},{name},{fmt_float(lam)},{fmt_float(lip)},{str(ok).lower()}")
    w.write("metric_rank.csv", "\n".join(lines) + "\n")
    feasible = [r for r in rows if r[3]]
    scalars = {"n_candidates": len(rows), "n_feasible": len(feasible)}
    if feasible:
        scalars["best_metric"] = feasible[0][0]
        scalars["best_lambda"] = feasible[0][1]
    else:
        scalars["best_metric"] = None
    return scalars


def _exp_flow_decay(cfg, w):
    from .flows import decay_curve, stationary_density

    model = build_model(cfg)
    n = cfg.numerics
    grid = _grid(n["grid"])
    init, _, _ = _gaussian_density(grid, n["initial"], "numerics.initial")
    window = tuple(n["window"]) if n.get("window") else None
    curve = decay_curve(model, init, n.get("flow", "kl_fp"), n.get("functional", "KL"),
                        n["t_end"], n["record_every"], dt=n.get("dt"), window=window,
                        scheme=n.get("scheme", "semi-implicit"))
    w.write("decay.csv", curve.to_csv())
    w.write("stationary.txt", format_density(stationary_density(model, grid)))
    return {"fitted_rate": curve.fitted_rate, "final_value": float(curve.values[-1]),
            "initial_value": float(curve.values[0])}


def _exp_sampler(cfg, w):
    from .flows import FlowState, evolve
    from .samplers import (DensitySeries, ParticleEnsemble, chi2_step, ensemble_stats,
                           format_trace, langevin_step, run as run_steps)

    model = build_model(cfg)
    n = cfg.numerics
    N = int(n["N"])
    dt = float(n["dt"])
    steps = int(round(n["t_end"] / dt))
    init = n["initial"]
    mean = np.broadcast_to(np.asarray(init.get("mean", 0.0), dtype=float), (model.dim,))
    cov = np.asarray(init.get("var", 1.0), dtype=float)
    cov = np.diag(np.broadcast_to(cov, (model.dim,))) if cov.ndim < 2 else cov
    ens = ParticleEnsemble.gaussian(N, mean, cov, seed=cfg.seed)
    traced = int(n.get("trace_particles", 0))
    thin = int(n.get("trace_thin", 1))
    rows, tr1 = [(0.0, ens.positions[:traced])] if traced else [], []

    def record(e):
        tr1.append(e.positions[:, 0].copy() if N <= 1000 else e.positions[:1000, 0].copy())
        if traced:
            rows.append((e.t, e.positions[:traced]))

    kw, pde_final = {}, None
    if n.get("process", "langevin") == "chi2":
        pgrid = _grid(n["pde_grid"])
        if pgrid.dim != model.dim:
            raise ConfigError("numerics.pde_grid dimension differs from the model", field="numerics.pde_grid")
        p0, _, _ = _gaussian_density(pgrid, init, "numerics.initial")
        state = FlowState(0.0, p0, None, "explicit")
        every = float(n.get("snapshot_every", 0.005))
        times, snaps = [0.0], [state.rho_tilde(model)]
        k = 1
        while times[-1] < n["t_end"] - 1e-12:
            state = evolve(state, model, "chi2_pm", min(k * every, n["t_end"]))
            times.append(state.t)
            snaps.append(state.rho_tilde(model))
            k += 1
        series = DensitySeries(pgrid, times, snaps)
        step = chi2_step
        kw = {"rho_tilde": series, "boundary": n.get("boundary", "halt")}
        w.write("rho_tilde_final.txt", format_density(GridDensity(pgrid, snaps[-1])))
        w.write("pde_density_final.txt", format_density(state.density))
        pde_final = state.density
    else:
        step = langevin_step
    ens = run_steps(ens, model, dt, steps, step=step, record=record, **kw)
    bins = _grid(n["hist_grid"]) if n.get("hist_grid") else None
    trace = np.array(tr1) if len(tr1) >= 4 else None
    stats = ensemble_stats(ens, bins, trace)
    w.write("stats.json", stats.to_json() + "\n")
    if bins is not None:
        w.write("histogram.txt", format_density(stats.histogram))
    if traced:
        w.write("trace.csv", format_trace(rows, thin=thin))
    scalars = {f"mean_{i + 1}": float(v) for i, v in enumerate(stats.mean)}
    scalars.update({f"var_{i + 1}": float(stats.covariance[i, i]) for i in range(model.dim)})
    scalars["ess_proxy"] = stats.ess_proxy
    scalars["positions_sha256"] = hashlib.sha256(ens.positions.tobytes()).hexdigest()
    if pde_final is not None and bins is not None and bins.dim == 1:
        pde_binned = cell_masses_1d(pde_final, bins)
        hist_mass = stats.histogram.values * bins.weights
        scalars["l1_hist_vs_pde"] = float(np.abs(hist_mass - pde_binned).sum())
    return scalars


def cell_masses_1d(density, bins):
    """Mass of a 1D grid density in the nearest-node cells of ``bins``.

    The density is integrated piecewise linearly; the outer cells extend to
    infinity, matching how the histogram clips outlying particles.
    """
    x = density.grid.axes[0]
    v = density.values.reshape(-1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x))])
    c = bins.axes[0]
    edges = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
    # piecewise-linear density gives a piecewise-quadratic CDF; refine with the exact quadratic
    def F(t):
        t = np.clip(t, x[0], x[-1])
        k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2)
        h = x[k + 1] - x[k]
        s = t - x[k]
        slope = (v[k + 1] - v[k]) / h
        return cdf[k] + v[k] * s + 0.5 * slope * s * s

    return np.diff(F(edges))


def _exp_spectral(cfg, w):
    from .spectral import assemble_weighted_laplacian, spectral_gap

    model = build_model(cfg)
    n = cfg.numerics
    op = assemble_weighted_laplacian(model, _grid(n["grid"]))
    res = spectral_gap(op, tol=n.get("tol", 1e-8), max_iter=int(n.get("max_iter", 1000)))
    w.write("spectral.json", dumps({"lambda2": res.lambda2, "residual": res.residual,
                                    "n_iter": res.n_iter}) + "\n")
    w.write("eigenfunction.txt", res.eigenfunction_text())
    return {"lambda2": res.lambda2, "residual": res.residual, "n_iter": res.n_iter}


def _load_graph(cfg):
    from .graph import build_graph, read_edge_list, read_labels

    g = cfg.graph
    base = os.path.dirname(cfg.source) if cfg.source else os.getcwd()

    def read(path):
        p = path if os.path.isabs(path) else os.path.join(base, path)
        try:
            with open(p) as fh:
                return fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc.strerror}", field="graph") from None

    if "edges" in g:
        W = read_edge_list(read(g["edges"]), g.get("n"))
    else:
        pts = g["points"]
        if isinstance(pts, dict):
            rng = np.random.default_rng(pts.get("seed", cfg.seed))
            X = rng.random((int(pts["n"]), int(pts.get("d", 2))))
        else:
            X = np.asarray(pts, dtype=float)
        W = build_graph(X, float(g.get("r", 0.5)))
    if "labels" in g and isinstance(g["labels"], str):
        idx, y = read_labels(read(g["labels"]))
    else:
        lab = g.get("labels", {})
        idx = np.array([int(k) for k in lab], dtype=int)
        y = np.array([float(v) for v in lab.values()])
    return W, idx, y


def _exp_graph_ssl(cfg, w):
    from .graph import (GraphModel, LatentState, format_label_table, format_vector,
                        map_estimate, objective, posterior_label_summary, run_chains)

    n = cfg.numerics
    W, idx, y = _load_graph(cfg)
    model = GraphModel(W, idx, y, alpha=n.get("alpha", 1.0), gamma=n.get("gamma", 1.0),
                       epsilon=n.get("epsilon"), likelihood=n.get("likelihood", "probit"))
    u_map = map_estimate(model).u
    f, g = objective(model, u_map)
    w.write("map.csv", format_vector(u_map, "u_map"))
    chains = int(n.get("chains", 10))
    state = LatentState(np.tile(u_map, (chains, 1)), seed=cfg.seed)
    state, samples = run_chains(model, state, float(n.get("dt", 0.02)), int(n.get("n_steps", 1000)),
                                burn_in=int(n.get("burn_in", 100)))
    p, se = posterior_label_summary(samples)
    w.write("labels.csv", format_label_table(p, se))
    return {"objective": f, "grad_norm": float(np.linalg.norm(g)),
            "lambda_min_L": model.lambda_min, "n": model.n, "k": model.k,
            "samples_sha256": hashlib.sha256(samples.tobytes()).hexdigest()}


DISPATCH = {
    "lambda_g": _exp_lambda_g,
    "metric_rank": _exp_metric_rank,
    "flow_decay": _exp_flow_decay,
    "sampler": _exp_sampler,
    "spectral": _exp_spectral,
    "graph_ssl": _exp_graph_ssl,
}


def run(cfg, out_dir=None, seed=None):
    """Run a validated config and write its outputs; returns the report.

    ``out_dir`` and ``seed`` override the config values.
    """
    if seed is not None:
        cfg.seed = int(seed)
    validate(cfg)
    out = out_dir or cfg.outputs.get("dir") or "out"
    if cfg.source and not os.path.isabs(out) and out_dir is None:
        out = os.path.join(os.path.dirname(cfg.source), out)
    w = _Writer(out)
    t0 = time.perf_counter()
    scalars = DISPATCH[cfg.experiment](cfg, w)
    wall = time.perf_counter() - t0
    report = ExperimentReport(cfg.echo(), scalars, dict(w.manifest), wall, out)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(dumps(report.to_dict()) + "\n")
    return report
