"""Monte Carlo experiments: config ingestion, replicate loop, aggregation, reporting."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import reduce
from pathlib import Path
from typing import Optional

import numpy as np

from .contrasts import ObservedPath
from .errors import ConfigError, SmallNoiseError
from .estimate import EstimatorOptions, minimize
from .flow import DEFAULT_SUBSTEPS, SamplingGrid
from .models import LinkSpec, ParamBox, get_model
from .optimize import DEFAULT_MAX_STARTS
from .simulate import (
    DEFAULT_SIM_SUBSTEPS,
    discretize,
    emergence_filter,
    jump_mle,
    make_rng,
    simulate_gillespie_sir,
    simulate_sde,
)

log = logging.getLogger(__name__)

# estimator name -> (contrast kind, plot label); "mle" is the jump-process baseline
ESTIMATORS = {
    "mle": (None, 0),
    "cls": ("cls", 1),
    "weighted_beta_known": ("weighted_link", 2),
    "weighted_link": ("weighted_link", 3),
    "small_delta": ("small_delta", 4),
    "weighted_multiplicative": ("weighted_multiplicative", None),
    "gaussian_loglik": ("gaussian_loglik", None),
}
SUMMARY_COLUMNS = ("kind", "n", "param", "mean", "sd", "ci_halfwidth", "coverage", "failures")
REPLICATE_COLUMNS = ("replicate", "stream", "n", "kind", "param", "estimate", "ci_lo", "ci_hi", "converged", "error")
MAX_ATTEMPTS_FACTOR = 200


@dataclass
class ExperimentConfig:
    """One Monte Carlo study; loaded from a JSON document with these keys."""

    model: str
    alpha0: list
    estimators: list
    n_values: list
    beta0: Optional[list] = None
    x0: Optional[list] = None
    epsilon: Optional[float] = None
    N: Optional[int] = None
    m: Optional[int] = None
    T: float = 1.0
    replicates: int = 100
    base_seed: int = 0
    output_dir: str = "results"
    name: str = "experiment"
    emergence_filter: bool = False
    emergence_threshold: float = 0.10
    normalize: bool = True
    alpha_box: Optional[list] = None
    beta_box: Optional[list] = None
    sim_substeps: int = DEFAULT_SIM_SUBSTEPS
    substeps: int = DEFAULT_SUBSTEPS
    max_starts: int = DEFAULT_MAX_STARTS
    max_iter: Optional[int] = None
    xtol: float = 1e-8
    ftol: float = 1e-12
    compute_ci: bool = True
    fix_alpha: bool = False
    jobs: int = 1
    notes: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        missing = [k for k in ("model", "alpha0", "estimators", "n_values") if k not in data]
        if missing:
            raise ConfigError(f"missing config keys: {missing}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def is_sir(self) -> bool:
        return self.model == "sir"

    def validate(self) -> None:
        model = get_model(self.model)
        if not self.estimators:
            raise ConfigError("estimator list is empty")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}; expected one of {sorted(ESTIMATORS)}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("duplicate estimator names")
        if "mle" in self.estimators and not self.is_sir:
            raise ConfigError("the jump MLE baseline needs the sir model")
        if not self.n_values or any(int(n) != n or n < 2 for n in self.n_values):
            raise ConfigError("n_values must be a non-empty list of integers >= 2")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ConfigError("replicates must be an integer >= 1")
        if int(self.base_seed) != self.base_seed or self.base_seed < 0:
            raise ConfigError("base_seed must be a non-negative integer")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if len(self.alpha0) != model.a:
            raise ConfigError(f"alpha0 needs {model.a} values for model {self.model}")
        if self.is_sir:
            if self.N is None or self.m is None:
                raise ConfigError("sir configs need N and m")
            if not 0 < self.m < self.N:
                raise ConfigError("need 0 < m < N")
        else:
            if self.epsilon is None or not self.epsilon > 0:
                raise ConfigError("epsilon must be positive")
            if self.x0 is None or len(self.x0) != model.p:
                raise ConfigError(f"x0 needs {model.p} values for model {self.model}")
        if self.true_beta is None or len(self.true_beta) != model.b:
            raise ConfigError(f"beta0 needs {model.b} values for model {self.model}")
        if self.alpha_box is None:
            raise ConfigError("alpha_box is required")
        if self.box_alpha().dim != model.a:
            raise ConfigError(f"alpha_box needs {model.a} [lower, upper] pairs")
        if not self.box_alpha().contains(self.alpha0):
            raise ConfigError(f"alpha_box does not contain alpha0={self.alpha0}")
        needs_beta_box = any(n in ("small_delta", "gaussian_loglik") for n in self.estimators) or (
            "cls" in self.estimators and self.compute_ci)
        if needs_beta_box:
            if self.beta_box is None:
                raise ConfigError("beta_box is required for small_delta, gaussian_loglik and cls intervals")
            if self.box_beta().dim != model.b:
                raise ConfigError(f"beta_box needs {model.b} [lower, upper] pairs")
            if not self.box_beta().contains(self.true_beta):
                raise ConfigError(f"beta_box does not contain beta0={self.true_beta}")
        if "weighted_link" in self.estimators and model.link.kind != "beta_equals_f_alpha":
            raise ConfigError(f"model {self.model} has no beta = f(alpha) link")
        if "weighted_multiplicative" in self.estimators and model.link.kind != "multiplicative":
            raise ConfigError(f"model {self.model} is not multiplicative in beta")
        for key in ("sim_substeps", "substeps", "max_starts", "jobs"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not 0 <= self.emergence_threshold <= 1:
            raise ConfigError("emergence_threshold must lie in [0, 1]")

    @property
    def true_beta(self):
        if self.beta0 is not None:
            return list(self.beta0)
        if self.is_sir:
            return list(self.alpha0)
        return None

    @property
    def initial_state(self) -> np.ndarray:
        if self.is_sir:
            x0 = np.array([self.N - self.m, self.m], dtype=float)
            return x0 / self.N if self.normalize else x0
        return np.asarray(self.x0, dtype=float)

    def box_alpha(self) -> ParamBox:
        return _box(self.alpha_box, "alpha_box")

    def box_beta(self) -> ParamBox:
        return _box(self.beta_box, "beta_box")


def _box(pairs, what) -> ParamBox:
    try:
        return ParamBox.from_pairs(pairs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


# --- summary types ------------------------------------------------------------------

@dataclass
class SummaryRow:
    kind: str
    n: int
    param: str
    mean: float
    sd: float
    ci_halfwidth: float
    coverage: float
    failures: int

    def as_strings(self) -> list:
        return [self.kind, str(self.n), self.param, repr(float(self.mean)), repr(float(self.sd)),
                repr(float(self.ci_halfwidth)), repr(float(self.coverage)), str(self.failures)]


@dataclass
class McSummary:
    rows: list
    replicates: int
    config: dict = field(default_factory=dict)
    replicate_records: list = field(default_factory=list)

    def row(self, kind: str, n: int, param: str) -> SummaryRow:
        for r in self.rows:
            if r.kind == kind and r.n == n and r.param == param:
                return r
        raise KeyError((kind, n, param))


# --- replicate work ------------------------------------------------------------------

def _estimator_setup(cfg: ExperimentConfig, name: str):
    """Contrast kind, link, search box and beta box for one estimator."""
    model = get_model(cfg.model)
    kind, _ = ESTIMATORS[name]
    link = model.link
    beta_box = cfg.box_beta() if cfg.beta_box is not None else None
    box = cfg.box_alpha()
    if name == "weighted_beta_known":
        link = LinkSpec.fixed(np.asarray(cfg.true_beta, dtype=float))
    if kind in ("small_delta", "gaussian_loglik"):
        box = beta_box if cfg.fix_alpha else box.concat(beta_box)
    return model, kind, link, box, beta_box


def _options(cfg: ExperimentConfig, kind: str) -> EstimatorOptions:
    fix = np.asarray(cfg.alpha0, dtype=float) if cfg.fix_alpha and kind in ("small_delta", "gaussian_loglik") else None
    return EstimatorOptions(
        substeps=cfg.substeps, max_starts=cfg.max_starts, seed=cfg.base_seed, max_iter=cfg.max_iter,
        xtol=cfg.xtol, ftol=cfg.ftol, fix_alpha=fix, compute_info=cfg.compute_ci,
    )


def estimator_param_names(cfg: ExperimentConfig, name: str) -> tuple:
    model = get_model(cfg.model)
    kind, _ = ESTIMATORS[name]
    if kind in ("small_delta", "gaussian_loglik"):
        return (() if cfg.fix_alpha else model.alpha_names) + model.beta_names
    return model.alpha_names


def true_values(cfg: ExperimentConfig, name: str) -> np.ndarray:
    kind, _ = ESTIMATORS[name]
    if kind in ("small_delta", "gaussian_loglik"):
        vals = ([] if cfg.fix_alpha else list(cfg.alpha0)) + list(cfg.true_beta)
        return np.asarray(vals, dtype=float)
    return np.asarray(cfg.alpha0, dtype=float)


def _lcm(values) -> int:
    return reduce(lambda a, b: a * b // math.gcd(a, b), [int(v) for v in values])


def simulate_replicate(cfg: ExperimentConfig, stream: int):
    """``(paths by n, jump trajectory or None)`` for one RNG stream."""
    rng = make_rng(cfg.base_seed, stream)
    if cfg.is_sir:
        lam, gam = cfg.alpha0
        traj = simulate_gillespie_sir(cfg.N, cfg.m, lam, gam, cfg.T, rng)
        paths = {int(n): discretize(traj, SamplingGrid(cfg.T, int(n)), cfg.normalize) for n in cfg.n_values}
        return paths, traj
    model = get_model(cfg.model)
    n_fine = _lcm(cfg.n_values)
    fine = simulate_sde(model, cfg.alpha0, cfg.true_beta, cfg.epsilon, cfg.x0,
                        SamplingGrid(cfg.T, n_fine), cfg.sim_substeps, rng)
    return {int(n): fine.subsample(int(n)) for n in cfg.n_values}, None


def _record(rep, stream, n, name, params, est, cis, converged, error):
    out = []
    for j, param in enumerate(params):
        ci = cis[j] if cis and j < len(cis) else None
        out.append({
            "replicate": rep, "stream": stream, "n": n, "kind": name, "param": param,
            "estimate": float(est[j]) if est is not None else float("nan"),
            "ci_lo": float(ci[0]) if ci is not None else float("nan"),
            "ci_hi": float(ci[1]) if ci is not None else float("nan"),
            "converged": bool(converged), "error": error,
        })
    return out


def run_replicate(cfg: ExperimentConfig, rep: int, stream: int) -> list:
    """Simulate one replicate and run every estimator on every grid."""
    paths, traj = simulate_replicate(cfg, stream)
    records = []
    for n in cfg.n_values:
        n = int(n)
        path: ObservedPath = paths[n]
        for name in cfg.estimators:
            params = estimator_param_names(cfg, name)
            if name == "mle":
                try:
                    lam, gam = jump_mle(traj)
                    records += _record(rep, stream, n, name, params, [lam, gam], None, True, "")
                except SmallNoiseError as exc:
                    records += _record(rep, stream, n, name, params, None, None, False, type(exc).__name__)
                continue
            model, kind, link, box, beta_box = _estimator_setup(cfg, name)
            try:
                res = minimize(kind, model, link, path, box, _options(cfg, kind), beta_box=beta_box)
                records += _record(rep, stream, n, name, params, res.estimates, res.ci_95,
                                   res.optimizer["converged"], "")
            except SmallNoiseError as exc:
                log.info("replicate %d (seed %d, stream %d) n=%d %s failed: %s",
                         rep, cfg.base_seed, stream, n, name, exc)
                records += _record(rep, stream, n, name, params, None, None, False, type(exc).__name__)
    return records


def _run_replicate_star(args):
    return run_replicate(*args)


def select_streams(cfg: ExperimentConfig) -> list:
    """RNG streams of the replicates, skipping SIR paths rejected by the emergence filter."""
    if not (cfg.is_sir and cfg.emergence_filter):
        return list(range(cfg.replicates))
    lam, gam = cfg.alpha0
    streams, stream = [], 0
    limit = MAX_ATTEMPTS_FACTOR * cfg.replicates
    while len(streams) < cfg.replicates:
        if stream >= limit:
            raise ConfigError(f"only {len(streams)} of {limit} SIR paths passed the emergence filter")
        traj = simulate_gillespie_sir(cfg.N, cfg.m, lam, gam, cfg.T, make_rng(cfg.base_seed, stream))
        if emergence_filter(traj, cfg.emergence_threshold):
            streams.append(stream)
        stream += 1
    return streams


def aggregate(cfg: ExperimentConfig, records: list) -> list:
    rows = []
    for name in cfg.estimators:
        truth = true_values(cfg, name)
        for n in cfg.n_values:
            for j, param in enumerate(estimator_param_names(cfg, name)):
                sel = [r for r in records if r["kind"] == name and r["n"] == int(n) and r["param"] == param]
                ok = [r for r in sel if not r["error"]]
                est = np.array([r["estimate"] for r in ok])
                lo = np.array([r["ci_lo"] for r in ok])
                hi = np.array([r["ci_hi"] for r in ok])
                has_ci = np.isfinite(lo) & np.isfinite(hi)
                mean = float(np.mean(est)) if len(est) else float("nan")
                sd = float(np.std(est, ddof=1)) if len(est) > 1 else (0.0 if len(est) else float("nan"))
                half = float(np.mean((hi - lo)[has_ci] / 2)) if has_ci.any() else float("nan")
                cover = (float(np.mean((lo[has_ci] <= truth[j]) & (truth[j] <= hi[has_ci])))
                         if has_ci.any() else float("nan"))
                rows.append(SummaryRow(name, int(n), param, mean, sd, half, cover, len(sel) - len(ok)))
    return rows


def run_experiment(cfg: ExperimentConfig, jobs: Optional[int] = None) -> McSummary:
    """Run all replicates (optionally in a process pool) and aggregate in replicate order."""
    cfg.validate()
    jobs = jobs or cfg.jobs
    streams = select_streams(cfg)
    tasks = [(cfg, rep, stream) for rep, stream in enumerate(streams)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_run_replicate_star, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        per_rep = [_run_replicate_star(t) for t in tasks]
    records = [r for rep in per_rep for r in rep]
    return McSummary(rows=aggregate(cfg, records), replicates=len(streams), config=cfg.to_dict(),
                     replicate_records=records)


# --- reporting ---------------------------------------------------------------------------

def write_summary_csv(summary: McSummary, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in summary.rows:
            w.writerow(r.as_strings())


def read_summary_csv(src) -> list:
    with open(src, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SUMMARY_COLUMNS:
            raise ConfigError(f"{src}: unexpected header {header}")
        return [SummaryRow(k, int(n), p, float(mu), float(sd), float(h), float(c), int(f))
                for k, n, p, mu, sd, h, c, f in reader]


def write_replicates_csv(summary: McSummary, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATE_COLUMNS)
        for r in summary.replicate_records:
            w.writerow([r["replicate"], r["stream"], r["n"], r["kind"], r["param"], repr(r["estimate"]),
                        repr(r["ci_lo"]), repr(r["ci_hi"]), int(r["converged"]), r["error"]])


def plot_rows(summary: McSummary) -> list:
    """Mean and mean theoretical CI per labelled estimator."""
    out = []
    for r in summary.rows:
        label = ESTIMATORS.get(r.kind, (None, None))[1]
        if label is None:
            continue
        out.append({"label": label, "kind": r.kind, "n": r.n, "param": r.param, "mean": r.mean,
                    "ci_lo": r.mean - r.ci_halfwidth, "ci_hi": r.mean + r.ci_halfwidth, "sd": r.sd})
    return out


def report(summary: McSummary, out_dir, figures: bool = False) -> dict:
    """Write summary.csv, summary.json, replicates.csv and plot_data.csv (plus a PNG if asked)."""
    if not summary.rows:
        raise ConfigError("summary is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"summary_csv": out / "summary.csv", "summary_json": out / "summary.json",
             "replicates_csv": out / "replicates.csv", "plot_data": out / "plot_data.csv"}
    write_summary_csv(summary, files["summary_csv"])
    write_replicates_csv(summary, files["replicates_csv"])
    doc = {"config": summary.config, "replicates": summary.replicates,
           "columns": list(SUMMARY_COLUMNS),
           "rows": [[r.kind, r.n, r.param, _json_float(r.mean), _json_float(r.sd),
                     _json_float(r.ci_halfwidth), _json_float(r.coverage), r.failures] for r in summary.rows]}
    with open(files["summary_json"], "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    prow = plot_rows(summary)
    with open(files["plot_data"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "kind", "n", "param", "mean", "ci_lo", "ci_hi", "sd"])
        for r in prow:
            w.writerow([r["label"], r["kind"], r["n"], r["param"], repr(r["mean"]), repr(r["ci_lo"]),
                        repr(r["ci_hi"]), repr(r["sd"])])
    if figures:
        from .plotting import plot_estimates

        files["figure"] = plot_estimates(summary, out / "estimates.png")
    return files


def _json_float(v):
    return None if not np.isfinite(v) else float(v)
