"""Command line entry point: ``smallnoise {simulate,estimate,mc,oracle}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, SmallNoiseError
from .estimate import EstimatorOptions, minimize
from .flow import DEFAULT_SUBSTEPS, SamplingGrid
from .harness import ESTIMATORS, ExperimentConfig, report, run_experiment
from .models import LinkSpec, ParamBox, get_model
from .optimize import DEFAULT_MAX_STARTS
from .simulate import (
    DEFAULT_SIM_SUBSTEPS,
    discretize,
    make_rng,
    read_path_csv,
    simulate_gillespie_sir,
    simulate_sde,
    write_jumps_csv,
    write_path_csv,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smallnoise", description="Minimum contrast estimation for small-noise diffusions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-replicate failures")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate one path and write it as CSV")
    s.add_argument("--config", help="JSON file with the keys below (flags override)")
    s.add_argument("--model")
    s.add_argument("--alpha", type=_floats)
    s.add_argument("--beta", type=_floats)
    s.add_argument("--x0", type=_floats)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--N", type=int, help="SIR population size")
    s.add_argument("--m", type=int, help="SIR initial infected")
    s.add_argument("--T", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--sim-substeps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--stream", type=int, default=0)
    s.add_argument("--no-normalize", action="store_true", help="keep SIR counts")
    s.add_argument("--out", required=True, help="path CSV to write")
    s.add_argument("--jumps-out", help="SIR only: also write the jump CSV")

    e = sub.add_parser("estimate", help="estimate parameters from a path CSV")
    e.add_argument("--path", required=True)
    e.add_argument("--config", required=True, help="JSON: model, kind, epsilon, alpha_box, beta_box, ...")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="JSON result file (default: stdout)")

    mc = sub.add_parser("mc", help="run a Monte Carlo experiment")
    mc.add_argument("--config", required=True)
    mc.add_argument("--seed", type=int)
    mc.add_argument("--replicates", type=int)
    mc.add_argument("--out")
    mc.add_argument("--jobs", type=int)
    mc.add_argument("--figures", action="store_true", help="also render estimates.png")

    o = sub.add_parser("oracle", help="run the closed-form CIR/OU checks")
    o.add_argument("--substeps", type=int, default=DEFAULT_SUBSTEPS)
    return p


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    for key, flag in (("model", "model"), ("alpha0", "alpha"), ("beta0", "beta"), ("x0", "x0"),
                      ("epsilon", "epsilon"), ("N", "N"), ("m", "m"), ("T", "T"), ("n", "n"),
                      ("sim_substeps", "sim_substeps"), ("base_seed", "seed")):
        val = getattr(args, flag)
        if val is not None:
            cfg[key] = val
    if "model" not in cfg:
        raise ConfigError("simulate needs --model")
    model = get_model(cfg["model"])
    n = cfg.get("n") or (max(cfg["n_values"]) if cfg.get("n_values") else None)
    if n is None:
        raise ConfigError("simulate needs --n")
    grid = SamplingGrid(float(cfg.get("T", 1.0)), int(n))
    rng = make_rng(int(cfg.get("base_seed", 0)), args.stream)
    if "alpha0" not in cfg:
        raise ConfigError("simulate needs --alpha")
    if model.name == "sir":
        if "N" not in cfg or "m" not in cfg:
            raise ConfigError("sir simulation needs --N and --m")
        lam, gam = cfg["alpha0"]
        traj = simulate_gillespie_sir(cfg["N"], cfg["m"], lam, gam, grid.T, rng)
        path = discretize(traj, grid, normalize=not args.no_normalize)
        if args.jumps_out:
            write_jumps_csv(traj, args.jumps_out)
        print(f"epsilon={path.epsilon!r}")
    else:
        for key in ("beta0", "x0", "epsilon"):
            if key not in cfg:
                raise ConfigError(f"simulate needs {key}")
        path = simulate_sde(model, cfg["alpha0"], cfg["beta0"], float(cfg["epsilon"]), cfg["x0"], grid,
                            int(cfg.get("sim_substeps", DEFAULT_SIM_SUBSTEPS)), rng)
    write_path_csv(path, args.out, model.state_names)
    return EXIT_OK


ESTIMATE_KEYS = {"model", "kind", "epsilon", "alpha_box", "beta_box", "beta0", "substeps", "max_starts",
                 "seed", "max_iter", "xtol", "ftol", "fix_alpha", "compute_ci"}


def cmd_estimate(args) -> int:
    cfg = _load_json(args.config)
    unknown = sorted(set(cfg) - ESTIMATE_KEYS)
    if unknown:
        raise ConfigError(f"unknown estimate config keys: {unknown}")
    for key in ("model", "kind", "epsilon", "alpha_box"):
        if key not in cfg:
            raise ConfigError(f"estimate config needs {key!r}")
    model = get_model(cfg["model"])
    name = cfg["kind"]
    if name not in ESTIMATORS or name == "mle":
        raise ConfigError(f"unknown contrast estimator {name!r}")
    kind = ESTIMATORS[name][0]
    path = read_path_csv(args.path, float(cfg["epsilon"]), expect_p=model.p)
    link = model.link
    if name == "weighted_beta_known":
        if "beta0" not in cfg:
            raise ConfigError("weighted_beta_known needs beta0")
        link = LinkSpec.fixed(np.asarray(cfg["beta0"], dtype=float))
    box = ParamBox.from_pairs(cfg["alpha_box"])
    beta_box = ParamBox.from_pairs(cfg["beta_box"]) if cfg.get("beta_box") else None
    fix = cfg.get("fix_alpha")
    if kind in ("small_delta", "gaussian_loglik"):
        if beta_box is None:
            raise ConfigError(f"{name} needs beta_box")
        box = beta_box if fix is not None else box.concat(beta_box)
    opts = EstimatorOptions(
        substeps=int(cfg.get("substeps", DEFAULT_SUBSTEPS)),
        max_starts=int(cfg.get("max_starts", DEFAULT_MAX_STARTS)),
        seed=int(args.seed if args.seed is not None else cfg.get("seed", 0)),
        max_iter=cfg.get("max_iter"), xtol=float(cfg.get("xtol", 1e-8)), ftol=float(cfg.get("ftol", 1e-12)),
        fix_alpha=None if fix is None else np.asarray(fix, dtype=float),
        compute_info=bool(cfg.get("compute_ci", True)),
    )
    res = minimize(kind, model, link, path, box, opts, beta_box=beta_box)
    doc = res.to_dict()
    doc["estimator"] = name
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_mc(args) -> int:
    data = _load_json(args.config)
    if args.seed is not None:
        data["base_seed"] = args.seed
    if args.replicates is not None:
        data["replicates"] = args.replicates
    if args.out is not None:
        data["output_dir"] = args.out
    if args.jobs is not None:
        data["jobs"] = args.jobs
    cfg = ExperimentConfig.from_dict(data)
    t0 = time.perf_counter()
    summary = run_experiment(cfg)
    files = report(summary, cfg.output_dir, figures=args.figures)
    failures = sum(r.failures for r in summary.rows)
    print(f"{cfg.name}: {summary.replicates} replicates, {failures} failed estimates, "
          f"{time.perf_counter() - t0:.1f} s")
    for f in files.values():
        print(f"  wrote {f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import run_oracle

    checks = run_oracle(substeps=args.substeps)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc": cmd_mc, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SmallNoiseError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
