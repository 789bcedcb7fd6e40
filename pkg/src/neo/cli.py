"""Command-line runner for replicated NEO experiments.

Usage::

    python -m neo estimate-z --config run.json --seed 3 --replicates 100 --workers 4 --out z.csv
    python -m neo sample --target=mg25 --dim=2 --N=10 --n_iters=100000

Every config key can be given in the JSON config file or as ``--key=value``
(values are parsed as JSON when possible). Results go to a CSV file with a
fixed header plus a JSON summary next to it. Exit codes: 0 success, 2 config
error, 3 runtime error.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .core import NeoError, RngStream, point_mass_weights, uniform_window_weights
from .estimators import efficiency_curve, neo_is, neo_snis, plain_is
from .targets import PhaseTarget, make_target, mg25_means, phase_transform
from .transforms import Identity

SCHEMA_VERSION = 1
EXPERIMENTS = ("estimate-z", "sample", "efficiency-curve", "converge-h", "neis-compare")


class ConfigError(Exception):
    pass


COMMON = {
    "seed": 0,
    "replicates": 1,
    "workers": 1,
    "out": "neo_results.csv",
    "target": "mg25",
    "dim": 2,
    "sigma2": 5.0,
    "target_params": {},
    "transform": "conformal",
    "gamma": 1.0,
    "h": 0.1,
    "K": 10,
    "mass": 1.0,
}

DEFAULTS = {
    "estimate-z": {"method": "neo-is", "n_samples": 1000, "chunk": 4096},
    "sample": {
        "kernel": "neo",
        "N": 10,
        "proposal_mode": "independent",
        "alpha": None,
        "n_iters": 1000,
        "thin": 1,
        "prefetch": 256,
    },
    "efficiency-curve": {
        "n_samples": 10000,
        "K_values": [0, 1, 2, 5, 10],
        "gamma_values": [0.5, 1.0, 2.0],
    },
    "converge-h": {
        "target": "gaussian_L_1d",
        "dim": 1,
        "h_values": [0.2, 0.1, 0.05, 0.025],
        "x": [0.5, 0.3],
        "window": 1.0,
    },
    "neis-compare": {
        "dim": 5,
        "target_params": {"cov_override": 0.005},
        "n_samples": 2000,
        "neis_n": 2000,
        "quadrature_steps": [0.1, 0.05, 0.02, 0.01],
        "neo_h_values": [0.1],
        "time_cap": 15.0,
        "box_q": 12.0,
        "box_p": 60.0,
        # null ties the integrator step to each quadrature step
        "steps_per_unit": None,
    },
}

CHOICES = {
    "transform": ("conformal", "identity"),
    "method": ("neo-is", "plain-is", "neo-snis"),
    "kernel": ("neo", "isir"),
    "proposal_mode": ("independent", "autoregressive"),
}

POSITIVE = {"replicates", "workers", "dim", "sigma2", "gamma", "h", "mass", "n_samples", "chunk",
            "N", "thin", "prefetch", "window", "neis_n", "time_cap", "box_q", "box_p",
            "steps_per_unit"}
NONNEGATIVE = {"K", "n_iters", "seed"}


def _defaults(experiment):
    out = dict(COMMON)
    out.update(DEFAULTS[experiment])
    return out


def _check_type(key, value, default):
    if default is None or key == "alpha":
        if value is None or isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value) if value is not None else None
        raise ConfigError(f"config key '{key}' must be a number or null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{key}' must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"config key '{key}' must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key '{key}' must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"config key '{key}' must be a non-empty list")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"config key '{key}' must be a list of numbers") from None
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"config key '{key}' must be an object")
        return dict(value)
    return value


def validate_config(experiment, raw):
    """Merge ``raw`` over the experiment defaults and validate every key."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = _defaults(experiment)
    for key, value in raw.items():
        if key == "experiment":
            if value != experiment:
                raise ConfigError(f"config key 'experiment' is {value!r}, subcommand is {experiment!r}")
            continue
        if key not in cfg:
            raise ConfigError(f"unknown config key '{key}' for {experiment}")
        cfg[key] = _check_type(key, value, cfg[key])
    for key, allowed in CHOICES.items():
        if key in cfg and cfg[key] not in allowed:
            raise ConfigError(f"config key '{key}' must be one of {allowed}, got {cfg[key]!r}")
    for key in POSITIVE & cfg.keys():
        if cfg[key] is not None and not cfg[key] > 0:
            raise ConfigError(f"config key '{key}' must be positive")
    for key in NONNEGATIVE & cfg.keys():
        if cfg[key] < 0:
            raise ConfigError(f"config key '{key}' must be >= 0")
    if experiment == "sample":
        if cfg["N"] < 2:
            raise ConfigError("config key 'N' must be >= 2")
        if cfg["proposal_mode"] == "autoregressive":
            a = cfg["alpha"]
            if a is None or not 0 < a < 1:
                raise ConfigError("config key 'alpha' must be in (0, 1) for autoregressive proposals")
    if experiment == "converge-h":
        hs = cfg["h_values"]
        if any(h <= 0 for h in hs) or any(b >= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("config key 'h_values' must be positive and strictly decreasing")
    try:
        _build_base(cfg)
    except NeoError as exc:
        raise ConfigError(f"config key 'target': {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"config key 'target_params': {exc}") from None
    cfg["experiment"] = experiment
    return cfg


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


# -- building blocks ------------------------------------------------------------

def _build_base(cfg):
    params = dict(cfg["target_params"])
    if cfg["target"] != "gaussian_L_1d":
        params.setdefault("sigma2", cfg["sigma2"])
    return make_target(cfg["target"], cfg["dim"], **params)


def _build(cfg, gamma=None, h=None):
    """``(target, transform)``; the conformal map lives in momentum-augmented space."""
    base = _build_base(cfg)
    if cfg["transform"] == "identity":
        return base, Identity()
    return phase_transform(base, cfg["gamma"] if gamma is None else gamma,
                           cfg["h"] if h is None else h, cfg["mass"])


def _stream(cfg, replicate):
    return RngStream(cfg["seed"], replicate)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if v == -math.inf:
            return "-inf"
        if v == math.inf:
            return "inf"
        return repr(v)
    return str(v)


# -- per-replicate workers ------------------------------------------------------

HEADERS = {
    "estimate-z": ["experiment", "replicate", "seed", "method", "target", "dim", "gamma", "h", "K",
                   "n_samples", "estimate", "rel_var", "n_evals", "degenerate"],
    "efficiency-curve": ["experiment", "replicate", "seed", "target", "dim", "gamma", "h", "K",
                         "E_hat", "E_stderr", "E_IS"],
    "converge-h": ["experiment", "h", "discrete", "continuous", "error", "ratio"],
    "neis-compare": ["experiment", "replicate", "seed", "method", "target", "dim", "gamma", "step",
                     "K", "n", "z_hat", "std_err", "n_evals", "n_capped"],
}


def _estimate_z(cfg, r):
    rng = _stream(cfg, r)
    method = cfg["method"]
    K = cfg["K"]
    if method == "plain-is":
        base = _build_base(cfg)
        rep = plain_is(base, cfg["n_samples"], rng, keep_samples=False, chunk=cfg["chunk"])
        est, rel, evals, deg = rep.log_Z_hat, rep.rel_var_hat, rep.n_evals, rep.degenerate
    else:
        target, tr = _build(cfg)
        w = uniform_window_weights(K)
        if method == "neo-is":
            rep = neo_is(target, tr, w, cfg["n_samples"], rng, keep_samples=False, chunk=cfg["chunk"])
            est, rel, evals, deg = rep.log_Z_hat, rep.rel_var_hat, rep.n_evals, rep.degenerate
        else:
            snis = neo_snis(target, tr, w, lambda q: q[..., 0], cfg["n_samples"], rng, chunk=cfg["chunk"])
            span = w.span[1] - w.span[0] + 1
            est, rel, evals, deg = snis.estimate, float("nan"), cfg["n_samples"] * span, False
    row = ["estimate-z", r, cfg["seed"], method, cfg["target"], cfg["dim"], cfg["gamma"], cfg["h"], K,
           cfg["n_samples"], est, rel, evals, deg]
    return [row], {"n_evals": evals}


def _efficiency(cfg, r):
    rng = _stream(cfg, r)

    def make(gamma):
        return _build(cfg, gamma=gamma)

    target, tr = make(cfg["gamma_values"][0])
    rows = []
    table = efficiency_curve(target, tr, [int(k) for k in cfg["K_values"]], cfg["gamma_values"],
                             cfg["n_samples"], rng, make_transform=make)
    for t in table:
        rows.append(["efficiency-curve", r, cfg["seed"], cfg["target"], cfg["dim"], t["gamma"],
                     cfg["h"], t["K"], t["E_hat"], t["E_stderr"], t["E_IS"]])
    return rows, {}


def _converge(cfg, r):
    from .continuous import theorem9_convergence

    base = _build_base(cfg)
    table = theorem9_convergence(np.asarray(cfg["x"]), base, cfg["gamma"], cfg["window"],
                                 cfg["h_values"])
    rows = [["converge-h", t["h"], t["discrete"], t["continuous"], t["error"], t["ratio"]]
            for t in table]
    return rows, {}


def _neis_compare(cfg, r):
    from .continuous import conformal_field, neis_estimate
    from .orbit import Box

    base = _build_base(cfg)
    d = base.dim
    rows = []
    info = {}
    for h in cfg["neo_h_values"]:
        target, tr = phase_transform(base, cfg["gamma"], h, cfg["mass"])
        rep = neo_is(target, tr, uniform_window_weights(cfg["K"]), cfg["n_samples"],
                     RngStream(cfg["seed"], 3 * r), keep_samples=True)
        z = np.exp(rep.per_sample_log_Zhat)
        rows.append(["neis-compare", r, cfg["seed"], "neo-is", cfg["target"], d, cfg["gamma"], h,
                     cfg["K"], cfg["n_samples"], float(z.mean()),
                     float(z.std(ddof=1) / np.sqrt(z.size)), rep.n_evals, 0])
    phase = PhaseTarget(base, cfg["mass"])
    box = Box(np.r_[np.full(d, -cfg["box_q"]), np.full(d, -cfg["box_p"])],
              np.r_[np.full(d, cfg["box_q"]), np.full(d, cfg["box_p"])])
    for step in cfg["quadrature_steps"]:
        spu = cfg["steps_per_unit"] or max(1, round(1 / step))
        flow_cfg = conformal_field(base.grad_U, cfg["gamma"], phase.mass_diag, int(spu))
        # common random numbers across quadrature steps
        rep = neis_estimate(phase, flow_cfg, box, cfg["neis_n"], RngStream(cfg["seed"], 3 * r + 1),
                            step, time_cap=cfg["time_cap"])
        z = np.exp(rep.per_sample_log_Zhat)
        rows.append(["neis-compare", r, cfg["seed"], "neis", cfg["target"], d, cfg["gamma"], step,
                     "", cfg["neis_n"], float(z.mean()), float(z.std(ddof=1) / np.sqrt(z.size)),
                     rep.n_evals, rep.extra["n_capped"]])
    plain = plain_is(base, cfg["n_samples"] * (2 * cfg["K"] + 1), RngStream(cfg["seed"], 3 * r + 2))
    z = np.exp(plain.per_sample_log_Zhat)
    rows.append(["neis-compare", r, cfg["seed"], "plain-is", cfg["target"], d, "", "", "",
                 z.size, float(z.mean()), float(z.std(ddof=1) / np.sqrt(z.size)), plain.n_evals, 0])
    return rows, info


def _sample(cfg, r):
    from .mcmc import KernelConfig, mode_occupancy, run_chain, run_isir

    rng = _stream(cfg, r)
    K = cfg["K"]
    if cfg["kernel"] == "isir":
        target, tr, w = _build_base(cfg), Identity(), point_mass_weights()
    else:
        target, tr = _build(cfg)
        w = uniform_window_weights(K)
    kc = KernelConfig(cfg["N"], w, tr, cfg["proposal_mode"], cfg["alpha"], None, cfg["prefetch"])
    runner = run_isir if cfg["kernel"] == "isir" else run_chain
    out = runner(None, kc, target, cfg["n_iters"], rng)
    pos = np.asarray(target.position(out.samples)).reshape(cfg["n_iters"], target.position_dim)
    thin = cfg["thin"]
    rows = [["sample", r, i] + list(pos[i]) for i in range(0, cfg["n_iters"], thin)]
    span = w.span[1] - w.span[0] + 1
    info = {
        "acceptance_rate": out.acceptance_rate,
        "ess": [float(e) for e in np.ravel(out.ess)[: pos.shape[1]]],
        "n_evals": int(cfg["n_iters"] * (cfg["N"] - 1) * span),
    }
    if cfg["target"] == "mg25" and cfg["n_iters"] > 0:
        occ = mode_occupancy(pos[:, :2], mg25_means(2))
        info["mode_occupancy"] = [float(o) for o in occ]
    return rows, info


RUNNERS = {
    "estimate-z": _estimate_z,
    "sample": _sample,
    "efficiency-curve": _efficiency,
    "converge-h": _converge,
    "neis-compare": _neis_compare,
}


def _task(args):
    cfg, r = args
    t0 = time.perf_counter()
    rows, info = RUNNERS[cfg["experiment"]](cfg, r)
    return r, rows, info, time.perf_counter() - t0


def _header(cfg):
    if cfg["experiment"] == "sample":
        d = cfg["dim"]
        return ["experiment", "replicate", "iter"] + [f"u_{j}" for j in range(d)]
    return HEADERS[cfg["experiment"]]


def run_experiment(cfg):
    """Run all replicates (possibly in parallel) and return ``(header, rows, summary)``.

    Results are reduced in replicate order, so the rows do not depend on the
    number of workers.
    """
    n_rep = 1 if cfg["experiment"] == "converge-h" else cfg["replicates"]
    tasks = [(cfg, r) for r in range(n_rep)]
    if cfg["workers"] > 1 and n_rep > 1:
        with ProcessPoolExecutor(max_workers=min(cfg["workers"], n_rep)) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    results.sort(key=lambda item: item[0])
    rows = [row for _, rs, _, _ in results for row in rs]
    infos = [info for _, _, info, _ in results]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "config": json.loads(canonical(cfg)),
        "n_rows": len(rows),
        "replicates": n_rep,
        "wall_time_s": [round(t, 6) for _, _, _, t in results],
        "wall_time_total_s": round(sum(t for _, _, _, t in results), 6),
    }
    evals = [i.get("n_evals") for i in infos if i.get("n_evals") is not None]
    if evals:
        summary["n_evals_total"] = int(sum(evals))
        summary["n_evals_per_replicate"] = [int(e) for e in evals]
    if cfg["experiment"] == "estimate-z":
        est = np.array([row[10] for row in rows], dtype=float)
        vals = np.exp(est) if cfg["method"] != "neo-snis" else est
        summary["estimate_median"] = _json_num(np.median(vals))
        summary["estimate_mean"] = _json_num(np.mean(vals))
        summary["estimate_var"] = _json_num(np.var(vals, ddof=1)) if len(vals) > 1 else None
        summary["n_degenerate"] = int(sum(bool(row[13]) for row in rows))
        if cfg["method"] == "neo-is":
            w = uniform_window_weights(cfg["K"])
            summary["budget_formula"] = "n_samples * (span + 1)"
            summary["budget_per_replicate"] = cfg["n_samples"] * (w.span[1] - w.span[0] + 1)
    if cfg["experiment"] == "sample":
        summary["chains"] = infos
    return _header(cfg), rows, summary


def _json_num(v):
    v = float(v)
    return v if math.isfinite(v) else str(v)


def write_outputs(path, header, rows, summary):
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    root, _ = os.path.splitext(path)
    with open(root + ".json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_args(argv):
    parser = argparse.ArgumentParser(prog="neo", description="Replicated NEO experiments")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON file with config keys")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out")
    args, extra = parser.parse_known_args(argv)
    overrides = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"cannot parse argument {item!r}; use --key=value")
        key, value = item[2:].split("=", 1)
        overrides[key] = _parse_value(value)
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    raw.update(overrides)
    for key in ("seed", "replicates", "workers", "out"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    return validate_config(args.experiment, raw)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        header, rows, summary = run_experiment(cfg)
        write_outputs(cfg["out"], header, rows, summary)
    except (NeoError, OSError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(rows)} rows to {cfg['out']}")
    return 0
