"""Scenario runner: ``gbfbi <subcommand> --config cfg.json [--out dir] [--threads n] [--seed n]``.

Exit status: 0 success, 2 configuration error (nothing written), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .beam import gaussian_beam, l2_norm, residual_norm
from .fbi import (ProbeError, ProbeParams, TAU_GRID, _linfit, phase_audit, probe_build, wf_scan)
from .functions import FunctionSpecError, make_test_function
from .geodesic import su_check
from .manifold import ChartMetric, DomainError, covector_norm, unit_covector
from .pairing import pair_map, pair_map_pt, admissible_check, sample_neighborhood

log = logging.getLogger("gbfbi")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SUBCOMMANDS = ("su-audit", "pair-audit", "beam-residual", "phase-audit", "wf-scan")

DEFAULTS = {
    "domain": {"radius": 1.0},
    "function": {"kind": "zero"},
    "anchor": {"z": [0.0, 0.0], "angle": 0.0},
    "probe": {"seed_angle": math.pi / 4, "lambda1": 0.0, "lambda2": 0.0, "order": 1, "delta": None,
              "taus": list(TAU_GRID), "s_smooth": 5.0, "s_sing": 2.5},
    "directions": {"points": [[0.0, 0.0]], "count": 16, "offset": 0.0},
    "su": {"n_z": 20, "n_eta": 16, "r_max": 0.9},
    "pair": {"samples": 500, "admissibility_samples": 8},
    "beam": {"orders": [0, 1], "taus": list(TAU_GRID)},
    "phase": {"samples": 4},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("gbfbi").joinpath("data/config.schema.json").read_text())


def example_config(name: str = "euclidean_jump") -> Path:
    return Path(str(resources.files("gbfbi").joinpath(f"data/{name}.json")))


def _finite(obj, where="config"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"non-finite number in {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _finite(v, f"{where}.{k}")
    elif isinstance(obj, list):
        for v in obj:
            _finite(v, where)


def load_config(path) -> dict:
    """Parse, validate and fill defaults; raises ConfigError."""
    try:
        raw = json.loads(Path(path).read_text(), parse_constant=lambda c: float(c))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config: {e}") from e
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config invalid at {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}") from e
    _finite(raw)
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    for key in ("probe", "beam"):
        taus = cfg[key]["taus"]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigError(f"{key}.taus must be strictly increasing")
    try:
        cfg["_chart"] = ChartMetric.from_spec(cfg["metric"], cfg["domain"]["radius"])
        cfg["_function"] = make_test_function(cfg["function"])
    except (ValueError, KeyError, FunctionSpecError, DomainError) as e:
        raise ConfigError(str(e)) from e
    z = np.asarray(cfg["anchor"]["z"], float)
    if not cfg["_chart"].inside(z):
        raise ConfigError("anchor point outside the domain")
    return cfg


def public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(public(cfg), sort_keys=True).encode()).hexdigest()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def _anchor(cfg):
    chart = cfg["_chart"]
    z = np.asarray(cfg["anchor"]["z"], float)
    return chart, z, unit_covector(chart, z, float(cfg["anchor"]["angle"]))


def _probe_params(cfg) -> ProbeParams:
    p = cfg["probe"]
    return ProbeParams(p["seed_angle"], p["lambda1"], p["lambda2"], p["order"], p["delta"],
                       tuple(float(t) for t in p["taus"]), p["s_smooth"], p["s_sing"])


# ---------------------------------------------------------------------------
# subcommands: each returns (header, rows, summary)
# ---------------------------------------------------------------------------

def run_su_audit(cfg, rng, threads):
    chart = cfg["_chart"]
    s = cfg["su"]
    if "points" in s:
        zs = np.asarray(s["points"], float)
    else:
        r = chart.radius * s["r_max"] * np.sqrt(rng.uniform(size=s["n_z"]))
        a = rng.uniform(0.0, 2 * np.pi, size=s["n_z"])
        zs = np.stack([r * np.cos(a), r * np.sin(a)], 1)
    rows, fails = [], 0
    for z in zs:
        for k in range(s["n_eta"]):
            eta = unit_covector(chart, z, 2 * np.pi * k / s["n_eta"])
            v = su_check(chart, z, eta)
            fails += not v.passed
            rows.append([z[0], z[1], eta[0], eta[1], v.passed, ";".join(v.reasons),
                         ";".join("%.17g" % t for t in v.conjugate_times)])
    header = ["z1", "z2", "eta1", "eta2", "passed", "reasons", "conjugate_times"]
    return header, rows, {"checks": len(rows), "failures": fails}


def run_pair_audit(cfg, rng, threads):
    chart, z0, xi0 = _anchor(cfg)
    p = cfg["probe"]
    try:
        probe = probe_build(chart, z0, xi0, seed_angle=p["seed_angle"], order=p["order"], delta=p["delta"])
    except ProbeError as e:
        raise FloatingPointError(f"no probe neighborhood: {e}") from e
    pf = probe.field
    rows, worst, worst_b = [], 0.0, 0.0
    n_adm = cfg["pair"]["admissibility_samples"]
    for i, (z, xi) in enumerate(sample_neighborhood(pf, cfg["pair"]["samples"], rng)):
        w1, w2 = pair_map(pf, z, xi)
        v1, v2 = pair_map_pt(pf, z, xi)
        unit = xi / covector_norm(chart, z, xi)
        defect = float(covector_norm(chart, z, w1 + w2 - pf.t0 * unit))
        back = float(max(np.abs(w1 - v1).max(), np.abs(w2 - v2).max()))
        adm = admissible_check(chart, z, w1, w2).admissible if i < n_adm else ""
        worst, worst_b = max(worst, defect), max(worst_b, back)
        rows.append([z[0], z[1], xi[0], xi[1], w1[0], w1[1], w2[0], w2[1], defect, back, adm])
    header = ["z1", "z2", "xi1", "xi2", "w1_1", "w1_2", "w2_1", "w2_2", "sum_defect", "backend_diff", "admissible"]
    return header, rows, {"t0": pf.t0, "radius": probe.radius, "max_sum_defect": worst,
                          "max_backend_diff": worst_b}


def run_beam_residual(cfg, rng, threads):
    chart, z, xi = _anchor(cfg)
    taus = [float(t) for t in cfg["beam"]["taus"]]
    rows, summary = [], {}
    for order in cfg["beam"]["orders"]:
        beam = gaussian_beam(chart, z, xi, order=order, delta=cfg["probe"]["delta"])
        res, l2 = [], []
        for tau in taus:
            s = complex(tau, 0.0)
            r, n = residual_norm(beam, s), l2_norm(beam, s)
            res.append(r.value)
            l2.append(n.value)
            rows.append([order, tau, r.value, r.error, n.value, n.error, beam.delta])
        slope, r2 = _linfit(np.log(taus), np.log(res))
        summary[f"order{order}"] = {"slope": slope, "r2": r2, "l2_ratio": max(l2) / min(l2)}
    header = ["order", "tau", "residual", "residual_err", "l2", "l2_err", "delta"]
    return header, rows, summary


def run_phase_audit(cfg, rng, threads):
    chart, z0, xi0 = _anchor(cfg)
    p = cfg["probe"]
    try:
        probe = probe_build(chart, z0, xi0, seed_angle=p["seed_angle"], order=p["order"], delta=p["delta"])
    except ProbeError as e:
        raise FloatingPointError(f"no probe neighborhood: {e}") from e
    entries = [probe.anchor]
    for z, xi in sample_neighborhood(probe.field, cfg["phase"]["samples"], rng, frac=0.5):
        entries.append(probe.entry(z, xi))
    rows = []
    for e in entries:
        a = phase_audit(probe, e)
        rows.append([e.z[0], e.z[1], e.xi[0], e.xi[1], a.diag_value, a.grad_defect, a.hess_min,
                     a.im_min, a.homogeneity_defect, a.passed])
    header = ["z1", "z2", "xi1", "xi2", "diag_value", "grad_defect", "hess_min", "im_min",
              "homogeneity_defect", "passed"]
    return header, rows, {"entries": len(rows), "all_passed": all(r[-1] for r in rows)}


def run_wf_scan(cfg, rng, threads):
    chart = cfg["_chart"]
    d = cfg["directions"]
    dirs = []
    for z in d["points"]:
        z = np.asarray(z, float)
        for k in range(d["count"]):
            dirs.append((z, unit_covector(chart, z, d["offset"] + 2 * np.pi * k / d["count"])))
    params = _probe_params(cfg)
    rep = wf_scan(chart, cfg["_function"], dirs, params, threads=threads)
    rows = []
    for r in rep.records:
        u = r.xi / np.linalg.norm(r.xi)
        rows.append([r.index, r.z[0], r.z[1], u[0], u[1], r.slope, r.r2, r.classification, r.reason])
    header = ["index", "z1", "z2", "xi1", "xi2", "slope", "r2", "classification", "reason"]
    counts = {c: rep.classes().count(c) for c in ("SMOOTH", "SINGULAR", "INCONCLUSIVE", "UNTESTABLE")}
    summary = {"counts": counts, "taus": list(params.taus), "s_smooth": params.s_smooth,
               "s_sing": params.s_sing, "order": params.order, "lambda": [params.lam1, params.lam2],
               "seed_angle": params.seed_angle,
               "abs_t": [[None if not math.isfinite(v) else v for v in r.abs_t] for r in rep.records]}
    return header, rows, summary


RUNNERS = {"su-audit": run_su_audit, "pair-audit": run_pair_audit, "beam-residual": run_beam_residual,
           "phase-audit": run_phase_audit, "wf-scan": run_wf_scan}


def _threads(arg):
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("TOOL_THREADS", "")
    return max(1, int(env)) if env.isdigit() else 1


def run(subcommand: str, config, out=None, threads=None, seed=None) -> int:
    """Run one subcommand; returns the exit status."""
    t_start = time.perf_counter()
    try:
        cfg = config if isinstance(config, dict) and "_chart" in config else load_config(config)
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    if seed is not None:
        cfg["seed"] = int(seed)
    out = Path(out or "gbfbi-out")
    stages = {"load": time.perf_counter() - t_start}
    rng = np.random.default_rng(cfg["seed"])
    status = EXIT_OK
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t0 = time.perf_counter()
        try:
            with np.errstate(invalid="ignore", over="ignore"):
                header, rows, summary = RUNNERS[subcommand](cfg, rng, _threads(threads))
        except (FloatingPointError, ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError) as e:
            log.error("numerical failure: %s", e)
            header, rows, summary = None, [], {"error": str(e)}
            status = EXIT_NUMERIC
        stages[subcommand] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    stem = subcommand.replace("-", "_")
    if header is not None:
        write_csv(out / f"{stem}.csv", header, rows)
    (out / f"{stem}.json").write_text(json.dumps({"subcommand": subcommand, "rows": len(rows), **summary},
                                                 indent=2, sort_keys=True, default=_json_default) + "\n")
    manifest = {
        "tool": "gbfbi", "version": __version__, "subcommand": subcommand,
        "config_hash": config_hash(cfg), "config": public(cfg), "seed": cfg["seed"],
        "stages_s": stages, "exit_status": status,
        "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gbfbi", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="scenario JSON")
    ap.add_argument("--out", default=None, help="output directory (default gbfbi-out)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default $TOOL_THREADS or 1)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return run(args.subcommand, args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
