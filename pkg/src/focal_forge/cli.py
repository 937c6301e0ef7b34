"""Command line experiment runner.

Exit codes: 0 ran cleanly, 1 ran with findings, 2 invalid configuration,
3 failed to run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
from jsonschema import Draft202012Validator

from . import __version__
from .errors import FocalForgeError, PreconditionError
from .focal import focal_records, focal_time_profile, morse_index, nullity_at_endpoint
from .jacobi import DEFAULT_TOL
from .linking import (
    bundle_descriptor,
    cohdim_bookkeeping,
    delta_dimension,
    energy_identity_check,
    index_of,
    sample_Zv,
    tangent_decomposition_dim,
)
from .scenarios import SCENARIOS, get_scenario, random_horizontal, scenario_ids
from .transversal import horizontal_geodesic, verify_index_splitting
from .taut import (
    fiber_integrability_probe,
    morse_bott_probe,
    perfectness_verdict,
    reference_betti,
    taut_check,
)

__all__ = ["main", "run_experiment", "emit_report", "validate_config", "load_schema", "EXIT"]

log = logging.getLogger("focal_forge")

EXIT = {"ok": 0, "findings": 1, "schema": 2, "failed": 3}
SUBCOMMANDS = {
    "focal": "focal-scan",
    "index": "index",
    "split": "split",
    "taut": "taut-check",
    "cycles": "cycles",
    "probe": "fiber-probe",
}
SIG = 12


class ConfigError(Exception):
    def __init__(self, problems):
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# config


def load_schema() -> dict:
    text = resources.files("focal_forge").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _line_of(raw: str | None, key: str) -> int | None:
    if not raw:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(raw.splitlines(), 1):
        if needle in line:
            return i
    return None


def validate_config(cfg, raw: str | None = None) -> list:
    """List of (field path, message) schema violations, sorted by path."""
    out = []
    for err in Draft202012Validator(load_schema()).iter_errors(cfg):
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        keys = [p for p in err.absolute_path if isinstance(p, str)]
        line = _line_of(raw, keys[-1]) if keys else None
        out.append((path if line is None else f"{path} (line {line})", err.message))
    return sorted(out)


def load_config(path) -> tuple:
    raw = Path(path).read_text()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError([(f"<document> (line {exc.lineno}, column {exc.colno})", exc.msg)]) from None
    return cfg, raw


def _tolerances(cfg: dict, scale: float) -> dict:
    t = {"integrator": DEFAULT_TOL, "newton": 1e-10, "zero": 1e-6, "gap": 1e3, "probe": 0.05}
    t.update(cfg.get("tolerances", {}))
    for k in ("integrator", "newton", "zero", "probe"):
        t[k] = float(t[k]) * scale
    return t


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FOCAL_FORGE_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = min(_threads(), len(items)) or 1
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))  # map keeps input order


# ---------------------------------------------------------------------------
# reports


def _clean(x):
    """JSON-safe copy with floats rounded to SIG significant digits."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.{SIG}g}")
    return x


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.{SIG}g}"
    return "" if x is None else str(x)


def emit_report(report, fmt: str, path) -> Path:
    """Write a JSON document or a CSV table (report = (header, rows))."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        header, rows = report
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(c) for c in r])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------------------
# operations; each returns (json report, {csv name: (header, rows)}, findings)


def _need(sc, kind):
    if sc.kind != kind:
        raise PreconditionError(f"scenario {sc.sid!r} is a {sc.kind} scenario; this operation needs a {kind}")


def _vectors(cfg, sc, patch):
    items = cfg.get("vectors")
    if not items:
        if not sc.focal_vector:
            raise PreconditionError(f"scenario {sc.sid!r} has no default vector; give 'vectors'")
        items = [{"vector": list(sc.focal_vector)}]
    out = []
    for it in items:
        u = np.asarray(it.get("param", np.zeros(patch.leaf_dim)), dtype=float)
        out.append((u, np.asarray(it["vector"], dtype=float)))
    return out


def op_focal_scan(cfg, tol, seed):
    sc = get_scenario(cfg["scenario"])
    _need(sc, "patch")
    patch = sc.make()
    D = int(cfg.get("directions", 16))
    k = int(cfg.get("focal_count", 2))
    horizon = float(cfg.get("horizon", 4.0))
    samples, angles = [], []
    if patch.codim >= 2:
        u0 = np.zeros(patch.leaf_dim)
        N = patch.normal_frame(u0)
        for i in range(D):
            th = 2 * math.pi * i / D
            samples.append((u0, math.cos(th) * N[:, 0] + math.sin(th) * N[:, 1]))
            angles.append(th)
    else:  # sweep the first foot parameter
        lo, hi = patch.param_box[0]
        for i in range(D):
            s = lo + (hi - lo) * i / D if 0 in patch.periodic else lo + (hi - lo) * (i + 0.5) / D
            u = np.zeros(patch.leaf_dim)
            u[0] = s
            samples.append((u, patch.normal_frame(u)[:, 0]))
            angles.append(s)
    prof = focal_time_profile(patch, samples, k=k, horizon=horizon, tol=tol["integrator"], gap=tol["gap"])
    header = ["direction_index", "angle"] + [f"{n}_{j + 1}" for j in range(k) for n in ("lambda", "mult")]
    rows = []
    for i, lam, mult in prof.rows():
        row = [i, angles[i]]
        for j in range(k):
            row += [lam[j], mult[j]]
        rows.append(row)
    errors = [e for e in prof.errors if e]
    rep = {"scenario": sc.sid, "directions": D, "horizon": horizon,
           "continuity_constant": prof.continuity_constant, "regular": prof.regular, "errors": prof.errors}
    return rep, {"focal_scan.csv": (header, rows)}, bool(errors)


def op_index(cfg, tol, seed):
    sc = get_scenario(cfg["scenario"])
    _need(sc, "patch")
    patch = sc.make()
    rows, sv_rows, entries = [], [], []
    for i, (u, v) in enumerate(_vectors(cfg, sc, patch)):
        basis, recs = focal_records(patch, u, v, horizon=1.0, tol=tol["integrator"], gap=tol["gap"])
        idx, nul = morse_index(recs), nullity_at_endpoint(recs)
        rows.append([i, float(np.linalg.norm(v)), idx, nul, ";".join(_cell(r.time) for r in recs)])
        entries.append({"vector": v, "param": u, "index": idx, "nullity": nul,
                        "records": [r.to_dict() for r in recs]})
        s = np.linalg.svd(basis.values, compute_uv=False)
        for n in range(0, len(basis.times), 16):
            sv_rows.append([i, basis.times[n], *s[n]])
    width = max((len(r) - 2 for r in sv_rows), default=0)
    sv_header = ["vector_index", "t"] + [f"sigma_{j + 1}" for j in range(width)]
    tables = {
        "index_table.csv": (["vector_index", "length", "index", "nullity", "focal_times"], rows),
        "singular_values.csv": (sv_header, sv_rows),
    }
    return {"scenario": sc.sid, "vectors": entries}, tables, False


def op_split(cfg, tol, seed):
    sc = get_scenario(cfg["scenario"])
    _need(sc, "foliation")
    fol = sc.make()
    count = int(cfg.get("count", 10))
    lengths = tuple(cfg.get("lengths", (0.3, 5.0)))

    def one(i):
        rng = np.random.default_rng([seed, i])
        last = None
        for attempt in range(6):
            x, v, length = random_horizontal(fol, rng, lengths)
            try:
                patch, g = horizontal_geodesic(fol, x, v, length)
                res = verify_index_splitting(g, fol, patch)
                return {"seed": i, "length": length, "attempts": attempt + 1, "point": x, "velocity": v, **res}
            except PreconditionError as exc:
                last = str(exc)
        return {"seed": i, "length": float("nan"), "attempts": 6, "error": last, "holds": False}

    results = _pmap(one, range(count))
    header = ["seed", "length", "ind_total", "ind_vertical", "ind_horizontal", "holds"]
    rows = [[r["seed"], r["length"], r.get("ind_lambda"), r.get("ind_w"), r.get("ind_hor"), r["holds"]]
            for r in results]
    failures = sum(not r["holds"] for r in results)
    rep = {"scenario": sc.sid, "foliation": fol.describe(), "count": count, "failures": failures,
           "rows": results}
    return rep, {"splitting.csv": (header, rows)}, failures > 0


def op_taut(cfg, tol, seed):
    sc = get_scenario(cfg["scenario"])
    _need(sc, "patch")
    patch = sc.make()
    targets = cfg.get("targets") or [list(sc.target)]
    cap = float(cfg.get("cap", sc.cap))
    betti = cfg.get("betti", sc.betti_id)
    density = int(cfg.get("density", 8))

    def one(q):
        rep = taut_check(patch, q, cap, betti, density=density, tol=tol["integrator"], newton_tol=tol["newton"])
        if betti is not None and "max_degree" in cfg:
            table = reference_betti(betti, int(cfg["max_degree"]))
            object.__setattr__(rep, "betti", table)
            if rep.count.generic:
                object.__setattr__(rep, "verdict", perfectness_verdict(rep))
        return rep

    reports = _pmap(one, targets)
    out = {"scenario": sc.sid, "patch": patch.describe(), "reports": [r.to_dict() for r in reports]}
    findings = any(r.verdict.get("verdict") != "perfect" for r in reports) if betti else False
    if cfg.get("morse_bott"):
        out["morse_bott"] = [morse_bott_probe(patch, q, cap, seed=seed) for q in targets]
        findings = findings or any(m["verdict"] != "morse-bott" for m in out["morse_bott"])
    rows = [[i, len(r.criticals), " ".join(str(c) for c in r.count.coefficients), r.count.generic,
             r.verdict.get("verdict", "")] for i, r in enumerate(reports)]
    return out, {"taut_summary.csv": (["target_index", "critical_points", "counting", "generic", "verdict"],
                                      rows)}, findings


def _cycle_entry(patch, u, v, samples, depth_cap, tol, seed):
    diag = []
    polys = sample_Zv(patch, u, v, samples=samples, seed=seed, depth_cap=depth_cap,
                      tol=tol["integrator"], diagnostics=diag)
    i_v, _ = delta_dimension(patch, u, v, tol=tol["integrator"])
    t_dim = tangent_decomposition_dim(patch, u, v, tol=tol["integrator"], seed=seed)
    desc = bundle_descriptor(patch, u, v, tol=tol["integrator"])
    c_dim = cohdim_bookkeeping(desc)
    devs = [energy_identity_check(p) for p in polys]
    level_one = sorted({index_of(patch, p.params[1], p.vectors[1]) for p in polys if p.depth >= 1})
    ok = (i_v == t_dim == c_dim and max(devs, default=0.0) < 1e-8
          and all(i < i_v for i in level_one) and not diag)
    return {
        "vector": v, "param": u, "delta_dimension": i_v, "tangent_dimension": t_dim,
        "cohomological_dimension": c_dim, "descriptor": None if desc is None else desc.to_dict(),
        "polygons": [p.to_dict() for p in polys], "max_energy_deviation": max(devs, default=0.0),
        "level_one_indices": level_one, "diagnostics": diag, "depth_cap": depth_cap, "consistent": ok,
    }


def op_cycles(cfg, tol, seed):
    sc = get_scenario(cfg["scenario"])
    _need(sc, "patch")
    patch = sc.make()
    samples = int(cfg.get("samples", 4))
    depth_cap = int(cfg.get("depth_cap", 6))
    entries = []
    for u, v in _vectors(cfg, sc, patch):
        try:
            entries.append(_cycle_entry(patch, u, v, samples, depth_cap, tol, seed))
        except FocalForgeError as exc:
            entries.append({"vector": v, "param": u, "error": f"{type(exc).__name__}: {exc}",
                            "consistent": False})
    findings = not all(e["consistent"] for e in entries)
    return {"scenario": sc.sid, "samples": samples, "cycles": entries}, {}, findings


def op_probe(cfg, tol, seed):
    sc = get_scenario(cfg["scenario"])
    _need(sc, "patch")
    patch = sc.make()
    samples = int(cfg.get("samples", 24))
    out = []
    for u, v in _vectors(cfg, sc, patch):
        try:
            pr = fiber_integrability_probe(patch, u, v, samples=samples, tol=tol["probe"], seed=seed,
                                           gap=tol["gap"])
            out.append({"vector": v, "param": u, **pr.to_dict()})
        except FocalForgeError as exc:
            out.append({"vector": v, "param": u, "error": f"{type(exc).__name__}: {exc}",
                        "verdict": "error"})
    findings = any(r["verdict"] != "integrable" for r in out)
    rep = {"scenario": sc.sid, "probes": out}
    if cfg.get("morse_bott"):
        cap = float(cfg.get("cap", sc.cap))
        rep["morse_bott"] = [morse_bott_probe(patch, q, cap, seed=seed)
                             for q in (cfg.get("targets") or [list(sc.target)])]
        findings = findings or any(m["verdict"] != "morse-bott" for m in rep["morse_bott"])
    return rep, {}, findings


OPERATIONS = {
    "focal-scan": op_focal_scan,
    "index": op_index,
    "split": op_split,
    "taut-check": op_taut,
    "cycles": op_cycles,
    "fiber-probe": op_probe,
}
REPORT_NAMES = {
    "focal-scan": "focal_scan.json",
    "index": "index_report.json",
    "split": "split_report.json",
    "taut-check": "morse_report.json",
    "cycles": "cycles_report.json",
    "fiber-probe": "probe_report.json",
}


def run_experiment(cfg: dict, out_dir, operation: str | None = None, tol_scale: float = 1.0,
                   raw: str | None = None) -> tuple:
    """Validate, run and persist one experiment; returns (exit status, written paths)."""
    problems = validate_config(cfg, raw)
    if isinstance(cfg.get("scenario"), str) and cfg["scenario"] not in SCENARIOS:
        problems.append(("scenario", f"unknown scenario {cfg['scenario']!r} (see list-scenarios)"))
    op = operation or cfg.get("operation")
    if op is None:
        problems.append(("operation", "no operation given"))
    elif "operation" in cfg and cfg["operation"] != op:
        problems.append(("operation", f"config asks for {cfg['operation']!r} but the command is {op!r}"))
    if not tol_scale > 0:
        problems.append(("--tol-scale", "must be positive"))
    if problems:
        raise ConfigError(problems)
    seed = int(cfg.get("seed", 0))
    tol = _tolerances(cfg, tol_scale)
    out = Path(out_dir)
    start = time.perf_counter()
    report, tables, findings = OPERATIONS[op](cfg, tol, seed)
    wall = time.perf_counter() - start
    report = {"operation": op, "seed": seed, "tolerances": tol, **report}
    written = [emit_report(report, "json", out / REPORT_NAMES[op])]
    for name, table in sorted(tables.items()):
        written.append(emit_report(table, "csv", out / name))
    manifest = {
        "config": cfg,
        "operation": op,
        "seed": seed,
        "tol_scale": tol_scale,
        "versions": {"focal_forge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": wall,
        "files": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in written},
        "status": "findings" if findings else "ok",
    }
    written.append(emit_report(manifest, "json", out / "manifest.json"))
    return (EXIT["findings"] if findings else EXIT["ok"]), written


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the global flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="override the configured random seed")
    common.add_argument("--out-dir", help="directory for reports (default: focal-forge-out)")
    common.add_argument("--tol-scale", type=float, help="multiply all tolerances (default 1)")
    common.add_argument("--scenario", help="scenario id when no config file is given")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="focal-forge", parents=[common],
                                description="Focal points, index splitting and tautness experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {SUBCOMMANDS[name]} operation")
    sub.add_parser("list-scenarios", parents=[common], help="list built-in scenarios")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out_dir", None), ("tol_scale", 1.0),
                          ("scenario", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        for sid in scenario_ids():
            s = get_scenario(sid).summary()
            print(f"{s['id']:<24} {s['kind']:<10} {s['betti'] or '-':<14} {s['description']}")
        return EXIT["ok"]
    try:
        if args.config:
            cfg, raw = load_config(args.config)
        else:
            cfg, raw = {}, None
        if not isinstance(cfg, dict):
            raise ConfigError([("<root>", "configuration must be a JSON object")])
        if args.scenario:
            cfg["scenario"] = args.scenario
        if args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = args.out_dir or cfg.get("output", {}).get("dir") or "focal-forge-out"
        status, written = run_experiment(cfg, out_dir, SUBCOMMANDS[args.command], args.tol_scale, raw)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return EXIT["schema"]
    except (FocalForgeError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"failed to run: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT["failed"]
    for p in written:
        print(p)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
