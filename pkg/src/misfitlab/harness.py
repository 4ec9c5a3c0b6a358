"""Experiment manifests, result records and plot-ready CSV files.

A manifest is a JSON array of experiment specs.  Each spec names one of
the command-line subcommands, its parameters and a seed; running it yields
a record of scalar metrics (plus optional tables) that is written as JSON.
Records of a suite are also collected into one CSV file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import operator
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import circle, interval_opt
from .core import DislocationConfig, ModelParams, PiecewiseAffine, displacement_from_config
from .exceptions import BadManifest, UnknownKind
from .halfline import energy_exact, energy_quadrature

WORKERS_ENV = "MISFITLAB_WORKERS"


def fmt_real(x) -> str:
    """Reals with 17 significant digits; everything else through ``str``."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_real(v) for v in row])
    return path


def _plain(obj):
    """Convert numpy scalars and arrays so ``json`` can write them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# ------------------------------------------------------------------ commands


def _params(p: dict, l_key="l") -> ModelParams:
    return ModelParams(float(p.get("lambda", 1.0)), float(p.get("Lambda", 1.0)),
                       float(p.get("delta", 0.1)), float(p.get(l_key, 1.0)))


def _solver_opts(p: dict, seed: int) -> interval_opt.SolverOptions:
    opts = interval_opt.SolverOptions(seed=seed)
    for key in ("restarts", "window", "max_iter", "memory"):
        if key in p:
            setattr(opts, key, int(p[key]))
    if "gtol" in p:
        opts.gtol = float(p["gtol"])
    return opts


def _load_json_arg(value):
    """Parameters holding JSON objects may give them inline or as a file path."""
    if isinstance(value, (dict, list)):
        return value
    return json.loads(Path(value).read_text(encoding="utf-8"))


def cmd_energy(p: dict, seed: int) -> dict:
    X = DislocationConfig.from_dict(_load_json_arg(p["config"]))
    u = displacement_from_config(X)
    if p.get("method", "exact") == "quad":
        rep = energy_quadrature(u, X.params.l, float(p.get("tol", 1e-10)))
    else:
        rep = energy_exact(u, X.params.l)
    return {"metrics": rep.to_dict()}


def cmd_minimize_cl(p: dict, seed: int) -> dict:
    est = interval_opt.estimate_cl(_params(p), _solver_opts(p, seed))
    d = est.to_dict()
    centers = d.pop("centers_star")
    by_n = d.pop("energies_by_N")
    return {"metrics": d, "data": {"centers_star": centers, "energies_by_N": by_n}}


def cmd_sweep_cl(p: dict, seed: int) -> dict:
    ls = p["l_list"]
    if isinstance(ls, str):
        ls = [float(v) for v in ls.split(",") if v.strip()]
    rows = []
    for est, runtime in interval_opt.sweep_cl(_params(p), ls, _solver_opts(p, seed)):
        rows.append({"l": est.l, "N_star": est.N_star, "c_l": est.c_l, "runtime": runtime})
    c = [r["c_l"] for r in rows]
    rel = [abs(b - a) / a for a, b in zip(c, c[1:])]
    metrics = {
        "n_lengths": len(rows),
        "c_l_last": c[-1] if c else math.nan,
        "rel_diff_last": rel[-1] if rel else math.nan,
        "rel_diffs_decreasing": bool(all(b < a for a, b in zip(rel, rel[1:]))),
    }
    return {"metrics": metrics, "table": {"columns": ["l", "N_star", "c_l", "runtime"], "rows": rows}}


def cmd_density(p: dict, seed: int) -> dict:
    if "from" in p:
        est = interval_opt.ClEstimate.from_dict(_load_json_arg(p["from"]))
    else:
        est = interval_opt.estimate_cl(_params(p), _solver_opts(p, seed))
    X = est.config()
    window = tuple(p.get("window", (0.0, 1.0)))
    hist = interval_opt.dislocation_density(X, int(p.get("bins", 8)), window)
    ns_l, ns_L = X.params.n_star, X.params.n_star_Lambda
    rows = [
        {"bin_center": c, "count": k, "density": d, "n_star_lambda": ns_l, "n_star_Lambda": ns_L}
        for c, k, d in hist.to_rows()
    ]
    dens = np.array(hist.normalized_density)
    metrics = {
        "N": X.N,
        "n_star_lambda": ns_l,
        "n_star_Lambda": ns_L,
        "max_rel_dev_lambda": float(np.max(np.abs(dens - ns_l)) / ns_l) if dens.size else math.nan,
        "max_rel_dev_Lambda": float(np.max(np.abs(dens - ns_L)) / ns_L) if dens.size else math.nan,
    }
    cols = ["bin_center", "count", "density", "n_star_lambda", "n_star_Lambda"]
    return {"metrics": metrics, "table": {"columns": cols, "rows": rows}}


def cmd_recovery(p: dict, seed: int) -> dict:
    wd = _load_json_arg(p["w"])
    w = PiecewiseAffine(np.asarray(wd["breakpoints"], float), np.asarray(wd["slopes"], float))
    params = _params(p)
    l = float(p["l"])
    est = interval_opt.estimate_cl(params.with_length(l), _solver_opts(p, seed))
    X = interval_opt.build_recovery_sequence(w, l, params, base=est.config())
    F = interval_opt.recovery_energy(X)
    w_norm = energy_exact(w, 1.0).value
    target = est.c_l + w_norm
    metrics = {
        "l": l,
        "N_base": est.N_star,
        "N": X.N,
        "F": F,
        "c_l": est.c_l,
        "w_energy": w_norm,
        "rel_gap": abs(F - target) / target,
    }
    return {"metrics": metrics, "data": {"config": X.to_dict()}}


def _circle_config(p: dict) -> circle.CircleConfig:
    pts = _load_json_arg(p["points"]) if not isinstance(p["points"], list) else p["points"]
    return circle.CircleConfig(tuple(pts), float(p["rho"]), float(p.get("lambda", 1.0)))


def cmd_circle_minimize(p: dict, seed: int) -> dict:
    N = int(p["N"] if "N" in p else p["n"])
    rho = float(p["rho"])
    restarts = int(p.get("restarts", 1))
    runs = []
    best = None
    for k in range(restarts):
        run = circle.minimize_circle(N, rho, seed=seed + k, lam=float(p.get("lambda", 1.0)))
        err = circle.max_gap_error(run.config)
        runs.append({"seed": seed + k, "energy_tilde": run.energy, "max_gap_error": err,
                     "iterations": run.iterations})
        if best is None or run.energy < best.energy:
            best = run
    target = circle.even_energy(N)
    metrics = {
        "N": N,
        "rho": rho,
        "runs": restarts,
        "energy_tilde": best.energy,
        "even_energy": target,
        "max_gap_error": max(r["max_gap_error"] for r in runs),
        "max_rel_energy_error": max(abs(r["energy_tilde"] - target) / target for r in runs),
    }
    cols = ["seed", "energy_tilde", "max_gap_error", "iterations"]
    return {
        "metrics": metrics,
        "data": {"points": list(best.config.points)},
        "table": {"columns": cols, "rows": runs},
    }


def cmd_circle_energy(p: dict, seed: int) -> dict:
    X = _circle_config(p)
    which = p.get("which", "both")
    m = {"N": X.N, "rho": X.rho}
    if which in ("tilde", "both"):
        m["energy_tilde"] = circle.energy_tilde(X)
    if which in ("erho", "both"):
        m["energy_Erho"] = circle.energy_Erho(X)
    return {"metrics": m}


def cmd_circle_gradcheck(p: dict, seed: int) -> dict:
    n_max = int(p.get("n", p.get("N", 8)))
    trials = int(p.get("trials", 100))
    step = float(p.get("step", 1e-6))
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        N = int(rng.integers(2, n_max + 1))
        rho = 0.5 / N
        gaps = rho + (1 - N * rho) * rng.dirichlet(np.ones(N))
        x = rng.uniform() + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
        X = circle.CircleConfig(tuple(x), rho)
        g = circle.gradient_tilde(X)
        x = X.as_array()
        fd = np.empty(N)
        for i in range(N):
            e = np.zeros(N)
            e[i] = step
            fd[i] = (circle._energy_tilde(x + e) - circle._energy_tilde(x - e)) / (2 * step)
        rel = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0))
        rows.append({"trial": t, "N": N, "rel_error": rel})
    metrics = {"trials": trials, "max_rel_error": max(r["rel_error"] for r in rows) if rows else 0.0}
    return {"metrics": metrics, "table": {"columns": ["trial", "N", "rel_error"], "rows": rows}}


def cmd_circle_lambda_limit(p: dict, seed: int) -> dict:
    X = _circle_config(p)
    lams = p.get("lambdas", [10, 100, 1000])
    if isinstance(lams, str):
        lams = [float(v) for v in lams.split(",") if v.strip()]
    table = circle.lambda_limit_table(X, lams)
    rows = [{"Lambda": r.Lambda, "delta": r.delta, "value": r.value, "gap": r.gap} for r in table]
    gaps = [r.gap for r in table]
    metrics = {
        "limit": circle.energy_Erho(X),
        "gap_last": gaps[-1] if gaps else math.nan,
        "gaps_decreasing": bool(all(b < a for a, b in zip(gaps, gaps[1:]))),
    }
    return {"metrics": metrics, "table": {"columns": ["Lambda", "delta", "value", "gap"], "rows": rows}}


COMMANDS = {
    "energy": cmd_energy,
    "minimize-cl": cmd_minimize_cl,
    "sweep-cl": cmd_sweep_cl,
    "density": cmd_density,
    "recovery": cmd_recovery,
    "circle-minimize": cmd_circle_minimize,
    "circle-energy": cmd_circle_energy,
    "circle-gradcheck": cmd_circle_gradcheck,
    "circle-lambda-limit": cmd_circle_lambda_limit,
}


# -------------------------------------------------------------- specs/records


_OPS = {"<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt, "==": operator.eq}


@dataclass
class ExperimentSpec:
    name: str
    command: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output_path: str | None = None
    accept: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d) -> "ExperimentSpec":
        if not isinstance(d, dict):
            raise BadManifest(f"manifest entries must be objects, got {type(d).__name__}")
        unknown = set(d) - {"name", "command", "parameters", "seed", "output_path", "accept"}
        if unknown:
            raise BadManifest(f"unknown spec fields {sorted(unknown)}")
        if "name" not in d or "command" not in d:
            raise BadManifest("every spec needs a name and a command")
        if d["command"] not in COMMANDS:
            raise BadManifest(f"unknown command {d['command']!r}")
        accept = d.get("accept", [])
        if isinstance(accept, dict):
            accept = [accept]
        for a in accept:
            if not (isinstance(a, dict) and {"metric", "op", "value"} <= set(a) and a["op"] in _OPS):
                raise BadManifest(f"bad acceptance predicate {a!r}")
        try:
            seed = int(d.get("seed", 0))
        except (TypeError, ValueError) as exc:
            raise BadManifest("seed must be an integer") from exc
        params = d.get("parameters", {})
        if not isinstance(params, dict):
            raise BadManifest("parameters must be an object")
        return cls(str(d["name"]), d["command"], params, seed, d.get("output_path"), accept)

    def canonical(self) -> str:
        body = {"command": self.command, "parameters": self.parameters, "seed": self.seed}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


@dataclass
class ResultRecord:
    name: str
    command: str
    spec_hash: str
    timestamp: str
    metrics: dict
    runtime: float
    status: str = "ok"
    error: str | None = None
    accepted: bool | None = None
    failed_predicates: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    table: dict | None = None

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(**d)


def _check(spec: ExperimentSpec, metrics: dict, ok: bool):
    if not spec.accept:
        return None, []
    failed = []
    for a in spec.accept:
        val = metrics.get(a["metric"])
        if not ok or val is None or not _OPS[a["op"]](val, a["value"]):
            failed.append(a)
    return not failed, failed


def run_spec(spec: ExperimentSpec) -> ResultRecord:
    """Run one spec; failures are captured in the record."""
    stamp = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        out = COMMANDS[spec.command](dict(spec.parameters), spec.seed)
        status, error = "ok", None
    except Exception as exc:  # recorded, never fatal to the suite
        out = {"metrics": {}}
        status = "failed"
        error = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
    runtime = time.perf_counter() - t0
    metrics = _plain(out.get("metrics", {}))
    accepted, failed = _check(spec, metrics, status == "ok")
    return ResultRecord(
        name=spec.name,
        command=spec.command,
        spec_hash=spec.spec_hash(),
        timestamp=stamp,
        metrics=metrics,
        runtime=runtime,
        status=status,
        error=error,
        accepted=accepted,
        failed_predicates=failed,
        data=_plain(out.get("data", {})),
        table=_plain(out.get("table")),
    )


def load_manifest(path) -> list[ExperimentSpec]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadManifest(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise BadManifest("manifest must be a JSON array")
    specs = [ExperimentSpec.from_dict(d) for d in raw]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise BadManifest("spec names must be unique")
    return specs


def resolve_workers(workers: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError as exc:
            raise BadManifest(f"{WORKERS_ENV} must be an integer") from exc
    return max(1, int(workers or 1))


def run_suite(manifest, out_dir=None, workers: int | None = None) -> list[ResultRecord]:
    """Run every spec of ``manifest``; one JSON record per spec plus ``results.csv``."""
    manifest = Path(manifest)
    specs = load_manifest(manifest)
    out_dir = Path(out_dir) if out_dir is not None else manifest.parent / (manifest.stem + "_results")
    out_dir.mkdir(parents=True, exist_ok=True)
    n = resolve_workers(workers)
    if n == 1 or len(specs) <= 1:
        records = [run_spec(s) for s in specs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(run_spec, specs))
    for spec, rec in zip(specs, records):
        path = Path(spec.output_path) if spec.output_path else out_dir / f"{spec.name}.json"
        if not path.is_absolute() and spec.output_path:
            path = out_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(rec.to_dict(), indent=2) + "\n", encoding="utf-8")
        if rec.table:
            write_csv(path.with_suffix(".csv"), rec.table["columns"],
                      [[row.get(c) for c in rec.table["columns"]] for row in rec.table["rows"]])
    write_aggregate(records, out_dir / "results.csv")
    return records


def write_aggregate(records, path) -> Path:
    keys = sorted({k for r in records for k, v in r.metrics.items() if not isinstance(v, (list, dict))})
    header = ["name", "command", "spec_hash", "status", "accepted", "runtime"] + keys
    rows = []
    for r in records:
        acc = "" if r.accepted is None else r.accepted
        rows.append([r.name, r.command, r.spec_hash, r.status, acc, r.runtime]
                    + [r.metrics.get(k, "") for k in keys])
    return write_csv(path, header, rows)


def suite_passed(records) -> bool:
    return all(r.accepted is not False for r in records)


# ---------------------------------------------------------------- plot data


PLOT_KINDS = {
    "cl_vs_l": ["l", "c_l"],
    "density_histogram": ["bin_center", "density", "n_star_lambda", "n_star_Lambda"],
    "gap_convergence": ["seed", "max_gap_error"],
    "lambda_limit": ["Lambda", "delta", "gap"],
}


def _as_record(r):
    return r if isinstance(r, ResultRecord) else ResultRecord.from_dict(r)


def plot_rows(records, kind) -> list:
    if kind not in PLOT_KINDS:
        raise UnknownKind(f"unknown plot kind {kind!r}; choose from {sorted(PLOT_KINDS)}")
    cols = PLOT_KINDS[kind]
    rows = []
    for r in map(_as_record, records):
        if r.status != "ok":
            continue
        if kind == "cl_vs_l":
            if r.command == "minimize-cl":
                rows.append([r.metrics["l"], r.metrics["c_l"]])
            elif r.command == "sweep-cl":
                rows += [[row["l"], row["c_l"]] for row in r.table["rows"]]
        elif kind == "density_histogram" and r.command == "density":
            rows += [[row[c] for c in cols] for row in r.table["rows"]]
        elif kind == "gap_convergence" and r.command == "circle-minimize":
            rows += [[row["seed"], row["max_gap_error"]] for row in r.table["rows"]]
        elif kind == "lambda_limit" and r.command == "circle-lambda-limit":
            rows += [[row[c] for c in cols] for row in r.table["rows"]]
    if kind == "cl_vs_l":
        rows.sort(key=lambda row: row[0])
    return rows


def emit_plot_data(records, kind, path=None) -> Path:
    """Write the CSV behind one figure kind; no plotting library is touched."""
    rows = plot_rows(records, kind)
    path = Path(path) if path is not None else Path(f"{kind}.csv")
    return write_csv(path, PLOT_KINDS[kind], rows)


def emit_all_plot_data(records, out_dir) -> list[Path]:
    """Plot CSVs for every kind that has at least one row."""
    out = []
    for kind in PLOT_KINDS:
        if plot_rows(records, kind):
            out.append(emit_plot_data(records, kind, Path(out_dir) / f"{kind}.csv"))
    return out
