"""``misfit-lab`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .exceptions import MisfitLabError


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _model_args(p):
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--Lambda", dest="Lam", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.1)


def _solver_args(p, restarts=16):
    p.add_argument("--restarts", type=int, default=restarts)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=2)


def _model_params(a) -> dict:
    d = {"lambda": a.lam, "Lambda": a.Lam, "delta": a.delta}
    for key in ("restarts", "window"):
        if getattr(a, key, None) is not None:
            d[key] = getattr(a, key)
    return d


def _emit_json(obj, out):
    text = json.dumps(harness._plain(obj), indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_table(table, out, kind=None, plot=False):
    cols = table["columns"]
    rows = [[r.get(c) for c in cols] for r in table["rows"]]
    if out:
        path = harness.write_csv(out, cols, rows)
        if plot and kind:
            from .plotting import render

            render(path, kind)
    else:
        sys.stdout.write(",".join(cols) + "\n")
        for row in rows:
            sys.stdout.write(",".join(harness.fmt_real(v) for v in row) + "\n")


def _figure_table(table, keep):
    return {"columns": keep, "rows": table["rows"]}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="misfit-lab", description="Misfit dislocation energy experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("energy", help="half-line energy of a dislocation config")
    p.add_argument("--config", required=True, help="config JSON file")
    p.add_argument("--method", choices=("exact", "quad"), default="exact")
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("minimize-cl", help="estimate c_l by multistart minimization")
    _model_args(p)
    p.add_argument("--l", type=float, required=True)
    _solver_args(p)
    p.add_argument("--out")

    p = sub.add_parser("sweep-cl", help="c_l over several interface lengths")
    _model_args(p)
    p.add_argument("--l-list", required=True, help="comma separated lengths")
    _solver_args(p)
    p.add_argument("--out", help="CSV path; stdout if omitted")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the CSV")

    p = sub.add_parser("density", help="histogram of minimizer core positions")
    p.add_argument("--from", dest="source", required=True, help="ClEstimate JSON file")
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--window", type=_floats, default=[0.0, 1.0], help="lo,hi in units of l")
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("recovery", help="recovery configuration for a macroscopic strain")
    _model_args(p)
    p.add_argument("--w", required=True, help="JSON with breakpoints and slopes on [0,1]")
    p.add_argument("--l", type=float, required=True)
    _solver_args(p, restarts=1)
    p.add_argument("--out")

    p = sub.add_parser("circle-minimize", help="minimize the circle pair energy")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("circle-energy", help="circle energies of a point set")
    p.add_argument("--points", required=True, help="JSON list or file")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--which", choices=("tilde", "erho", "both"), default="both")

    p = sub.add_parser("circle-gradcheck", help="analytic vs finite-difference gradient")
    p.add_argument("--n", type=int, default=8, help="largest N drawn")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("circle-lambda-limit", help="finite-core energies against the step limit")
    p.add_argument("--points", required=True, help="JSON list or file")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--lambdas", default="10,100,1000")
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("suite", help="run an experiment manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output directory")
    p.add_argument("--plots", action="store_true", help="write plot CSVs and PNGs")

    p = sub.add_parser("plot", help="render a plot CSV to PNG")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", required=True, choices=sorted(harness.PLOT_KINDS))
    p.add_argument("--png")
    return ap


def _points_arg(text):
    text = text.strip()
    return json.loads(text) if text.startswith("[") else json.loads(Path(text).read_text(encoding="utf-8"))


def run(a) -> int:
    cmd = a.command
    if cmd == "energy":
        out = harness.cmd_energy({"config": a.config, "method": a.method, "tol": a.tol}, 0)
        _emit_json(out["metrics"], None)
    elif cmd == "minimize-cl":
        from .interval_opt import estimate_cl

        params = harness._params({**_model_params(a), "l": a.l})
        est = estimate_cl(params, harness._solver_opts(_model_params(a), a.seed))
        _emit_json(est.to_dict(), a.out)
    elif cmd == "sweep-cl":
        out = harness.cmd_sweep_cl({**_model_params(a), "l_list": a.l_list}, a.seed)
        _emit_table(out["table"], a.out, "cl_vs_l", a.plot)
    elif cmd == "density":
        out = harness.cmd_density({"from": a.source, "bins": a.bins, "window": a.window}, 0)
        if a.plot and a.out:
            # the figure reads the four plot columns; the full table keeps counts too
            fig_csv = Path(a.out).with_name(Path(a.out).stem + "_density_histogram.csv")
            _emit_table(_figure_table(out["table"], harness.PLOT_KINDS["density_histogram"]),
                        fig_csv, "density_histogram", True)
        _emit_table(out["table"], a.out)
    elif cmd == "recovery":
        out = harness.cmd_recovery({**_model_params(a), "w": a.w, "l": a.l}, a.seed)
        _emit_json({**out["data"], **out["metrics"]}, a.out)
    elif cmd == "circle-minimize":
        out = harness.cmd_circle_minimize({"N": a.n, "rho": a.rho, "restarts": a.restarts}, a.seed)
        m = out["metrics"]
        _emit_json({"points": out["data"]["points"], "energy_tilde": m["energy_tilde"],
                    "max_gap_error": m["max_gap_error"], "even_energy": m["even_energy"],
                    "runs": out["table"]["rows"]}, a.out)
    elif cmd == "circle-energy":
        out = harness.cmd_circle_energy({"points": _points_arg(a.points), "rho": a.rho, "which": a.which}, 0)
        _emit_json(out["metrics"], None)
    elif cmd == "circle-gradcheck":
        out = harness.cmd_circle_gradcheck({"n": a.n, "trials": a.trials}, a.seed)
        _emit_table(out["table"], a.out)
    elif cmd == "circle-lambda-limit":
        out = harness.cmd_circle_lambda_limit(
            {"points": _points_arg(a.points), "rho": a.rho, "lambdas": _floats(a.lambdas)}, 0)
        _emit_table(out["table"], a.out, "lambda_limit", a.plot)
    elif cmd == "suite":
        records = harness.run_suite(a.manifest, a.out, a.workers)
        out_dir = Path(a.out) if a.out else Path(a.manifest).parent / (Path(a.manifest).stem + "_results")
        if a.plots:
            csvs = harness.emit_all_plot_data(records, out_dir)
            from .plotting import render_all

            render_all(csvs)
        for r in records:
            flag = {None: "", True: " accepted", False: " REJECTED"}[r.accepted]
            print(f"{r.name}: {r.status}{flag} ({r.runtime:.2f}s)")
        return 0 if harness.suite_passed(records) else 1
    elif cmd == "plot":
        from .plotting import render

        print(render(a.csv, a.kind, a.png))
    return 0


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(a)
    except (MisfitLabError, ValueError, OSError) as exc:
        print(f"misfit-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
