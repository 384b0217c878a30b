"""Command line front-end: ``bcphs {simulate,verify,sweep,export-matrices} scenario.json``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys as _sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, svgplot
from .core import InvariantError, StructureError
from .discretize import discretize, error_from_plant, export_matrices, nodal_state, observer_pair
from .scenario import Design, Scenario, ScenarioError, atomic_write_text, write_csv, write_json
from .simulate import SimulationError, simulate

log = logging.getLogger("bcphs")

EXIT_OK, EXIT_ERROR, EXIT_SCENARIO, EXIT_INVARIANT = 0, 1, 2, 3
SOLVERS = {"midpoint": "implicit_midpoint", "expm": "matrix_exponential"}
MONOTONE_TOL = 1e-9
BALANCE_TOL = 1e-8
FIELD_EVERY = 10  # write every 10th stored snapshot to field/deflection files

TRACES_HEADER_BASE = ("t", "H", "H_hat", "H_tilde")


def traces_header(q: int, beam: bool) -> list:
    """Fixed column order of ``traces.csv``."""
    cols = list(TRACES_HEADER_BASE)
    cols += [f"y_m_{i + 1}" for i in range(q)] + [f"y_m_hat_{i + 1}" for i in range(q)]
    if beam:
        cols += ["tip", "tip_hat", "tip_error"]
    return cols + ["residual"]


def _overrides(args) -> tuple:
    solver, grid = {}, {}
    if getattr(args, "solver", None):
        solver["scheme"] = SOLVERS[args.solver]
    if getattr(args, "tend", None) is not None:
        solver["t_end"] = args.tend
    if getattr(args, "nd", None) is not None:
        grid["n_d"] = args.nd
    return solver, grid


def _is_beam(sys) -> bool:
    lay = sys.layout
    return sys.spec.order == 2 and lay.m == 1 and lay.imposed[0] == 1


def _initial_state(scn: Scenario, sys, spec) -> np.ndarray:
    n = sys.layout.n_d
    parts = []
    for which in ("plant", "observer"):
        prof = scn.initial_profile(which, spec)
        parts.append(np.zeros(n) if prof is None else nodal_state(sys, spec, prof))
    return np.concatenate(parts)


def _first_design(scn: Scenario):
    designs = scn.all_designs()
    return designs[0] if designs else None


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_simulate(scn: Scenario, out: Path, solver_over=None, grid_over=None) -> int:
    design = _first_design(scn)
    spec, io = scn.build(design)
    cfg = scn.solver_config(**(solver_over or {}))
    sysc = observer_pair(spec, io, scn.grid_config(**(grid_over or {})), scn.open_loop)
    beam = _is_beam(sysc)
    integrate = None
    if beam:
        sysc = analysis.with_tip_outputs(sysc)
        if "deflection" in scn.analyses:
            integrate = np.vstack([analysis.velocity_map(sysc, "plant"),
                                   analysis.velocity_map(sysc, "observer")])
    z0 = _initial_state(scn, sysc, spec)
    rec = simulate(sysc, z0, cfg, integrate=integrate)

    failures = []
    H, Hh, Ht = (rec.energies[k] for k in ("H", "H_hat", "H_tilde"))
    bal = sysc.balance_operator_residual()
    if bal > BALANCE_TOL:
        failures.append(f"power-balance operator residual {bal:.3e} > {BALANCE_TOL:g}")
    if min(H.min(), Hh.min(), Ht.min()) < -1e-12:
        failures.append("negative energy")
    dmax = float(np.diff(Ht).max(initial=0.0))
    dissipative = io.L is not None and np.linalg.eigvalsh(io.L + io.L.T).min() > 0
    if dissipative and dmax > MONOTONE_TOL:
        failures.append(f"H_tilde increased by {dmax:.3e} in one step")

    q = 0 if io.C_m is None else io.C_m.shape[0]
    cols = [rec.t, H, Hh, Ht]
    if q:
        cols += list(rec.signals["y_m"].T) + list(rec.signals["y_m_hat"].T)
    if beam:
        cols += list(rec.signals["tip"].T)
    cols.append(np.concatenate([[0.0], rec.residual]))
    write_csv(out / "traces.csv", traces_header(q, beam), zip(*cols))

    lay = sysc.layout
    keep = np.arange(0, rec.snapshot_t.size, FIELD_EVERY)
    rows = []
    for k in keep:
        for part, off in (("plant", 0), ("observer", lay.n_d)):
            z = rec.snapshots[k, off:off + lay.n_d]
            for fld, pos in ((1, lay.pos1), (2, lay.pos2)):
                vals = z[lay.field_slice(fld)].reshape(pos.size, lay.m)
                for j, zeta in enumerate(pos):
                    for c in range(lay.m):
                        rows.append((rec.snapshot_t[k], part, f"x{fld}_{c + 1}", zeta, vals[j, c]))
    write_csv(out / "field.csv", ["t", "part", "component", "zeta", "value"], rows)

    report = {"command": "simulate", "design": None if design is None else design.name,
              "n_d": lay.n_d, "solver": cfg.scheme, "dt": cfg.dt, "t_end": cfg.t_end,
              "H0": H[0], "H_hat0": Hh[0], "H_tilde0": Ht[0],
              "balance_operator_residual": bal, "max_step_increase_H_tilde": dmax,
              "max_abs_step_residual": float(np.abs(rec.residual).max())}
    if scn.open_loop and Ht[0] > 0:
        report["relative_H_tilde_drift"] = float(np.abs(Ht - Ht[0]).max() / Ht[0])
    plots = ["energy.svg"]
    atomic_write_text(out / "energy.svg", svgplot.line_chart(
        [("H", rec.t, H), ("H_hat", rec.t, Hh), ("H_tilde", rec.t, Ht)],
        "Stored energy", "t [s]", "energy", logy=True))
    tip_err = rec.signals["tip"][:, 2] if beam else None
    if "regime" in scn.analyses:
        report["regime"] = analysis.fit_decay(rec.t, Ht, tip_err).to_dict()
    if beam:
        atomic_write_text(out / "tip.svg", svgplot.line_chart(
            [("w(1)", rec.t, rec.signals["tip"][:, 0]), ("w_hat(1)", rec.t, rec.signals["tip"][:, 1])],
            "End-tip position", "t [s]", "deflection"))
        plots.append("tip.svg")
    if beam and "deflection" in scn.analyses:
        report["deflection"] = _write_deflection(sysc, rec, out, keep)
    report["plots"] = plots
    report["failures"] = failures
    report["status"] = "ok" if not failures else "invariant_failure"
    write_json(out / "report.json", report)
    log.info("simulate: H0=%.7g H_tilde0=%.7g t_conv=%s -> %s", H[0], Ht[0],
             report.get("regime", {}).get("t_conv"), out)
    return EXIT_OK if not failures else EXIT_INVARIANT


def _write_deflection(sysc, rec, out, keep) -> dict:
    n_vel = sysc.layout.pos1.size
    plant = analysis.reconstruct_deflection(
        sysc, dataclasses.replace(rec, integrals=rec.integrals[:, :n_vel]), "plant")
    obs = analysis.reconstruct_deflection(
        sysc, dataclasses.replace(rec, integrals=rec.integrals[:, n_vel:]), "observer")
    rows = []
    for k in keep:
        for j, zeta in enumerate(plant.zeta):
            w, wh = plant.spatial[k, j], obs.spatial[k, j]
            rows.append((plant.t[k], zeta, w, wh, w - wh, plant.temporal[k, j]))
    write_csv(out / "deflection.csv", ["t", "zeta", "w", "w_hat", "w_error", "w_from_velocity"], rows)
    return {"discrepancy_plant": plant.discrepancy, "discrepancy_observer": obs.discrepancy,
            "w0_tip": plant.spatial[0, -1]}


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def run_verify(scn: Scenario, out: Path, solver_over=None, grid_over=None) -> int:
    spec, io = scn.build(_first_design(scn))
    verdicts = analysis.verify_all(spec, io)
    rows = []
    for v in verdicts:
        row = v.to_dict()
        if v.status == "infeasible" and "witness" in scn.analyses:
            chk = analysis.witness_run(spec, io, v, scn.grid_config(**(grid_over or {})))
            row["witness_runtime_min_ratio"] = chk.kappa_empirical
        rows.append(row)
    print(f"{'proposition':<20} {'clause':<7} {'status':<13} kappa_max")
    for r in rows:
        k = r["kappa_max"]
        print(f"{r['proposition']:<20} {str(r['branch'] or '-'):<7} {r['status']:<13} "
              f"{'-' if k is None else f'{k:.6g}'}")
    write_json(out / "verify.json", {"command": "verify", "verdicts": rows})
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_one(doc: dict, design_doc: dict, solver_over: dict, grid_over: dict):
    scn = Scenario.from_dict(doc)
    design = Design(design_doc["name"], design_doc["L"])
    spec, io = scn.build(design)
    cfg = scn.solver_config(**solver_over)
    plant = discretize(spec, io, scn.grid_config(**grid_over))
    err = error_from_plant(plant, io, scn.open_loop)
    beam = _is_beam(err)
    if beam:
        err = analysis.with_tip_outputs(err)
    z = _initial_state(scn, plant, spec)
    n = plant.n_states
    rec = simulate(err, z[:n] - z[n:], cfg)
    tip = rec.signals["tip"][:, 0] if beam else None
    return rec.t, rec.energies["H_tilde"], tip


def run_sweep(scn: Scenario, out: Path, solver_over=None, grid_over=None, jobs: int = 1) -> int:
    designs = scn.all_designs()
    if not designs:
        raise ScenarioError("designs", "sweep needs at least one design")
    doc = scn.to_dict()
    args = [(doc, {"name": d.name, "L": d.L}, solver_over or {}, grid_over or {}) for d in designs]
    if jobs > 1 and len(designs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, *zip(*args)))
    else:
        results = [_sweep_one(*a) for a in args]
    runs = {d.name: r for d, r in zip(designs, results)}
    reports = analysis.classify_designs(runs)
    rows = []
    for d in designs:
        r = reports[d.name]
        rows.append((d.name, ";".join(f"{v:g}" for v in np.ravel(d.L)), r.alpha, r.t_conv,
                     r.label, str(r.crossings), r.overshoot))
    write_csv(out / "sweep.csv", ["design", "L", "alpha", "t_conv", "label", "crossings", "overshoot"],
              rows)
    write_json(out / "sweep.json", {"command": "sweep",
                                    "designs": [{"name": d.name, "L": d.L, **reports[d.name].to_dict()}
                                                for d in designs]})
    atomic_write_text(out / "sweep_h_tilde.svg", svgplot.line_chart(
        [(name, t, H) for name, (t, H, _) in runs.items()], "Error energy", "t [s]", "H_tilde",
        logy=True))
    if all(tip is not None for _, _, tip in runs.values()):
        atomic_write_text(out / "sweep_tip_error.svg", svgplot.line_chart(
            [(name, t, tip) for name, (t, _, tip) in runs.items()], "End-tip error", "t [s]",
            "w(1) - w_hat(1)"))
    print(f"{'design':<12} {'L':<16} {'t_conv':>8} {'alpha':>9}  label")
    for name, L, alpha, tc, label, *_ in rows:
        print(f"{name:<12} {L:<16} {tc:8.3f} {alpha:9.4f}  {label}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-matrices
# ---------------------------------------------------------------------------

def run_export(scn: Scenario, out: Path, solver_over=None, grid_over=None) -> int:
    spec, io = scn.build(_first_design(scn))
    plant = discretize(spec, io, scn.grid_config(**(grid_over or {})))
    paths = export_matrices(plant, out / "matrices", "plant_")
    if io.C_m is not None and io.L is not None:
        paths += export_matrices(error_from_plant(plant, io, scn.open_loop), out / "matrices", "error_")
    print("\n".join(str(p) for p in paths))
    return EXIT_OK


COMMANDS = {"simulate": run_simulate, "verify": run_verify, "sweep": run_sweep,
            "export-matrices": run_export}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bcphs", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--out", help="output directory (default: scenario 'output')")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
        p.add_argument("--solver", choices=sorted(SOLVERS))
        p.add_argument("--nd", type=int, help="number of discrete states")
        p.add_argument("--tend", type=float, help="simulated time span in seconds")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        scn = Scenario.load(args.scenario)
        solver_over, grid_over = _overrides(args)
        scn.solver_config(**solver_over)
        scn.grid_config(**grid_over)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=_sys.stderr)
        return EXIT_SCENARIO
    except ValueError as exc:
        print(f"scenario error: {exc}", file=_sys.stderr)
        return EXIT_SCENARIO
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=_sys.stderr)
        return EXIT_SCENARIO
    out = Path(args.out or scn.output)
    out.mkdir(parents=True, exist_ok=True)
    fn = COMMANDS[args.command]
    kw = {"jobs": max(1, args.jobs)} if args.command == "sweep" else {}
    try:
        return fn(scn, out, solver_over, grid_over, **kw)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=_sys.stderr)
        return EXIT_SCENARIO
    except (InvariantError, StructureError, SimulationError) as exc:
        write_json(out / "report.json", {"command": args.command, "status": "invariant_failure",
                                         "error": type(exc).__name__, "message": str(exc)})
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    raise SystemExit(main())
