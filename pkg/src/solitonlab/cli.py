"""Batch driver: every study is a subcommand with a JSON configuration,
a manifest echo, machine-readable outputs, and CI-friendly exit codes
(0 success, 2 validation, 3 numerical failure, 4 verdict fail).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import fields as fieldsmod
from .fields import (ComplexField, Grid, SpinorField, norm_lp,
                     norm_l2_plus_linf, save_field)
from .nonlinearity import NonlinearitySpec, hypothesis_checks
from .groundstate import (NoGroundStateError, SolverConvergenceError,
                          convexity_check, solve_constrained, solve_shooting)
from .galilei import SolitonParams, separation_check, sigma_infinity
from .linops import (admissibility_report, build_matrix_hamiltonian,
                     build_root_basis, linear_stability_probe, projector_Ps,
                     theta_family_study)
from .evolve import (BlowUpError, PropagatorConfig, nls_propagate,
                     fit_power_law)
from .modulation import (DecompositionError, ProfileFamily,
                         initial_decomposition, track, bootstrap_monitor,
                         scattering_extract)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_VERDICT = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SCHEMA_DOC = """Configuration schema (JSON object):
  dimension       1 | 2 | 3
  grid            {"points": power of two >= 8, "half_width": > 0}
  nonlinearity    {"type": "monomial"|"theta"|"mixed", "p", "r", "theta", "c"}
  solitons        [{"velocity": [n floats], "shift": [n], "phase", "alpha"}]
  perturbation    {"type": "none"|"gaussian"|"noise", "amplitude", "width",
                   "center": [n], "wavenumber", "seed"}  (all optional)
  propagator      {"dt", "t_end", "snapshot_stride", "scheme"}
  study           subcommand-specific options (object)
  output_dir      directory for outputs (overridden by --out)
"""


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    _require(isinstance(raw, dict), "config must be a JSON object")
    n = raw.get("dimension")
    _require(n in (1, 2, 3), "dimension must be 1, 2 or 3")
    g = raw.get("grid", {})
    _require(isinstance(g, dict) and "points" in g and "half_width" in g,
             "grid must carry points and half_width")
    nl = raw.get("nonlinearity", {})
    _require(nl.get("type") in ("monomial", "theta", "mixed"),
             "nonlinearity.type must be monomial, theta or mixed")
    sols = raw.get("solitons", [])
    _require(isinstance(sols, list) and len(sols) >= 1, "at least one soliton required")
    for s in sols:
        _require(len(s.get("velocity", [])) == n and len(s.get("shift", [])) == n,
                 "soliton velocity/shift must have `dimension` entries")
        _require(s.get("alpha", 0) > 0, "soliton alpha must be positive")
    raw.setdefault("perturbation", {"type": "none"})
    raw.setdefault("study", {})
    return raw


def make_objects(cfg):
    grid = Grid(cfg["dimension"], cfg["grid"]["points"], cfg["grid"]["half_width"])
    nl = cfg["nonlinearity"]
    spec = NonlinearitySpec(nl["type"], p=nl.get("p", 3.0), r=nl.get("r", 1.0),
                            theta=nl.get("theta", 0.0), c=nl.get("c", 1.0))
    sigmas = []
    for s in cfg["solitons"]:
        v = grid.dual_lattice_velocity(s["velocity"])
        sigmas.append(SolitonParams(v, s["shift"], s.get("phase", 0.0), s["alpha"]))
    return grid, spec, sigmas


def build_perturbation(cfg, grid: Grid) -> np.ndarray:
    p = cfg["perturbation"]
    kind = p.get("type", "none")
    if kind == "none":
        return np.zeros(grid.shape, dtype=np.complex128)
    eps = p.get("amplitude", 1e-3)
    center = np.asarray(p.get("center", [0.0] * grid.dimension), float)
    if kind == "gaussian":
        width = p.get("width", 1.0)
        rr = grid.radius(center)
        out = eps * np.exp(-rr ** 2 / (2.0 * width ** 2)).astype(np.complex128)
        k = p.get("wavenumber", 0.0)
        if k:
            kv = grid.dual_lattice_velocity([k] + [0.0] * (grid.dimension - 1))
            phase = np.zeros(grid.shape)
            for i, m in enumerate(grid.meshes()):
                phase = phase + kv[i] * m
            out = out * np.exp(1j * phase)
        return out
    if kind == "noise":
        rng = np.random.default_rng(p.get("seed", 0))
        kmax_cells = int(p.get("band_cells", 6))
        fhat = np.zeros(grid.shape, dtype=np.complex128)
        idx = np.indices(grid.shape)
        wrapped = np.minimum(idx, grid.points - idx)
        mask = np.all(wrapped <= kmax_cells, axis=0)
        fhat[mask] = rng.normal(size=int(mask.sum())) \
            + 1j * rng.normal(size=int(mask.sum()))
        field = np.fft.ifftn(fhat)
        field *= eps / max(np.max(np.abs(field)), 1e-300)
        rr = grid.radius(center)
        return field * np.exp(-rr ** 2 / (2.0 * p.get("width", 4.0) ** 2))
    raise ConfigError(f"unknown perturbation type {kind!r}")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    return str(o)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True,
                                     default=_json_default) + "\n")


def write_manifest(outdir: Path, cfg, command):
    write_json(outdir / "manifest.json", {"command": command, "config": cfg})


def path_to_csv(path_obj, out):
    n = path_obj.dimension
    cols = ["t"]
    for j in range(path_obj.n_solitons):
        cols += [f"v{j}_{i}" for i in range(n)] + [f"D{j}_{i}" for i in range(n)] \
            + [f"gamma{j}", f"alpha{j}"]
    with open(out, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k, t in enumerate(path_obj.times):
            row = [f"{t:.17g}"]
            for s in path_obj.params[k]:
                row += [f"{x:.17g}" for x in s.as_vector()]
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ground_state(cfg, outdir: Path) -> int:
    grid, spec, sigmas = make_objects(cfg)
    n = cfg["dimension"]
    study = cfg["study"]
    target = study.get("residual_target", 1e-8)
    rows = []
    worst = 0.0
    for s in sigmas:
        prof = solve_shooting(spec, s.alpha, n)
        conv = convexity_check(spec, s.alpha, n, profile=prof)
        tag = f"alpha{s.alpha:g}"
        with open(outdir / f"profile_{tag}.csv", "w") as fh:
            fh.write("r,phi\n")
            for r_, p_ in zip(prof.r, prof.phi):
                fh.write(f"{r_:.17g},{p_:.17g}\n")
        meta = {"alpha": s.alpha, "spec": spec.describe(), "dimension": n,
                "residual": prof.residual, "kappa": prof.kappa,
                "l2_norm_squared": prof.l2norm_squared(),
                "peak": prof.peak(), "convexity": conv}
        if study.get("constrained", False) and n >= 3:
            res = solve_constrained(spec, s.alpha, n)
            meta["variational"] = {"J": res.J, "lambda": res.lam,
                                   "constraint": res.constraint}
        write_json(outdir / f"profile_{tag}.json", meta)
        worst = max(worst, prof.residual)
        rows.append(meta)
    write_json(outdir / "ground_state_report.json",
               {"profiles": rows, "hypotheses": hypothesis_checks(spec, n)})
    return EXIT_OK if worst < target else EXIT_VERDICT


def cmd_admissibility(cfg, outdir: Path) -> int:
    grid, spec, sigmas = make_objects(cfg)
    n = cfg["dimension"]
    s = sigmas[0]
    prof = solve_shooting(spec, s.alpha, n)
    rep = admissibility_report(prof, s)
    write_json(outdir / "admissibility.json", rep)
    return EXIT_OK if rep["verdict"] == "admissible-consistent" else EXIT_VERDICT


def cmd_evolve(cfg, outdir: Path) -> int:
    grid, spec, sigmas = make_objects(cfg)
    n = cfg["dimension"]
    pcfg = PropagatorConfig(**cfg["propagator"])
    profiles = {round(s.alpha, 12): solve_shooting(spec, s.alpha, n) for s in sigmas}
    from .galilei import soliton_field
    psi = np.zeros(grid.shape, dtype=np.complex128)
    for s in sigmas:
        psi += soliton_field(profiles[round(s.alpha, 12)], s, 0.0, grid).data
    psi += build_perturbation(cfg, grid)
    traj, logs = nls_propagate(ComplexField(grid, psi), spec, pcfg)
    with open(outdir / "conserved.csv", "w") as fh:
        fh.write("t,mass,energy\n")
        for t, m, e in zip(logs["t"], logs["mass"], logs["energy"]):
            fh.write(f"{t:.17g},{m:.17g},{e:.17g}\n")
    save_field(traj.snapshots[-1], outdir / "final.field")
    write_json(outdir / "evolve_summary.json", {
        "times": traj.times,
        "mass_drift": abs(logs["mass"][-1] - logs["mass"][0]) / logs["mass"][0],
        "energy_drift": abs(logs["energy"][-1] - logs["energy"][0])
        / max(abs(logs["energy"][0]), 1e-300)})
    return EXIT_OK


def cmd_stability(cfg, outdir: Path) -> int:
    grid, spec, sigmas = make_objects(cfg)
    n = cfg["dimension"]
    study = cfg["study"]
    pcfg = PropagatorConfig(**cfg["propagator"])
    eps = cfg["perturbation"].get("amplitude", 0.0) or 1e-300

    sep = separation_check(sigmas, pcfg.t_end, eps)
    if len(sigmas) > 1 and not sep["quantitative_pass"]:
        print("warning: quantitative separation alpha_min * L >= |log eps| fails",
              file=sys.stderr)

    families = [ProfileFamily(spec, n, s.alpha) for s in sigmas]
    from .galilei import soliton_field
    psi = np.zeros(grid.shape, dtype=np.complex128)
    for fam, s in zip(families, sigmas):
        prof, _ = fam.at(s.alpha)
        psi += soliton_field(prof, s, 0.0, grid).data
    psi += build_perturbation(cfg, grid)
    psi0 = ComplexField(grid, psi)

    dec0 = initial_decomposition(psi0, families, sigmas)
    traj, logs = nls_propagate(psi0, spec, pcfg)
    tr = track(traj, families, dec0)
    sinf = sigma_infinity(tr.path)
    monitor = bootstrap_monitor(tr, families, spec,
                                s=study.get("sobolev_index", 1),
                                delta=study.get("delta", 0.1),
                                C0=study.get("C0", 10.0),
                                sigma_inf=sinf["sigma_inf"])
    scat = scattering_extract(traj, sinf["sigma_inf"], families, spec)

    # decay table of the tracked remainder
    times = tr.remainders.times
    l2pi = [norm_l2_plus_linf(f) for f in tr.remainders.snapshots]
    with open(outdir / "remainder_decay.csv", "w") as fh:
        fh.write("t,l2_plus_linf,l2,linf\n")
        for t, f, v in zip(times, tr.remainders.snapshots, l2pi):
            fh.write(f"{t:.17g},{v:.17g},{norm_lp(f, 2):.17g},"
                     f"{norm_lp(f, math.inf):.17g}\n")
    fit = None
    window = study.get("fit_window")
    if window and max(times) > window[0]:
        try:
            fit = fit_power_law(times, l2pi, window)
        except ValueError:
            fit = None

    path_to_csv(tr.path, outdir / "path.csv")
    with open(outdir / "monitor.jsonl", "w") as fh:
        for rec in monitor["records"]:
            for key in ("sigma_tilde_dot", "gamma_dot", "path_deviation",
                        "hamiltonian_difference"):
                fh.write(json.dumps({"t": rec["t"], "check": key,
                                     "bound": rec[key]["bound"],
                                     "measured": rec[key]["measured"],
                                     "pass": rec[key]["pass"]},
                                    sort_keys=True, default=_json_default) + "\n")
    save_field(scat["u0"], outdir / "u0.field")
    write_json(outdir / "stability_summary.json", {
        "separation": sep,
        "orthogonality_max_residual": max(tr.residual_log),
        "sigma_infinity": [s.as_vector() for s in sinf["sigma_inf"]],
        "sigma_inf_admissible": sinf["admissible"],
        "monitor_all_pass": monitor["all_pass"],
        "xs_norm": monitor["xs_norm"],
        "scattering": {"u0_norm": scat["u0_norm"],
                       "mismatch_log": scat["mismatch_log"],
                       "tail_decreasing": scat["tail_decreasing"]},
        "decay_fit": fit,
        "mass_drift": abs(logs["mass"][-1] - logs["mass"][0]) / logs["mass"][0]})
    return EXIT_OK


def cmd_theta_study(cfg, outdir: Path) -> int:
    grid, spec, sigmas = make_objects(cfg)
    study = cfg["study"]
    thetas = study.get("thetas", [1e-1, 1e-2, 1e-3])
    rep = theta_family_study(sigmas[0].alpha, cfg["dimension"],
                             p=cfg["nonlinearity"].get("p", 2.0),
                             r=cfg["nonlinearity"].get("r", 1.0),
                             thetas=thetas,
                             c=cfg["nonlinearity"].get("c", 1.0))
    write_json(outdir / "theta_study.json", rep)
    with open(outdir / "theta_table.csv", "w") as fh:
        fh.write("theta,h1_distance,potential_lr_distance,negative_count,g0\n")
        for row in rep["rows"]:
            if row.get("status") in ("ok", "baseline"):
                fh.write(f"{row['theta']:.17g},{row['h1_distance']:.17g},"
                         f"{row['potential_lr_distance']:.17g},"
                         f"{row['negative_count']},{row['g0']:.17g}\n")
    good = rep["h1_monotone_decreasing"] and rep["negative_count_constant"] \
        and rep["g0_sign_constant"]
    return EXIT_OK if good else EXIT_VERDICT


COMMANDS = {
    "ground-state": cmd_ground_state,
    "admissibility": cmd_admissibility,
    "evolve": cmd_evolve,
    "stability": cmd_stability,
    "theta-study": cmd_theta_study,
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="solitonlab",
        description="Numerical studies of multi-soliton NLS dynamics.",
        epilog=_SCHEMA_DOC,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=-1, help="FFT worker count")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)

    fieldsmod.FFT_WORKERS = args.threads
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    outdir = Path(args.out or cfg.get("output_dir", "out"))
    outdir.mkdir(parents=True, exist_ok=True)
    write_manifest(outdir, cfg, args.command)
    try:
        code = COMMANDS[args.command](cfg, outdir)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BlowUpError, NoGroundStateError, SolverConvergenceError,
            DecompositionError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception:
        traceback.print_exc()
        return EXIT_NUMERICAL
    if args.verbose:
        print(f"{args.command}: exit {code}, outputs in {outdir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
