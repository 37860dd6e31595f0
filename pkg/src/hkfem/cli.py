"""Command-line front end.

Every option can also be given in a flat ``key = value`` file passed with
``--config``; command-line flags take precedence over the file.
"""

import argparse
import logging
import os
import sys

import numpy as np

from hkfem import __version__
from hkfem.analysis import (
    GateFailure,
    convergence_study,
    dispersion_solve,
    predicted_anisotropy,
    resonance_gate,
    wavelength_anisotropy,
)
from hkfem.element import ElementKind
from hkfem.experiments import (
    mls_config,
    mls_wavelength_ratio,
    pulse_configs,
    solve_mls,
    solve_pulse,
    strip_translation_defect,
)
from hkfem.forms import (
    BcKind,
    DirectorField,
    FormAssembler,
    ProblemConfig,
    assemble_evp_pair,
    assemble_system,
    dump_matrix,
)
from hkfem.io import read_config_file, sample_grid, write_field_vtu, write_manifest, write_samples_csv
from hkfem.linalg import solve_direct
from hkfem.mesh import build_unit_square_mesh
from hkfem.space import FeFunction, build_space, compute_norms

log = logging.getLogger("hkfem")

# option name -> (type, default); shared by the parser and the config file
COMMON = {
    "alpha": (float, 1e-2),
    "beta": (float, 0.0),
    "k": (float, 10.0),
    "theta": (str, None),
    "bc": (str, "soft"),
    "element": (str, "ARG"),
    "level": (int, 3),
    "eta1": (float, None),
    "eta2": (float, None),
    "eta3": (float, None),
    "director": (str, "0"),
    "impedance_closure": (str, "yes"),
    "out": (str, "."),
    "sample": (int, 101),
    "vtu_splits": (int, 1),
    "rel_tol": (float, 1e-3),
}

SPECIFIC = {
    "convergence": {
        "k": (str, "10,20,30"),
        "beta": (str, "0,0.005"),
        "element": (str, "ARG"),
        "levels": (str, "2..5"),
    },
    "pulse": {
        "k": (float, 40.0),
        "beta": (float, 5e-3),
        "bc": (str, "soft,impedance"),
        "level": (int, 5),
        "theta": (str, "matched"),
        "angles": (str, "0,45,90"),
    },
    "mls": {
        "k": (float, 40.0),
        "alpha": (float, 1e-4),
        "beta": (float, 5e-5),
        "cells": (int, 48),
        "theta": (str, "matched"),
        "mls_central_director": (str, "y"),
        "mls_sides": (str, "impedance"),
    },
    "eigs": {"m": (int, 16)},
    "dispersion": {"angles": (str, "0,30,45,60,90")},
    "solve": {"forcing": (str, "plane"), "direction": (str, "0.3")},
}

FLAGS = ("dump_matrix", "mesh_dump", "override_gate")

COMMANDS = {
    "convergence": "manufactured plane-wave convergence tables",
    "pulse": "Gaussian pulse runs for several director angles",
    "mls": "two-region director experiment with an incoming wave",
    "eigs": "lowest eigenvalues and the resonance gate",
    "dispersion": "dispersion roots per propagation angle",
    "solve": "single solve with error norms and field output",
}

HELP = {
    "alpha": "Korteweg coefficient",
    "beta": "nematic coefficient (comma list for convergence)",
    "k": "wave number (comma list for convergence)",
    "level": "refinement level of the unit square mesh",
    "eta1": "penalty on alpha u/h^3 (element default if unset)",
    "eta2": "penalty on u/h and dn u/h (element default if unset)",
    "eta3": "penalty on beta u/h^3 (element default if unset)",
    "mls_central_director": "director in the central strip, x or y",
    "mls_sides": "side boundary condition, impedance or hard",
    "theta": "impedance parameter: number, 'k' or 'matched'",
    "bc": "soft, hard or impedance (comma list for pulse)",
    "element": "ARG or HCT",
    "director": "angle in degrees or vector 'nx,ny'",
    "impedance_closure": "yes/no: add the impedance closure term",
    "out": "output directory",
    "sample": "points per side of the CSV sample grid",
    "vtu_splits": "uniform splits per triangle in the VTU output",
    "rel_tol": "relative resonance-gate margin",
    "levels": "refinement levels, '2..5' or '2,3'",
    "angles": "director or propagation angles in degrees",
    "cells": "cells per side of the rectangle mesh",
    "m": "initial number of eigenvalues",
    "forcing": "plane (manufactured plane wave) or pulse",
    "direction": "plane-wave direction angle in radians",
}


def parse_levels(text):
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def parse_list(text, typ=float):
    return [typ(t) for t in str(text).split(",") if t.strip()]


def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_director(text):
    """An angle in degrees (``30``) or a vector (``1,0``)."""
    parts = parse_list(text)
    if len(parts) == 1:
        return DirectorField.from_angle(parts[0])
    if len(parts) == 2:
        return DirectorField.uniform(parts)
    raise ValueError(f"director must be an angle or a 2-vector, got {text!r}")


def parse_theta(text):
    if text is None or str(text).lower() in ("k", "none", ""):
        return None
    if str(text).lower() == "matched":
        return "matched"
    return float(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="hkfem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SPECIFIC:
        p = sub.add_parser(name, help=COMMANDS[name])
        opts = dict(COMMON)
        opts.update(SPECIFIC[name])
        for key, (_, value) in opts.items():
            default = "" if value is None else f" (default {value})"
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=str, default=None,
                           help=HELP.get(key, "") + default)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--dump-matrix", action="store_true", default=None, help="write the system matrix")
        p.add_argument("--mesh-dump", action="store_true", default=None, help="write the mesh as text")
        p.add_argument("--override-gate", action="store_true", default=None, help="solve even if the gate fails")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(_options=opts)
    return parser


def resolve(args):
    """Merge defaults, config file and flags into a plain dict of typed values."""
    opts = args._options
    values = {k: d for k, (_, d) in opts.items()}
    values.update({f: False for f in FLAGS})
    if args.config:
        for key, val in read_config_file(args.config).items():
            if key in FLAGS:
                values[key] = parse_bool(val)
            elif key in opts:
                values[key] = val
            else:
                raise SystemExit(f"unknown key {key!r} in {args.config}")
    for key in list(opts) + list(FLAGS):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for key, (typ, _) in opts.items():
        if values[key] is not None and typ is not str:
            values[key] = typ(values[key])
    return values


def problem_config(v):
    return ProblemConfig(
        alpha=float(v["alpha"]),
        beta=float(v["beta"]),
        k=float(v["k"]),
        theta=parse_theta(v["theta"]),
        bc_kind=BcKind.parse(v["bc"]),
        eta1=v["eta1"],
        eta2=v["eta2"],
        eta3=v["eta3"],
        director=parse_director(v["director"]),
        impedance_closure=parse_bool(v["impedance_closure"]),
    )


def echo(values, config=None):
    out = {"version": __version__}
    out.update({f"option.{k}": v for k, v in sorted(values.items())})
    if config is not None:
        out.update(
            {
                "config.alpha": config.alpha,
                "config.beta": config.beta,
                "config.k": config.k,
                "config.theta": config.theta,
                "config.epsilon": config.epsilon,
                "config.bc": config.bc_kind if not isinstance(config.bc_kind, dict)
                else {t: b.value for t, b in config.bc_kind.items()},
                "config.director": config.director.vectors,
                "config.impedance_closure": config.impedance_closure,
            }
        )
    return out


# subcommands ----------------------------------------------------------------------


def cmd_convergence(v):
    outputs, entries = [], echo(v)
    levels = parse_levels(v["levels"])
    for kind in parse_list(v["element"], str):
        for k in parse_list(v["k"]):
            for beta in parse_list(v["beta"]):
                cfg = problem_config(dict(v, k=k, beta=beta))
                table = convergence_study(cfg, kind, levels, override_gate=v["override_gate"],
                                          rel_tol=v["rel_tol"])
                path = os.path.join(v["out"], table.filename())
                table.to_csv(path)
                outputs.append(path)
                print(f"{table.filename()}: fitted H2 rate {table.fitted_rate():.3f}")
                for r in table.rows:
                    rate = "" if np.isnan(r.rateH2) else f"{r.rateH2:.3f}"
                    print(f"  level {r.level} dofs {r.dofs:6d} errH2 {r.errH2:.4e} rate {rate:>6} "
                          f"residual {r.residual:.1e} {r.gate.summary() if r.gate else ''}")
                tag = table.filename()[:-4]
                entries[f"{tag}.fitted_rate"] = table.fitted_rate()
                entries[f"{tag}.max_residual"] = max(r.residual for r in table.rows)
                entries[f"{tag}.gates"] = ";".join(r.gate.summary() for r in table.rows if r.gate)
    return entries, outputs


def _field_outputs(v, fn, stem, extra=None):
    X, Y, U = sample_grid(fn, v["sample"])
    csv_path = os.path.join(v["out"], stem + ".csv")
    vtu_path = os.path.join(v["out"], stem + ".vtu")
    write_samples_csv(csv_path, X, Y, U)
    write_field_vtu(fn, vtu_path, v["vtu_splits"], extra)
    return [csv_path, vtu_path]


def cmd_pulse(v):
    outputs, entries = [], echo(v)
    base = problem_config(dict(v, bc="soft"))
    angles = parse_list(v["angles"])
    for bc in parse_list(v["bc"], str):
        bc = BcKind.parse(bc)
        for tag, cfg in pulse_configs(base.with_(bc_kind=bc), angles):
            run = solve_pulse(cfg, v["level"], v["element"], override_gate=v["override_gate"],
                              rel_tol=v["rel_tol"])
            stem = f"pulse_{bc.value}_{tag}"
            outputs += _field_outputs(v, run.field, stem)
            n = cfg.director.vector(0)
            try:
                ratio = wavelength_anisotropy(run.field, (0.5, 0.5), n)
            except ValueError as exc:
                ratio = float("nan")
                log.warning("%s: %s", stem, exc)
            pred = predicted_anisotropy(cfg, n)
            print(f"{stem}: wavelength ratio along/across n = {ratio:.4f} (dispersion {pred:.4f}); "
                  f"{run.gate.summary()}")
            entries[f"{stem}.ratio"] = ratio
            entries[f"{stem}.predicted"] = pred
            entries[f"{stem}.gate"] = run.gate.summary()
            entries[f"{stem}.residual"] = run.residual
            if v["dump_matrix"]:
                path = os.path.join(v["out"], stem + "_matrix.txt")
                dump_matrix(run.system.matrix, path)
                outputs.append(path)
            if v["mesh_dump"] and not any(p.endswith("mesh.txt") for p in outputs):
                outputs.append(_dump_mesh(v, run.field.space.mesh))
    return entries, outputs


def cmd_mls(v):
    outputs, entries = [], echo(v)
    cfg = mls_config(
        alpha=v["alpha"], beta=v["beta"], k=v["k"], central=v["mls_central_director"],
        theta=parse_theta(v["theta"]), sides=v["mls_sides"], eta1=v["eta1"], eta2=v["eta2"], eta3=v["eta3"],
        impedance_closure=parse_bool(v["impedance_closure"]),
    )
    entries.update(echo({}, cfg))
    entries["mls.strip"] = "1/3 < x < 2/3 (region 1)"
    entries["mls.bc"] = f"top impedance with incoming wave, sides {v['mls_sides']}, bottom sound-soft"
    run = solve_mls(cfg, v["cells"], v["element"])
    directors = cfg.director.per_cell(run.field.space.mesh)

    def director_at(pts):
        cells, _ = run.field.space.locator.locate(pts)
        return directors[cells]

    outputs += _field_outputs(v, run.field, "mls_field", {"director": director_at})
    path = os.path.join(v["out"], "mls_director.csv")
    mesh = run.field.space.mesh
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    np.savetxt(path, np.column_stack([cent, directors, mesh.region_tags]), delimiter=",",
               header="x,y,nx,ny,region", comments="", fmt="%.10g")
    outputs.append(path)
    obs, pred = mls_wavelength_ratio(run.field, cfg)
    print(f"mls: central/outer vertical wavelength ratio {obs:.4f} (dispersion {pred:.4f}, "
          f"rel. diff {abs(obs / pred - 1):.3f})")
    entries["mls.wavelength_ratio"] = obs
    entries["mls.predicted_ratio"] = pred
    entries["mls.strip_translation_defect"] = strip_translation_defect(run.field)
    entries["mls.residual"] = run.residual
    if v["dump_matrix"]:
        path = os.path.join(v["out"], "mls_matrix.txt")
        dump_matrix(run.system.matrix, path)
        outputs.append(path)
    if v["mesh_dump"]:
        outputs.append(_dump_mesh(v, mesh))
    return entries, outputs


def cmd_eigs(v):
    cfg = problem_config(v)
    space = build_space(build_unit_square_mesh(v["level"]), ElementKind.parse(v["element"]))
    fa = FormAssembler(space, cfg.director)
    evp = assemble_evp_pair(space, cfg, fa)
    report = resonance_gate(space, cfg, m=v["m"], rel_tol=v["rel_tol"], evp=evp)
    print(report.summary())
    print(f"symmetry defect {evp.symmetry_defect:.3e}")
    for i, lam in enumerate(report.eigenvalues, 1):
        print(f"{i:4d} {lam:.10g}")
    path = os.path.join(v["out"], "eigenvalues.csv")
    report.to_csv(path)
    entries = echo(v, cfg)
    entries["gate"] = report.summary()
    return entries, [path]


def cmd_dispersion(v):
    cfg = problem_config(v)
    n = cfg.director.vector(0)
    entries = echo(v, cfg)
    print("angle_deg,d,wavelength")
    for a in parse_list(v["angles"]):
        t = np.deg2rad(a)
        d = dispersion_solve(cfg, (np.cos(t), np.sin(t)))
        print(f"{a:g},{d:.12g},{2 * np.pi / d:.12g}")
        entries[f"d.{a:g}"] = d
    ratio = predicted_anisotropy(cfg, n)
    print(f"# director ({n[0]:g}, {n[1]:g}); ratio along/across n (wavelengths) {ratio:.6f}")
    entries["predicted_ratio"] = ratio
    return entries, []


def cmd_solve(v):
    from hkfem.analysis import manufactured_forcing, plane_wave_solution
    from hkfem.experiments import gaussian_pulse

    cfg = problem_config(v)
    space = build_space(build_unit_square_mesh(v["level"]), ElementKind.parse(v["element"]))
    fa = FormAssembler(space, cfg.director)
    report = resonance_gate(space, cfg, rel_tol=v["rel_tol"], assembler=fa)
    print(report.summary())
    if not report.passed and not v["override_gate"]:
        raise GateFailure(report.summary())
    exact = f = None
    if v["forcing"] == "plane":
        t = float(v["direction"])
        f, exact = manufactured_forcing(cfg, plane_wave_solution(cfg, (np.cos(t), np.sin(t))))
    elif v["forcing"] == "pulse":
        f = gaussian_pulse()
    else:
        raise SystemExit(f"unknown forcing {v['forcing']!r} (plane or pulse)")
    system = assemble_system(space, cfg, f=f, exact=exact, assembler=fa)
    x = solve_direct(system.matrix, system.rhs)
    fn = FeFunction(space, x)
    entries = echo(v, cfg)
    entries["gate"] = report.summary()
    entries["residual"] = system.residual(x)
    print(f"dofs {space.ndofs} residual {system.residual(x):.2e}")
    if exact is not None:
        norms = compute_norms(fn, exact, cfg)
        for key, val in norms.items():
            print(f"err{key} {val:.6e}")
            entries[f"err.{key}"] = val
    outputs = _field_outputs(v, fn, "solution")
    if v["dump_matrix"]:
        path = os.path.join(v["out"], "matrix.txt")
        dump_matrix(system.matrix, path)
        outputs.append(path)
    if v["mesh_dump"]:
        outputs.append(_dump_mesh(v, space.mesh))
    return entries, outputs


def _dump_mesh(v, mesh):
    path = os.path.join(v["out"], "mesh.txt")
    with open(path, "w") as fh:
        fh.write(mesh.to_text())
    return path


COMMANDS = {
    "convergence": cmd_convergence,
    "pulse": cmd_pulse,
    "mls": cmd_mls,
    "eigs": cmd_eigs,
    "dispersion": cmd_dispersion,
    "solve": cmd_solve,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(args)
        os.makedirs(values["out"], exist_ok=True)
        entries, outputs = COMMANDS[args.command](values)
    except GateFailure as exc:
        print(f"resonance gate failed: {exc} (use --override-gate to solve anyway)", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    entries["command"] = args.command
    write_manifest(os.path.join(values["out"], f"manifest_{args.command}.txt"), entries, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
