"""Command-line front end: ``multihedin {solve,oracle,compare,sweep} --config run.yaml``.

Exit codes: 0 success (non-convergence is reported in the report, not as an
error), 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import hedin, oracle
from .config import RunConfig, build_model, build_scf_config, parse_config
from .errors import ConfigError, MultiHedinError
from .gf import MatsubaraMesh, kms_residual, matsubara_to_tau, tail_residual
from .report import table_csv, write_report

LOGGER = logging.getLogger("multihedin")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _model(cfg: RunConfig):
    try:
        return build_model(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _electron_number(model, numbers) -> float | None:
    for s, n in zip(model.species, numbers):
        if s.is_electron:
            return float(n)
    return None


def solve_section(cfg: RunConfig, scheme: str | None = None):
    """Run the SCF solver; returns ``(state, report_section)``."""
    model = _model(cfg)
    state = hedin.scf_run(model, build_scf_config(cfg, scheme))
    species = []
    for k, s in enumerate(model.species):
        rho = state.density_matrices[k]
        g = state.g[k]
        species.append({
            "name": s.name,
            "mu": float(state.mus[k]),
            "particle_number": float(np.trace(rho)),
            "densities": np.diag(rho),
            "density_matrix": rho,
            "kms_residual": kms_residual(matsubara_to_tau(g, state.config.n_tau)),
            "tail_residual": tail_residual(g),
        })
    if state.w is not None:
        w0 = state.w.data[state.w.mesh.position(0)].real
    else:
        w0 = model.coulomb
    section = {
        "scheme": state.config.scheme.value,
        "converged": bool(state.converged),
        "iterations": int(state.iteration),
        "species": species,
        "total_electron_number": _electron_number(model, [np.trace(r) for r in state.density_matrices]),
        "screened_interaction_nu0": w0,
        "max_dyson_residual": max(h["dyson_residual"] for h in state.history),
        "history": state.history,
    }
    return state, section


def oracle_section(cfg: RunConfig, mesh_freq: int | None = None, with_green: bool = True):
    """Exact diagonalization; returns ``(thermal_state, report_section)``."""
    if not cfg.oracle.enabled:
        raise ConfigError("oracle.enabled is false; oracle and compare runs need the oracle")
    model = _model(cfg)
    oc = cfg.oracle
    state = oracle.solve_thermal(model, oc.boson_cap, oc.ensemble, dim_cap=oc.dim_cap)
    obs = oracle.exact_observables(state)
    n_freq = cfg.solver.n_freq if mesh_freq is None else mesh_freq
    species, greens = [], []
    for k, s in enumerate(model.species):
        entry = {
            "name": s.name,
            "mu": float(obs["mus"][k]),
            "particle_number": float(obs["particle_numbers"][k]),
            "densities": obs["densities"][k],
            "density_matrix": obs["density_matrices"][k],
        }
        if with_green:
            mesh = MatsubaraMesh(model.beta, n_freq, s.statistics)
            g = oracle.lehmann_green(state, k, mesh)
            greens.append(g)
            entry["kms_residual"] = kms_residual(oracle.lehmann_tau(state, k, cfg.solver.n_tau))
            entry["tail_residual"] = tail_residual(g)
        species.append(entry)
    audit = {"cap": oc.boson_cap, "site_change": 0.0, "matrix_change": 0.0, "cap_limited": False}
    if any(s.statistics.value == "boson" for s in model.species):
        audit = oracle.audit_boson_cap(model, oc.boson_cap, oc.cap_threshold, oc.ensemble)
    section = {
        "ensemble": oc.ensemble,
        "boson_cap": oc.boson_cap,
        "hilbert_dimension": int(state.spectrum.space.dim),
        "species": species,
        "total_electron_number": _electron_number(model, obs["particle_numbers"]),
        "energy": obs["energy"],
        "cap_audit": audit,
    }
    return state, greens, section


def run_solve(cfg: RunConfig, scheme: str | None = None) -> dict:
    _, section = solve_section(cfg, scheme)
    return {"command": "solve", "solver": section}


def run_oracle(cfg: RunConfig) -> dict:
    _, _, section = oracle_section(cfg)
    return {"command": "oracle", "oracle": section}


def run_compare(cfg: RunConfig, scheme: str | None = None) -> dict:
    """Solver vs oracle: density-matrix, propagator and static-response deviations."""
    if not cfg.oracle.enabled:
        raise ConfigError("oracle.enabled is false; compare needs the oracle")
    model = _model(cfg)
    st, solver = solve_section(cfg, scheme)
    th, greens, exact = oracle_section(cfg, mesh_freq=st.g[0].mesh.n_freq)
    rows = []
    for k, s in enumerate(model.species):
        rho_s = np.asarray(solver["species"][k]["density_matrix"])
        rho_o = np.asarray(exact["species"][k]["density_matrix"])
        rows.append({
            "species": s.name,
            "density": float(np.max(np.abs(rho_s - rho_o))),
            "site_density": float(np.max(np.abs(np.diag(rho_s) - np.diag(rho_o)))),
            "green": float(np.max(np.abs(st.g[k].data - greens[k].data))),
        })
    p_all = st.polarizations or [
        hedin.polarization_gw(matsubara_to_tau(g, st.config.n_tau), st.config.n_freq) for g in st.g
    ]
    i0 = p_all[0].mesh.position(0)
    p_tot = hedin.total_polarization(p_all, model.species)[i0].real
    # The finite difference measures the reducible response, which includes
    # the Hartree feedback; P_tot alone is the irreducible part.
    chi = p_tot @ hedin.inverse_dielectric(p_all, model.species, model.coulomb)[i0].real
    fd = oracle.static_response(model, th.mus, cfg.oracle.boson_cap, cfg.oracle.response_step,
                                cfg.oracle.ensemble)["charge"]
    deviations = {
        "species": rows,
        "density": max(r["density"] for r in rows),
        "site_density": max(r["site_density"] for r in rows),
        "green": max(r["green"] for r in rows),
        "response_nu0": float(np.max(np.abs(p_tot - fd))),
        "screened_response_nu0": float(np.max(np.abs(chi - fd))),
        "solver_response_nu0": p_tot,
        "solver_screened_response_nu0": chi,
        "oracle_response_nu0": fd,
    }
    return {"command": "compare", "solver": solver, "oracle": exact, "deviations": deviations}


SWEEP_HEADER = ["value", "converged", "iterations", "electron_number", "density_deviation",
                "green_deviation", "response_deviation", "screened_response_deviation"]


def run_sweep(cfg: RunConfig, scheme: str | None = None) -> tuple[list, str]:
    """One report per sweep value (compare when the oracle is enabled); returns reports and CSV text."""
    if cfg.sweep is None:
        raise ConfigError("sweep block missing")
    reports, rows = [], []
    for value in cfg.sweep.values:
        sub = cfg.with_value(cfg.sweep.parameter, value)
        rep = run_compare(sub, scheme) if cfg.oracle.enabled else run_solve(sub, scheme)
        rep["sweep"] = {"parameter": cfg.sweep.parameter, "value": value}
        reports.append(rep)
        dev = rep.get("deviations", {})
        rows.append([float(value), str(rep["solver"]["converged"]).lower(), rep["solver"]["iterations"],
                     rep["solver"]["total_electron_number"], dev.get("density"), dev.get("green"),
                     dev.get("response_nu0"), dev.get("screened_response_nu0")])
    return reports, table_csv(SWEEP_HEADER, rows)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multihedin", description="Multispecies Hedin/GW solver with exact-diagonalization check.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("solve", "run the self-consistent solver"),
                       ("oracle", "run exact diagonalization"),
                       ("compare", "solver vs exact diagonalization"),
                       ("sweep", "repeat compare/solve over one scalar parameter")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--scheme", choices=[s.value for s in hedin.Scheme], help="override solver.scheme")
        p.add_argument("--seed", type=int, default=None, help="reserved; no stochastic components")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        out = Path(args.out if args.out else cfg.output.directory)
        start = time.perf_counter()
        if args.command == "sweep":
            reports, table = run_sweep(cfg, args.scheme)
            timing = {"total_seconds": time.perf_counter() - start}
            for i, rep in enumerate(reports):
                write_report(out / f"run_{i:03d}", rep, cfg.output.formats)
            out.mkdir(parents=True, exist_ok=True)
            (out / "sweep.csv").write_text(table)
            write_report(out, {"command": "sweep", "parameter": cfg.sweep.parameter, "runs": len(reports)},
                         ["json"], timing)
            print(table, end="")
            return EXIT_OK
        if args.command == "solve":
            report = run_solve(cfg, args.scheme)
        elif args.command == "oracle":
            report = run_oracle(cfg)
        else:
            report = run_compare(cfg, args.scheme)
        write_report(out, report, cfg.output.formats, {"total_seconds": time.perf_counter() - start})
        _summary(report)
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MultiHedinError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _summary(report: dict) -> None:
    if "solver" in report:
        s = report["solver"]
        print(f"solver {s['scheme']}: converged={s['converged']} iterations={s['iterations']}")
    if "deviations" in report:
        d = report["deviations"]
        for row in d["species"]:
            print(f"  {row['species']}: density {row['density']:.3e}  green {row['green']:.3e}")
        print(f"  static response (nu_0): {d['response_nu0']:.3e}  screened {d['screened_response_nu0']:.3e}")
    elif "oracle" in report:
        o = report["oracle"]
        print(f"oracle: dim={o['hilbert_dimension']} cap_limited={o['cap_audit']['cap_limited']}")


if __name__ == "__main__":
    sys.exit(main())
