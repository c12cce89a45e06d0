"""Command-line surface: forward solves, synthetic data, reconstruction,
Jacobian checking and plot-data reports.

Configuration is flat ``key = value`` text with ``[section]`` grouping. Exit
codes: 0 success, 2 usage/configuration error, 3 numerical failure. All
floating-point output uses 17 significant digits. ``EIT_THREADS`` caps the
worker pool used for finite-difference columns in ``check-jacobian``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contacts import (
    ContactParams,
    initial_contacts,
    ph_prior_mean,
    read_contacts,
    summarize,
    write_contacts,
)
from .experiments import (
    assert_no_inverse_crime,
    center_error,
    cem_midpoint_support,
    conductance_stats,
    read_scenario,
    synth_data,
)
from .forward import (
    AssemblyError,
    CurrentPatternSet,
    DomainConductivity,
    SolverError,
    assemble,
    measurements,
    solve,
)
from .gauss_newton import TikhonovProblem, run, scalar_fit
from .jacobian import fd_oracle, jacobian_contact, jacobian_kappa
from .mesh import MeshError, locate_electrodes, read_electrode_intervals, read_mesh
from .priors import PriorError, PriorSpec, build_whitener, cov_kappa, cov_ph, cov_pl

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


def fmt(x: float) -> str:
    return f"{x:.17g}"


def worker_count() -> int:
    raw = os.environ.get("EIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class RunConfig:
    mesh_path: Path
    electrodes_path: Path
    data_path: Path | None
    truth_path: Path | None
    contacts_path: Path | None
    kappa_path: Path | None
    variant: str
    kappa_mode: str
    amplitude: float
    sigma0: float
    sigma_mean: float
    true_width: float | None
    initial_net: float
    max_iter: int
    tol: float
    seed: int
    wolfe_curvature: bool
    priors: PriorSpec

    @classmethod
    def load(cls, path, variant_override=None, seed_override=None) -> "RunConfig":
        cfg = configparser.ConfigParser()
        if not cfg.read(path):
            raise ConfigError(f"cannot read config file {path}")
        base = Path(path).parent

        def resolve(section, key):
            raw = cfg.get(section, key, fallback=None)
            if raw is None or not raw.strip():
                return None
            p = Path(raw)
            return p if p.is_absolute() else base / p

        paths = "paths"
        model = "model"
        mesh_path = resolve(paths, "mesh")
        electrodes_path = resolve(paths, "electrodes")
        if mesh_path is None or electrodes_path is None:
            raise ConfigError("config needs [paths] mesh and electrodes")
        for name, p in (("mesh", mesh_path), ("electrodes", electrodes_path)):
            if not p.exists():
                raise ConfigError(f"{name} file {p} does not exist")

        pr = "priors"
        priors = PriorSpec(
            gamma_kappa=cfg.getfloat(pr, "gamma_kappa", fallback=10.0),
            lambda_kappa=cfg.getfloat(pr, "lambda_kappa", fallback=3e-2),
            gamma_theta=cfg.getfloat(pr, "gamma_theta", fallback=5e2),
            lambda_theta=cfg.getfloat(pr, "lambda_theta", fallback=3e-3),
            gamma_h=cfg.getfloat(pr, "gamma_h", fallback=1e3),
            gamma_l=cfg.getfloat(pr, "gamma_l", fallback=10.0**1.5),
            gamma_w=cfg.getfloat(pr, "gamma_w", fallback=1e2),
        )
        try:
            priors.validate()
        except PriorError as exc:
            raise ConfigError(str(exc)) from exc

        variant = variant_override or cfg.get(model, "variant", fallback="ph")
        if variant not in ("cem", "pl", "ph"):
            raise ConfigError(f"unknown variant {variant!r}")
        kappa_mode = cfg.get(model, "kappa_mode", fallback="scalar")
        if kappa_mode not in ("scalar", "nodal"):
            raise ConfigError(f"unknown kappa_mode {kappa_mode!r}")
        amplitude = cfg.getfloat(model, "amplitude", fallback=1e-3)
        if not amplitude > 0.0:
            raise ConfigError("current amplitude must be positive")
        tw = cfg.get(model, "true_width", fallback="")
        seed = seed_override if seed_override is not None else cfg.getint(model, "seed", fallback=0)

        return cls(
            mesh_path=mesh_path,
            electrodes_path=electrodes_path,
            data_path=resolve(paths, "data"),
            truth_path=resolve(paths, "truth"),
            contacts_path=resolve(paths, "contacts"),
            kappa_path=resolve(paths, "kappa"),
            variant=variant,
            kappa_mode=kappa_mode,
            amplitude=amplitude,
            sigma0=cfg.getfloat(model, "sigma0", fallback=0.02),
            sigma_mean=cfg.getfloat(model, "sigma_mean", fallback=0.02),
            true_width=float(tw) if tw.strip() else None,
            initial_net=cfg.getfloat(model, "initial_net", fallback=1e-3),
            max_iter=cfg.getint(model, "max_iter", fallback=50),
            tol=cfg.getfloat(model, "tol", fallback=1e-8),
            seed=seed,
            wolfe_curvature=cfg.getboolean(model, "wolfe_curvature", fallback=False),
            priors=priors,
        )


def _load_geometry(config: RunConfig):
    mesh = read_mesh(config.mesh_path)
    intervals = read_electrode_intervals(config.electrodes_path)
    electrodes = locate_electrodes(mesh, intervals)
    currents = CurrentPatternSet(len(electrodes), config.amplitude)
    return mesh, electrodes, currents


def _support(config: RunConfig, electrodes):
    """Contact support implied by a known true-electrode width, if any."""
    if config.true_width is None:
        return None
    return cem_midpoint_support(electrodes, config.true_width)


def _initial_contact(config: RunConfig, mesh, electrodes) -> ContactParams:
    if config.contacts_path is not None:
        return read_contacts(config.contacts_path, electrodes=electrodes)
    return initial_contacts(
        config.variant, electrodes, net=config.initial_net,
        support=_support(config, electrodes),
    )


def _initial_kappa(config: RunConfig, mesh) -> DomainConductivity:
    if config.kappa_path is not None:
        values = read_kappa_csv(config.kappa_path, mesh.n_nodes)
        return DomainConductivity.nodal(values)
    if config.kappa_mode == "nodal":
        return DomainConductivity.nodal(np.full(mesh.n_nodes, np.log(config.sigma0)))
    return DomainConductivity.scalar(np.log(config.sigma0))


def write_measurements_csv(vec: np.ndarray, M: int, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pattern", "electrode", "voltage"])
        for i in range(M - 1):
            for m in range(M):
                writer.writerow([i + 1, m + 1, fmt(vec[i * M + m])])


def read_measurements_csv(path, M: int) -> np.ndarray:
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if rows and rows[0][:2] == ["pattern", "electrode"]:
        rows = rows[1:]
    expected = M * (M - 1)
    if len(rows) != expected:
        raise ConfigError(
            f"data file {path} has {len(rows)} rows, expected {expected} "
            f"for {M} electrodes"
        )
    vec = np.zeros(expected)
    for pat, el, volt in rows:
        vec[(int(pat) - 1) * M + (int(el) - 1)] = float(volt)
    return vec


def write_kappa_csv(kappa: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["node", "kappa"])
        for i, v in enumerate(kappa):
            writer.writerow([i, fmt(v)])


def read_kappa_csv(path, n_nodes: int) -> np.ndarray:
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if rows and rows[0][0] == "node":
        rows = rows[1:]
    if len(rows) != n_nodes:
        raise ConfigError(f"kappa file {path} has {len(rows)} rows for {n_nodes} nodes")
    vec = np.zeros(n_nodes)
    for node, value in rows:
        vec[int(node)] = float(value)
    return vec


def cmd_forward(config: RunConfig, out: Path) -> int:
    mesh, electrodes, currents = _load_geometry(config)
    contact = _initial_contact(config, mesh, electrodes)
    conductivity = _initial_kappa(config, mesh)
    sol = solve(assemble(mesh, electrodes, conductivity, contact), currents)
    out.mkdir(parents=True, exist_ok=True)
    write_measurements_csv(measurements(sol), len(electrodes), out / "measurements.csv")
    print(out / "measurements.csv")
    return EXIT_OK


def cmd_synth(config: RunConfig, scenario_path, out: Path, seed_override=None) -> int:
    mesh, _, _ = _load_geometry(config)
    scenario = read_scenario(scenario_path)
    if seed_override is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=seed_override)
    result = synth_data(scenario, mesh, levels=1, amplitude=config.amplitude)
    out.mkdir(parents=True, exist_ok=True)
    M = len(scenario.true_intervals)
    write_measurements_csv(result.measurements, M, out / "measurements.csv")
    with open(out / "truth.json", "w") as f:
        json.dump(result.truth, f, indent=1, sort_keys=True)
        f.write("\n")
    print(out / "measurements.csv")
    print(out / "truth.json")
    return EXIT_OK


def _build_problem(config: RunConfig, mesh, electrodes, currents, data):
    support = _support(config, electrodes)
    template = initial_contacts(
        config.variant, electrodes, net=config.initial_net, support=support
    )
    spec = config.priors
    theta_cov = None
    theta_mean = None
    if config.variant == "pl":
        theta_cov = cov_pl(mesh, electrodes, spec.gamma_theta, spec.lambda_theta)
        theta_mean = np.zeros(template.n_params)
    elif config.variant == "ph":
        theta_cov = cov_ph(len(electrodes), spec.gamma_h, spec.gamma_l, spec.gamma_w)
        theta_mean = ph_prior_mean(electrodes, support=support)
    kappa_cov = None
    kappa_mean = None
    if config.kappa_mode == "nodal":
        kappa_cov = cov_kappa(mesh, spec.gamma_kappa, spec.lambda_kappa)
        kappa_mean = np.full(mesh.n_nodes, np.log(config.sigma_mean))
    whitener = build_whitener(None, kappa_cov, theta_cov, len(data))
    problem = TikhonovProblem(
        mesh=mesh,
        electrodes=electrodes,
        currents=currents,
        data=data,
        kappa_mode=config.kappa_mode,
        contact_template=template,
        whitener=whitener,
        kappa_mean=kappa_mean,
        theta_mean=theta_mean,
        wolfe_curvature=config.wolfe_curvature,
    )
    kappa0 = (
        np.full(mesh.n_nodes, np.log(config.sigma0))
        if config.kappa_mode == "nodal"
        else np.array([np.log(config.sigma0)])
    )
    tau0 = np.concatenate([kappa0, template.theta])
    return problem, template, tau0


def cmd_reconstruct(config: RunConfig, out: Path) -> int:
    mesh, electrodes, currents = _load_geometry(config)
    if config.data_path is None:
        raise ConfigError("reconstruct needs [paths] data")
    data = read_measurements_csv(config.data_path, len(electrodes))

    truth = None
    if config.truth_path is not None:
        with open(config.truth_path) as f:
            truth = json.load(f)
        assert_no_inverse_crime(truth, mesh)

    problem, template, tau0 = _build_problem(config, mesh, electrodes, currents, data)
    out.mkdir(parents=True, exist_ok=True)
    log = open(out / "iterations.jsonl", "w")

    def on_iteration(record):
        log.write(json.dumps(record) + "\n")

    try:
        if config.kappa_mode == "scalar":
            kopt, theta_opt, residual, state = scalar_fit(
                problem, tau0, max_iter=config.max_iter, tol=config.tol,
                on_iteration=on_iteration,
            )
            kappa_full = np.full(mesh.n_nodes, kopt)
        else:
            state = run(
                problem, tau0, max_iter=config.max_iter, tol=config.tol,
                on_iteration=on_iteration,
            )
            kappa_part, theta_opt = problem.split(state.tau)
            kappa_full = kappa_part
            residual = float(np.linalg.norm(state.final_measurements - data))
    finally:
        log.close()

    contact_opt = template.with_theta(theta_opt)
    write_kappa_csv(kappa_full, out / "kappa.csv")
    write_contacts(contact_opt, out / "theta.csv")

    summary = summarize(contact_opt, electrodes)
    try:
        log_mean, log_std = conductance_stats(summary)
    except ValueError:
        log_mean = log_std = None
    center_mm = None
    if truth is not None:
        try:
            err = center_error(
                summary, [tuple(iv) for iv in truth["true_intervals"]], mesh.perimeter
            )
            center_mm = err * 1000.0
        except ValueError:
            center_mm = None

    terms = state.terms
    payload = {
        "residual": residual,
        "sigma_mean": float(np.mean(np.exp(kappa_full))),
        "objective_terms": {
            "data": float(np.sqrt(terms["data"])),
            "kappa": None if terms["kappa"] is None else float(np.sqrt(terms["kappa"])),
            "theta": None if terms["theta"] is None else float(np.sqrt(terms["theta"])),
        },
        "log_conductance_mean": log_mean,
        "log_conductance_std": log_std,
        "center_error_mm": center_mm,
        "iterations": state.iteration,
        "convergence_reason": state.reason,
    }
    with open(out / "summary.json", "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    print(out / "summary.json")
    return EXIT_OK


def cmd_check_jacobian(config: RunConfig, out: Path | None) -> int:
    mesh, electrodes, currents = _load_geometry(config)
    if mesh.n_nodes > 1000:
        print(
            f"warning: {mesh.n_nodes}-node mesh; finite differences will be slow",
            file=sys.stderr,
        )
    contact = _initial_contact(config, mesh, electrodes)
    conductivity = _initial_kappa(config, mesh)
    system = assemble(mesh, electrodes, conductivity, contact)
    sol = solve(system, currents)
    J_kappa = jacobian_kappa(sol)
    J_theta = jacobian_contact(sol)

    if conductivity.mode == "scalar":
        kappa0 = np.array([conductivity.kappa])
    else:
        kappa0 = np.asarray(conductivity.kappa)

    def kappa_map(k):
        cond = (
            DomainConductivity.scalar(k[0])
            if conductivity.mode == "scalar"
            else DomainConductivity.nodal(k)
        )
        return measurements(solve(assemble(mesh, electrodes, cond, contact), currents))

    def theta_map(t):
        return measurements(
            solve(assemble(mesh, electrodes, conductivity, contact.with_theta(t)), currents)
        )

    def column_error(args):
        J, f, x0, k = args
        step = 1e-6 * max(1.0, abs(x0[k]))
        fd = fd_oracle(f, x0, k, step)
        return float(
            np.linalg.norm(J[:, k] - fd) / max(np.linalg.norm(fd), 1e-300)
        )

    jobs = [(J_kappa, kappa_map, kappa0, k) for k in range(J_kappa.shape[1])]
    jobs += [(J_theta, theta_map, contact.theta, k) for k in range(J_theta.shape[1])]
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(column_error, jobs))
    else:
        errors = [column_error(j) for j in jobs]
    nk = J_kappa.shape[1]
    payload = {
        "kappa": max(errors[:nk]),
        "theta": max(errors[nk:]),
    }
    text = json.dumps(payload, indent=1, sort_keys=True)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "jacobian_check.json").write_text(text + "\n")
    return EXIT_OK


def cmd_report(config: RunConfig, recon: Path, out: Path, samples: int = 256) -> int:
    mesh, electrodes, _ = _load_geometry(config)
    kappa = read_kappa_csv(recon / "kappa.csv", mesh.n_nodes)
    contact = read_contacts(recon / "theta.csv", electrodes=electrodes)
    out.mkdir(parents=True, exist_ok=True)

    from .contacts import eval_zeta

    with open(out / "zeta_samples.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["electrode", "t", "arclength", "zeta"])
        t = (np.arange(samples) + 0.5) / samples
        for elec in electrodes:
            z = eval_zeta(contact, elec, t)
            s = elec.to_arclength(t)
            for tj, sj, zj in zip(t, s, z):
                writer.writerow([elec.index, fmt(tj), fmt(sj), fmt(zj)])

    with open(out / "kappa_nodes.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["node", "x", "y", "kappa", "sigma"])
        for i, ((x, y), k) in enumerate(zip(mesh.nodes, kappa)):
            writer.writerow([i, fmt(x), fmt(y), fmt(k), fmt(np.exp(k))])
    print(out / "zeta_samples.csv")
    print(out / "kappa_nodes.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eitcontact",
        description="EIT forward/inverse toolkit with extended electrodes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--variant", choices=["cem", "pl", "ph"], default=None)
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    common(sub.add_parser("forward", help="solve the forward problem, write voltages"))
    p_synth = sub.add_parser("synth", help="generate synthetic measurement data")
    common(p_synth)
    p_synth.add_argument("--scenario", required=True, help="scenario file")
    common(sub.add_parser("reconstruct", help="run the Gauss-Newton reconstruction"))
    p_check = sub.add_parser("check-jacobian", help="compare Jacobians to finite differences")
    p_check.add_argument("--config", required=True)
    p_check.add_argument("--variant", choices=["cem", "pl", "ph"], default=None)
    p_check.add_argument("--seed", type=int, default=None)
    p_check.add_argument("--out", default=None)
    p_report = sub.add_parser("report", help="emit plot data from a reconstruction")
    common(p_report)
    p_report.add_argument("--recon", required=True, help="reconstruction output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config, variant_override=args.variant, seed_override=args.seed)
        if args.command == "forward":
            return cmd_forward(config, Path(args.out))
        if args.command == "synth":
            return cmd_synth(config, args.scenario, Path(args.out), seed_override=args.seed)
        if args.command == "reconstruct":
            return cmd_reconstruct(config, Path(args.out))
        if args.command == "check-jacobian":
            out = Path(args.out) if args.out else None
            return cmd_check_jacobian(config, out)
        if args.command == "report":
            return cmd_report(config, Path(args.recon), Path(args.out))
        raise ConfigError(f"unknown command {args.command!r}")
    except (AssemblyError, SolverError, PriorError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, MeshError, FileNotFoundError, configparser.Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
