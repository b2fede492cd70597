"""Experiment driver: desk-scale reproductions of the solver studies.

Subcommands: solve | scaling-study | mu-trace | morozov | noise-table |
spectral-verify.  Configuration comes from an optional flat JSON file with
command-line flags overriding it; every run writes a JSON manifest with the
full effective configuration, and every CSV carries a schema/manifest comment
line plus a header row.  Runs are deterministic given (config, seed).
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .ipm import IpmConfig, outer_loop
from .meshfem import interpolate, write_vtk
from .problem import ModelProblem, ProblemConfig, rho_true
from .spectral import (
    build_dense_kkt,
    model_snapshot,
    spectrum_decay_study,
    verify_diagonalizability,
    verify_eig_ordering,
    verify_prop1,
    verify_residual_bound,
)

log = logging.getLogger(__name__)

SOLVER_CHOICES = ("gmres-blockgs", "cg-reduced", "gmres-central", "gmres-constraint")


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one CLI invocation."""

    command: str = "solve"
    mesh: int = 44
    meshes: tuple = (32, 64, 128)
    gamma: float = 1e-3
    gammas: tuple = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)
    noise: float = 0.05
    noise_levels: tuple = (0.01, 0.02, 0.05, 0.10)
    reg_gammas: tuple = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
    solver: str = "gmres-blockgs"
    seed: int = 0
    out: str = "ipgn-out"
    tol: float = 1e-6
    mu0: float = 0.05
    max_steps: int = 100
    spectral_meshes: tuple = (4, 6, 8)
    dump_blocks: bool = False

    def __post_init__(self):
        if self.solver not in SOLVER_CHOICES:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.mesh < 2 or self.mesh % 2:
            raise ConfigurationError("mesh must be an even integer >= 2")

    def problem_config(self, gamma=None, noise=None) -> ProblemConfig:
        return ProblemConfig(
            gamma1=self.gamma if gamma is None else gamma,
            gamma2=self.gamma if gamma is None else gamma,
            noise_level=self.noise if noise is None else noise,
            seed=self.seed,
        )

    def ipm_config(self, solver=None) -> IpmConfig:
        return IpmConfig(
            mu0=self.mu0, tol=self.tol, max_steps=self.max_steps,
            solver=solver or self.solver,
        )


def _write_csv(path: Path, header: list, rows: list, manifest_ref="manifest.json",
               schema="ipgn-table/v1"):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema} manifest={manifest_ref}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(outdir: Path, config: RunConfig, results: dict):
    manifest = {
        "schema": "ipgn-run/v1",
        "config": asdict(config),
        "results": results,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return manifest


def _outdir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ---------------------------------------------------------------


def run_solve(config: RunConfig) -> dict:
    """One optimizer run: writes the six solution fields, the per-step CSV and
    the manifest; returns the results block."""
    out = _outdir(config)
    problem = ModelProblem(config.mesh, config.problem_config())
    callback = None
    if config.dump_blocks:
        from .kkt import dump_blocks

        callback = lambda step, state, sys: dump_blocks(sys, out / "blocks", step)
    state, record = outer_loop(problem, config.ipm_config(), step_callback=callback)

    rt = interpolate(problem.mesh, rho_true).values
    write_vtk(out / "fields.vtk", problem.mesh, {
        "u_noisy": problem.data.u_noisy,
        "u_star": state.u,
        "lambda_star": state.lam,
        "rho_true": rt,
        "rho_star": state.rho,
        "z_star": state.z,
    }, title="solution fields")
    record.write_csv(out / "steps.csv")
    problem.save_data(out)

    results = {
        "converged": record.converged,
        "solves": record.n_solves,
        "mean_krylov_iters": record.mean_krylov_iters(),
        "final_mu": state.mu,
        "misfit_left": problem.left_misfit_norm(state.u),
        "noise_left": problem.left_noise_norm(),
        "rho_rel_error": problem.l2_norm(state.rho - rt) / problem.l2_norm(rt),
    }
    _write_manifest(out, config, results)
    return results


def run_scaling_study(config: RunConfig) -> dict:
    """Per-mesh optimizer solve counts and mean Krylov iterations for both
    solver paths (the mesh-independence table)."""
    out = _outdir(config)
    rows, failures = [], []
    per_mesh = {}
    for n in config.meshes:
        entry = {"dim_rho": (n + 1) ** 2}
        for solver in ("gmres-blockgs", "cg-reduced"):
            try:
                problem = ModelProblem(n, config.problem_config())
                _, record = outer_loop(problem, config.ipm_config(solver=solver))
                entry[solver] = {
                    "solves": record.n_solves,
                    "mean_iters": record.mean_krylov_iters(),
                }
            except Exception as exc:  # record and continue with other meshes
                failures.append({"mesh": n, "solver": solver, "error": str(exc)})
                log.warning("scaling-study point failed: n=%s %s: %s", n, solver, exc)
        per_mesh[n] = entry
        if "gmres-blockgs" in entry and "cg-reduced" in entry:
            rows.append([
                entry["dim_rho"],
                entry["gmres-blockgs"]["solves"],
                f"{entry['gmres-blockgs']['mean_iters']:.2f}",
                f"{entry['cg-reduced']['mean_iters']:.2f}",
                entry["cg-reduced"]["solves"],
            ])
    _write_csv(out / "scaling.csv",
               ["dim_rho", "ipgn_solves", "mean_gmres_iters", "mean_cg_iters",
                "ipgn_solves_cg_path"], rows)
    results = {"per_mesh": per_mesh, "failures": failures}
    _write_manifest(out, config, results)
    return results


def run_mu_trace(config: RunConfig) -> dict:
    """Per-step Krylov iterations for the three preconditioning strategies as
    the barrier parameter sweeps down (the mu-robustness trace)."""
    out = _outdir(config)
    traces = {}
    for solver in ("gmres-blockgs", "gmres-central", "cg-reduced"):
        problem = ModelProblem(config.mesh, config.problem_config())
        _, record = outer_loop(problem, config.ipm_config(solver=solver))
        traces[solver] = record

    n_steps = max(r.n_solves for r in traces.values())
    rows = []
    for k in range(n_steps):
        row = [k + 1]
        row.append(f"{traces['gmres-blockgs'].rows[k].mu:.6e}"
                   if k < traces["gmres-blockgs"].n_solves else "")
        for solver in ("gmres-blockgs", "gmres-central", "cg-reduced"):
            rec = traces[solver]
            row.append(rec.rows[k].krylov_iters if k < rec.n_solves else "")
        rows.append(row)
    _write_csv(out / "mu_trace.csv",
               ["step", "mu", "blockgs_iters", "central_iters", "cg_iters"], rows)

    results = {
        solver: {
            "iters": rec.krylov_iters(),
            "mu": rec.mu_trace(),
            "mean_iters": rec.mean_krylov_iters(),
        }
        for solver, rec in traces.items()
    }
    _write_manifest(out, config, results)
    return results


def run_morozov(config: RunConfig) -> dict:
    """Discrepancy-vs-regularization sweep; reports the bracketing interval of
    the crossing with the noise seminorm.  Nonzero status if no crossing."""
    out = _outdir(config)
    rows, signs = [], []
    noise_norm = None
    for gamma in config.gammas:
        problem = ModelProblem(config.mesh, config.problem_config(gamma=gamma))
        state, record = outer_loop(problem, config.ipm_config())
        misfit = problem.left_misfit_norm(state.u)
        noise_norm = problem.left_noise_norm()
        rows.append([f"{gamma:.6e}", f"{misfit:.12e}", f"{noise_norm:.12e}",
                     record.n_solves, f"{record.mean_krylov_iters():.2f}"])
        signs.append(misfit - noise_norm)
    _write_csv(out / "morozov.csv",
               ["gamma", "misfit_left", "noise_left", "solves", "mean_iters"], rows)

    bracket = None
    for i in range(len(signs) - 1):
        if signs[i] <= 0 <= signs[i + 1]:
            bracket = (config.gammas[i], config.gammas[i + 1])
            break
    results = {
        "noise_left": noise_norm,
        "misfit_minus_noise": signs,
        "bracket": bracket,
        "gamma_estimate": float(np.sqrt(bracket[0] * bracket[1])) if bracket else None,
    }
    _write_manifest(out, config, results)
    if bracket is None:
        raise ConfigurationError("no Morozov crossing inside the gamma range")
    return results


def _morozov_gamma(config: RunConfig, noise: float, grid, refinements: int = 2):
    """Bracket the discrepancy crossing on a log grid, then bisect in log space."""

    def misfit_gap(gamma):
        problem = ModelProblem(config.mesh, config.problem_config(gamma=gamma, noise=noise))
        state, record = outer_loop(problem, config.ipm_config())
        return (problem.left_misfit_norm(state.u) - problem.left_noise_norm(), record)

    lo = hi = None
    prev_gamma, prev_gap = None, None
    for gamma in grid:
        gap, _ = misfit_gap(gamma)
        if prev_gap is not None and prev_gap <= 0 <= gap:
            lo, hi = prev_gamma, gamma
            break
        prev_gamma, prev_gap = gamma, gap
    if lo is None:
        raise ConfigurationError(f"no Morozov crossing for noise level {noise}")
    for _ in range(refinements):
        mid = float(np.sqrt(lo * hi))
        gap, _ = misfit_gap(mid)
        lo, hi = (lo, mid) if gap >= 0 else (mid, hi)
    gamma = float(np.sqrt(lo * hi))
    _, record = misfit_gap(gamma)
    return gamma, record


def run_noise_table(config: RunConfig) -> dict:
    """Two tables: the Morozov regularization and mean iterations per noise
    level, and mean iterations across a regularization sweep at fixed noise."""
    out = _outdir(config)
    grid = np.geomspace(1e-5, 1e-1, 9)

    noise_rows, noise_results = [], {}
    for noise in config.noise_levels:
        gamma, record = _morozov_gamma(config, noise, grid)
        noise_rows.append([f"{noise:.3f}", f"{gamma:.4e}",
                           f"{record.mean_krylov_iters():.2f}", record.n_solves])
        noise_results[str(noise)] = {
            "gamma_morozov": gamma,
            "mean_iters": record.mean_krylov_iters(),
        }
    _write_csv(out / "noise_table.csv",
               ["noise_level", "gamma_morozov", "mean_gmres_iters", "solves"], noise_rows)

    reg_rows, reg_results = [], {}
    for gamma in config.reg_gammas:
        problem = ModelProblem(config.mesh, config.problem_config(gamma=gamma))
        _, record = outer_loop(problem, config.ipm_config())
        reg_rows.append([f"{gamma:.1e}", f"{record.mean_krylov_iters():.2f}",
                         record.n_solves])
        reg_results[f"{gamma:.0e}"] = record.mean_krylov_iters()
    _write_csv(out / "reg_table.csv", ["gamma", "mean_gmres_iters", "solves"], reg_rows)

    results = {"noise_table": noise_results, "reg_table": reg_results}
    _write_manifest(out, config, results)
    return results


def run_spectral_verify(config: RunConfig) -> dict:
    """Run every dense spectral verification on small meshes; nonzero exit on
    any failed check."""
    out = _outdir(config)
    results = {}
    failures = []

    ordering = verify_eig_ordering(trials=200, dim=12, rng=np.random.default_rng(config.seed))
    results["eig_ordering"] = {"checks": ordering.checks, **ordering.details}
    if not ordering.passed:
        failures.append("eig_ordering")

    for n in config.spectral_meshes:
        problem, state = model_snapshot(n, mu_stop=1e-2,
                                        config=config.problem_config())
        entry = {}
        for mu in (1e-1, 1e-3, 1e-5):
            dense = build_dense_kkt(problem, state, mu=mu)
            rep = verify_prop1(dense)
            entry[f"prop1_mu_{mu:g}"] = {"checks": rep.checks}
            if not rep.passed:
                failures.append(f"n{n}_prop1_mu_{mu:g}")

        dense = build_dense_kkt(problem, state, mu=1e-2, eps=1e-4)
        rep = verify_diagonalizability(dense, expect_defect=True)
        entry["diagonalizability"] = {"checks": rep.checks, **rep.details}
        if not rep.passed:
            failures.append(f"n{n}_diagonalizability")

        rep = verify_residual_bound(dense, n_rhs=5,
                                    rng=np.random.default_rng(config.seed))
        entry["residual_bound"] = {"checks": rep.checks, **rep.details}
        if not rep.passed:
            failures.append(f"n{n}_residual_bound")
        results[f"n{n}"] = entry

    decay = spectrum_decay_study([8, 16], [1e-1, 1e-5], n_eigs=10)
    _write_csv(out / "spectrum_decay.csv",
               ["mesh", "mu", "index", "eig_reg", "eig_w"],
               [[r["mesh"], r["mu"], r["index"], f"{r['eig_reg']:.12e}",
                 f"{r['eig_w']:.12e}"] for r in decay])

    results["failures"] = failures
    _write_manifest(out, config, results)
    print(f"{'PASS' if ordering.passed else 'FAIL'}  eig_ordering")
    for n in config.spectral_meshes:
        for key, entry in results[f"n{n}"].items():
            ok = all(entry["checks"].values())
            print(f"{'PASS' if ok else 'FAIL'}  n={n} {key}")
    if failures:
        raise ConfigurationError(f"spectral verification failures: {failures}")
    return results


COMMANDS = {
    "solve": run_solve,
    "scaling-study": run_scaling_study,
    "mu-trace": run_mu_trace,
    "morozov": run_morozov,
    "noise-table": run_noise_table,
    "spectral-verify": run_spectral_verify,
}


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


def _float_list(text):
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipgn",
        description="Interior-point Gauss-Newton experiments on the bound-"
        "constrained elliptic inverse model problem.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat JSON config file")
        p.add_argument("--mesh", type=int, help="cells per side (even)")
        p.add_argument("--meshes", type=_int_list, help="comma-separated mesh list")
        p.add_argument("--gamma", type=float, help="regularization weight")
        p.add_argument("--gammas", type=_float_list, help="comma-separated gamma list")
        p.add_argument("--noise", type=float, help="relative noise level")
        p.add_argument("--noise-levels", dest="noise_levels", type=_float_list)
        p.add_argument("--reg-gammas", dest="reg_gammas", type=_float_list)
        p.add_argument("--solver", choices=SOLVER_CHOICES)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=str)
        p.add_argument("--tol", type=float)
        p.add_argument("--mu0", type=float)
        p.add_argument("--max-steps", dest="max_steps", type=int)
        p.add_argument("--spectral-meshes", dest="spectral_meshes", type=_int_list)
        p.add_argument("--dump-blocks", dest="dump_blocks", action="store_const", const=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = {}
    if args.config is not None:
        base = json.loads(Path(args.config).read_text())
        unknown = set(base) - set(RunConfig.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("meshes", "gammas", "noise_levels", "reg_gammas", "spectral_meshes"):
            if key in base:
                base[key] = tuple(base[key])
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k in RunConfig.__dataclass_fields__ and v is not None and k != "command"
    }
    return RunConfig(command=args.command, **{**base, **overrides})


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        results = COMMANDS[args.command](config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # structured failure surface for scripts
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.command == "solve":
        status = "converged" if results["converged"] else "not converged"
        print(f"{status}: {results['solves']} solves, "
              f"mean Krylov iterations {results['mean_krylov_iters']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
