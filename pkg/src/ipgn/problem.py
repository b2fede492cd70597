"""The nonlinear elliptic inverse model problem on the unit square.

State u and parameter rho share the nodal bilinear space.  The PDE constraint
is -div(rho grad u) + u + u^3/3 = g with homogeneous Neumann flux, the misfit
observes u on the left half of the domain, and the regularization penalizes
the L2 and H1-seminorm energies of rho.  Forcing is manufactured so that
u_d = cos(pi y1) cos(pi y2) solves the PDE for rho_true = 1 + y2 exp(-y1^2).

Nonlinear terms (u^3 in the residual, 1 + u^2 in the state Jacobian) are
integrated with the 3x3 tensor Gauss rule so the Jacobians are consistent with
the residual to machine precision; the forcing is evaluated analytically at
quadrature points.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigurationError
from .meshfem import (
    NodalField,
    StructuredMesh,
    assemble_mass,
    assemble_subdomain_mass,
    assemble_weighted_stiffness,
    build_mesh,
    gauss_rule,
    interpolate,
    lumped_mass,
    read_vtk,
    shape_functions,
    shape_gradients,
    write_vtk,
    _scatter,
)

__all__ = [
    "ProblemConfig",
    "SyntheticData",
    "ProblemOperators",
    "ModelProblem",
    "u_data_exact",
    "rho_true",
    "forcing",
    "sample_noise",
]



def u_data_exact(y1, y2):
    """Noise-free data field cos(pi y1) cos(pi y2)."""
    return np.cos(np.pi * y1) * np.cos(np.pi * y2)


def rho_true(y1, y2):
    """True diffusivity 1 + y2 exp(-y1^2)."""
    return 1.0 + y2 * np.exp(-(y1**2))


def grad_u_data(y1, y2):
    pi = np.pi
    return (
        -pi * np.sin(pi * y1) * np.cos(pi * y2),
        -pi * np.cos(pi * y1) * np.sin(pi * y2),
    )


def grad_rho_true(y1, y2):
    e = np.exp(-(y1**2))
    return (-2.0 * y1 * y2 * e, e)


def forcing(y1, y2):
    """Manufactured source -div(rho_true grad u_d) + u_d + u_d^3/3, closed form."""
    ud = u_data_exact(y1, y2)
    du1, du2 = grad_u_data(y1, y2)
    dr1, dr2 = grad_rho_true(y1, y2)
    return 2.0 * np.pi**2 * rho_true(y1, y2) * ud - (dr1 * du1 + dr2 * du2) + ud + ud**3 / 3.0


def exact_fields():
    """Pointwise-evaluable (data, true-parameter) pair."""
    return u_data_exact, rho_true


@dataclass(frozen=True)
class ProblemConfig:
    """Weights, bound, and noise-model parameters for the model problem."""

    gamma1: float = 1e-3
    gamma2: float = 1e-3
    rho_lower: float = 1.0
    noise_level: float = 0.05
    corr_len: float = 0.25
    gamma_noise: float | None = None  # default set from corr_len below
    delta_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0 or (self.gamma1 == 0 and self.gamma2 == 0):
            raise ConfigurationError("regularization weights must be >= 0 and not both zero")
        if self.noise_level < 0:
            raise ConfigurationError("noise level must be nonnegative")
        if self.corr_len <= 0:
            raise ConfigurationError("correlation length must be positive")
        if not np.isfinite(self.rho_lower):
            raise ConfigurationError("lower bound must be finite")
        if self.gamma_noise is None:
            # Matern(nu=1) length scale: sqrt(gamma/delta) = corr_len/sqrt(8);
            # the post-hoc norm rescaling makes the absolute scale immaterial
            object.__setattr__(self, "gamma_noise", self.corr_len**2 / 8.0)

    def with_gamma(self, gamma: float) -> "ProblemConfig":
        return replace(self, gamma1=gamma, gamma2=gamma)


@dataclass
class SyntheticData:
    """Noise-free data, the noise sample, their sum, and the forcing handle."""

    u_data: np.ndarray
    zeta: np.ndarray
    u_noisy: np.ndarray
    g: callable = field(repr=False, default=forcing)


@dataclass
class ProblemOperators:
    """Constraint residual, Jacobians, gradients and Hessian blocks at (u, rho)."""

    c: np.ndarray
    Ju: sp.csr_matrix
    Jrho: sp.csr_matrix
    grad_u: np.ndarray
    grad_rho: np.ndarray
    H_uu: sp.csr_matrix
    H_rr: sp.csr_matrix


def sample_noise(mesh, config, rng, mass=None, stiffness=None, u_data=None):
    """Draw one noise field with squared-inverse-elliptic covariance.

    White nodal noise xi is pushed through two solves with
    K = gamma_noise * A + delta_noise * M (homogeneous Neumann) applied to
    M-weighted right-hand sides, then rescaled so the L2 norm equals
    noise_level times the L2 norm of the noise-free data.
    """
    mass = assemble_mass(mesh) if mass is None else mass
    if config.noise_level == 0.0:
        return NodalField(np.zeros(mesh.n_nodes), space="state")
    stiffness = assemble_weighted_stiffness(mesh, 1.0) if stiffness is None else stiffness
    if config.gamma_noise == 0.0 and config.delta_noise == 0.0:
        raise ConfigurationError("noise operator is singular: gamma and delta both zero")
    k_op = (config.gamma_noise * stiffness + config.delta_noise * mass).tocsc()
    lu = splu(k_op)
    xi = rng.standard_normal(mesh.n_nodes)
    z = lu.solve(mass @ lu.solve(mass @ xi))
    if u_data is None:
        u_data = interpolate(mesh, u_data_exact).values
    target = config.noise_level * np.sqrt(u_data @ (mass @ u_data))
    norm = np.sqrt(z @ (mass @ z))
    return NodalField(z * (target / norm), space="state")


class ModelProblem:
    """Mesh-bound problem: data synthesis, residual/Jacobian assembly, objective."""

    def __init__(self, mesh: StructuredMesh | int, config: ProblemConfig | None = None,
                 data: SyntheticData | None = None):
        self.mesh = build_mesh(mesh) if isinstance(mesh, int) else mesh
        self.config = config or ProblemConfig()

        self.M = assemble_mass(self.mesh)
        self.A = assemble_weighted_stiffness(self.mesh, 1.0)
        self.H_uu = assemble_subdomain_mass(self.mesh)
        self.H_rr = (self.config.gamma1 * self.M + self.config.gamma2 * self.A).tocsr()
        self.ML = np.asarray(lumped_mass(self.M).diagonal())
        self.rho_lower = np.full(self.mesh.n_nodes, self.config.rho_lower)

        if data is None:
            rng = np.random.default_rng(self.config.seed)
            u_d = interpolate(self.mesh, u_data_exact).values
            zeta = sample_noise(
                self.mesh, self.config, rng, mass=self.M, stiffness=self.A, u_data=u_d
            ).values
            data = SyntheticData(u_data=u_d, zeta=zeta, u_noisy=u_d + zeta)
        self.data = data

        # quadrature tables for the nonlinear constraint terms (3x3 rule)
        self._rule = gauss_rule(3)
        self._basis = shape_functions(self._rule.points)
        self._grads = shape_gradients(self._rule.points) * (2.0 / self.mesh.h)
        self._wdet = self._rule.weights * self.mesh.h**2 / 4.0
        qp = np.einsum("eck,qc->eqk", self.mesh.node_coords[self.mesh.cells], self._basis)
        self._g_at_quad = self.data.g(qp[..., 0], qp[..., 1])

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    # --- constraint and its Jacobians ------------------------------------

    def _fields_at_quad(self, values):
        return np.asarray(values, dtype=float)[self.mesh.cells] @ self._basis.T

    def constraint(self, u, rho) -> np.ndarray:
        """Residual vector of the discretized PDE at nodal (u, rho)."""
        u = np.asarray(u, dtype=float)
        rho = np.asarray(rho, dtype=float)
        conn = self.mesh.cells
        uq = self._fields_at_quad(u)
        rq = self._fields_at_quad(rho)
        graduq = np.einsum("ec,qcd->eqd", u[conn], self._grads)
        react = uq + uq**3 / 3.0 - self._g_at_quad
        cell = np.einsum("q,eq,eqd,qid->ei", self._wdet, rq, graduq, self._grads)
        cell += np.einsum("q,eq,qi->ei", self._wdet, react, self._basis)
        return np.bincount(conn.ravel(), weights=cell.ravel(), minlength=self.n_nodes)

    def assemble_Ju(self, u, rho) -> sp.csr_matrix:
        """State Jacobian: rho-weighted stiffness plus (1 + u^2)-weighted mass."""
        u = np.asarray(u, dtype=float)
        rho = np.asarray(rho, dtype=float)
        rq = self._fields_at_quad(rho)
        cq = 1.0 + self._fields_at_quad(u) ** 2
        local = np.einsum("q,eq,qid,qjd->eij", self._wdet, rq, self._grads, self._grads)
        local += np.einsum("q,eq,qi,qj->eij", self._wdet, cq, self._basis, self._basis)
        return _scatter(self.mesh, local)

    def assemble_Jrho(self, u) -> sp.csr_matrix:
        """Parameter Jacobian: rows pair grad u with state test gradients."""
        u = np.asarray(u, dtype=float)
        graduq = np.einsum("ec,qcd->eqd", u[self.mesh.cells], self._grads)
        local = np.einsum("q,eqd,qid,qj->eij", self._wdet, graduq, self._grads, self._basis)
        return _scatter(self.mesh, local)

    def ju_rediscretized(self, u, rho):
        """Callback factory: assemble the state Jacobian on coarser grids with
        injected nodal fields (for the multigrid hierarchy)."""
        u = np.asarray(u, dtype=float)
        rho = np.asarray(rho, dtype=float)
        fine_n = self.mesh.n

        def build(coarse_n: int) -> sp.csr_matrix:
            stride = fine_n // coarse_n
            take = lambda v: v.reshape(fine_n + 1, fine_n + 1)[::stride, ::stride].ravel()
            coarse = ModelProblem.__new__(ModelProblem)
            coarse.mesh = build_mesh(coarse_n)
            coarse._rule = gauss_rule(3)
            coarse._basis = shape_functions(coarse._rule.points)
            coarse._grads = shape_gradients(coarse._rule.points) * (2.0 / coarse.mesh.h)
            coarse._wdet = coarse._rule.weights * coarse.mesh.h**2 / 4.0
            return ModelProblem.assemble_Ju(coarse, take(u), take(rho))

        return build

    # --- objective, gradients, norms --------------------------------------

    def objective(self, u, rho) -> float:
        u = np.asarray(u, dtype=float)
        rho = np.asarray(rho, dtype=float)
        d = u - self.data.u_noisy
        misfit = 0.5 * d @ (self.H_uu @ d)
        reg = 0.5 * rho @ (self.H_rr @ rho)
        return float(misfit + reg)

    def gradients(self, u, rho):
        u = np.asarray(u, dtype=float)
        rho = np.asarray(rho, dtype=float)
        return self.H_uu @ (u - self.data.u_noisy), self.H_rr @ rho

    def hessians(self):
        return self.H_uu, self.H_rr

    def linearize(self, u, rho) -> ProblemOperators:
        grad_u, grad_rho = self.gradients(u, rho)
        return ProblemOperators(
            c=self.constraint(u, rho),
            Ju=self.assemble_Ju(u, rho),
            Jrho=self.assemble_Jrho(u),
            grad_u=grad_u,
            grad_rho=grad_rho,
            H_uu=self.H_uu,
            H_rr=self.H_rr,
        )

    def left_misfit_norm(self, u) -> float:
        """Discrepancy ||u - u_noisy|| in the left-subdomain L2 seminorm."""
        d = np.asarray(u, dtype=float) - self.data.u_noisy
        return float(np.sqrt(d @ (self.H_uu @ d)))

    def left_noise_norm(self) -> float:
        z = self.data.zeta
        return float(np.sqrt(z @ (self.H_uu @ z)))

    def l2_norm(self, values) -> float:
        v = np.asarray(values, dtype=float)
        return float(np.sqrt(v @ (self.M @ v)))

    # --- synthetic-data persistence ---------------------------------------

    def save_data(self, directory):
        """Write the synthetic fields plus a JSON sidecar for exact replay."""
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_vtk(
            directory / "synthetic_data.vtk",
            self.mesh,
            {"u_data": self.data.u_data, "zeta": self.data.zeta, "u_noisy": self.data.u_noisy},
            title="synthetic data",
        )
        sidecar = {"n": self.mesh.n, **config_to_dict(self.config)}
        (directory / "synthetic_data.json").write_text(json.dumps(sidecar, indent=2))


def config_to_dict(config: ProblemConfig) -> dict:
    return {
        "gamma1": config.gamma1,
        "gamma2": config.gamma2,
        "rho_lower": config.rho_lower,
        "noise_level": config.noise_level,
        "corr_len": config.corr_len,
        "gamma_noise": config.gamma_noise,
        "delta_noise": config.delta_noise,
        "seed": config.seed,
    }


def load_problem(directory) -> ModelProblem:
    """Rebuild a ModelProblem from files written by `ModelProblem.save_data`."""
    from pathlib import Path

    directory = Path(directory)
    sidecar = json.loads((directory / "synthetic_data.json").read_text())
    n = sidecar.pop("n")
    config = ProblemConfig(**sidecar)
    mesh, fields = read_vtk(directory / "synthetic_data.vtk")
    if mesh.n != n:
        raise ConfigurationError("sidecar and VTK mesh sizes disagree")
    data = SyntheticData(
        u_data=fields["u_data"], zeta=fields["zeta"], u_noisy=fields["u_noisy"]
    )
    return ModelProblem(mesh, config, data=data)
