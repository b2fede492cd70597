"""Bilinear (Q1) finite elements on a uniform quadrilateral grid over the unit
square.

Nodes are ordered lexicographically with the first coordinate fastest, so node
``k = j*(n+1) + i`` sits at ``(i*h, j*h)``.  All assembly routines are pure
functions of the mesh and the input fields and return canonical CSR matrices
(sorted indices, summed duplicates).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyCorruptionError, ConfigurationError

__all__ = [
    "StructuredMesh",
    "NodalField",
    "QuadratureRule",
    "gauss_rule",
    "build_mesh",
    "assemble_mass",
    "assemble_weighted_stiffness",
    "assemble_subdomain_mass",
    "lumped_mass",
    "interpolate",
    "integrate_cellwise",
    "write_vtk",
    "read_vtk",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on the reference cell [-1,1]^2."""

    points: np.ndarray  # (nq, 2) local coordinates
    weights: np.ndarray  # (nq,)

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ConfigurationError("quadrature weights must be positive")


def gauss_rule(npts: int) -> QuadratureRule:
    """Tensor product of the 1D Gauss-Legendre rule with `npts` points."""
    x, w = np.polynomial.legendre.leggauss(npts)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    return QuadratureRule(
        points=np.column_stack([xi.ravel(), eta.ravel()]),
        weights=(wx * wy).ravel(),
    )


def shape_functions(points: np.ndarray) -> np.ndarray:
    """Q1 shape functions at local points, ordered (-1,-1),(1,-1),(1,1),(-1,1)."""
    xi, eta = points[:, 0], points[:, 1]
    return 0.25 * np.column_stack(
        [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)]
    )


def shape_gradients(points: np.ndarray) -> np.ndarray:
    """Local gradients of the Q1 shape functions, shape (nq, 4, 2)."""
    xi, eta = points[:, 0], points[:, 1]
    dxi = 0.25 * np.column_stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.column_stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return np.stack([dxi, deta], axis=-1)


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform quad grid on the unit square with lexicographic node ordering."""

    n: int  # cells per side (even)
    node_coords: np.ndarray = field(repr=False)  # ((n+1)^2, 2)
    cells: np.ndarray = field(repr=False)  # (n^2, 4) corner node indices, ccw
    h: float = 0.0

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def n_cells(self) -> int:
        return self.n**2

    def cell_centers(self) -> np.ndarray:
        return self.node_coords[self.cells].mean(axis=1)


@dataclass
class NodalField:
    """Coefficient vector of a Q1 function; `space` tags its role."""

    values: np.ndarray
    space: str = "state"  # "state" or "parameter"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ConfigurationError("nodal field must be a flat vector")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return len(self.values)


def build_mesh(n: int) -> StructuredMesh:
    """Build the n-by-n cell grid; n must be even so y1=0.5 is a cell line."""
    if n < 2 or n % 2 != 0:
        raise ConfigurationError(f"cells per side must be an even integer >= 2, got {n}")
    h = 1.0 / n
    ticks = np.linspace(0.0, 1.0, n + 1)
    y2, y1 = np.meshgrid(ticks, ticks, indexing="ij")  # y1 fastest
    coords = np.column_stack([y1.ravel(), y2.ravel()])

    ci = np.arange(n)
    cj = np.arange(n)
    cjj, cii = np.meshgrid(cj, ci, indexing="ij")
    n00 = (cjj * (n + 1) + cii).ravel()
    cells = np.column_stack([n00, n00 + 1, n00 + n + 2, n00 + n + 1])
    return StructuredMesh(n=n, node_coords=coords, cells=cells, h=h)


def _scatter(mesh: StructuredMesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-cell 4x4 blocks `local` (n_cells,4,4) into a global CSR matrix."""
    conn = mesh.cells
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    mat = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _coeff_at_quad(mesh: StructuredMesh, coeff, basis: np.ndarray) -> np.ndarray:
    """Evaluate a nodal field or constant at all quadrature points, (n_cells, nq)."""
    if np.isscalar(coeff):
        return np.full((mesh.n_cells, basis.shape[0]), float(coeff))
    vals = np.asarray(coeff, dtype=float)
    if vals.shape != (mesh.n_nodes,):
        raise ConfigurationError("coefficient must be scalar or one value per node")
    return vals[mesh.cells] @ basis.T


def assemble_mass(mesh: StructuredMesh, rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """Mass matrix: entries are integrals of products of nodal basis functions."""
    rule = rule or gauss_rule(2)
    basis = shape_functions(rule.points)
    detj = mesh.h**2 / 4.0
    local = np.einsum("q,qi,qj->ij", rule.weights * detj, basis, basis)
    return _scatter(mesh, np.broadcast_to(local, (mesh.n_cells, 4, 4)))


def assemble_weighted_mass(
    mesh: StructuredMesh, coeff, rule: QuadratureRule | None = None
) -> sp.csr_matrix:
    """Mass matrix weighted by a nodal coefficient interpolated to quadrature."""
    rule = rule or gauss_rule(2)
    basis = shape_functions(rule.points)
    detj = mesh.h**2 / 4.0
    cq = _coeff_at_quad(mesh, coeff, basis)
    local = np.einsum("q,eq,qi,qj->eij", rule.weights * detj, cq, basis, basis)
    return _scatter(mesh, local)


def assemble_weighted_stiffness(
    mesh: StructuredMesh, coeff=1.0, rule: QuadratureRule | None = None
) -> sp.csr_matrix:
    """Stiffness matrix with a nodal (or constant) diffusion coefficient."""
    rule = rule or gauss_rule(2)
    basis = shape_functions(rule.points)
    grads = shape_gradients(rule.points) * (2.0 / mesh.h)  # physical gradients
    detj = mesh.h**2 / 4.0
    cq = _coeff_at_quad(mesh, coeff, basis)
    local = np.einsum("q,eq,qid,qjd->eij", rule.weights * detj, cq, grads, grads)
    return _scatter(mesh, local)


def assemble_subdomain_mass(
    mesh: StructuredMesh, rule: QuadratureRule | None = None
) -> sp.csr_matrix:
    """Mass matrix restricted to the left half y1 < 0.5 of the domain.

    Rows and columns of nodes supported entirely in the right half are zero;
    evenness of n guarantees the subdomain boundary is a mesh line.
    """
    rule = rule or gauss_rule(2)
    basis = shape_functions(rule.points)
    detj = mesh.h**2 / 4.0
    left = mesh.cell_centers()[:, 0] < 0.5
    local = np.zeros((mesh.n_cells, 4, 4))
    local[left] = np.einsum("q,qi,qj->ij", rule.weights * detj, basis, basis)
    return _scatter(mesh, local)


def lumped_mass(mass: sp.spmatrix) -> sp.csr_matrix:
    """Diagonal row-sum lumping of a mass matrix."""
    if mass.shape[0] != mass.shape[1]:
        raise ConfigurationError("lumping requires a square matrix")
    diag = np.asarray(mass.sum(axis=1)).ravel()
    if np.any(diag <= 0):
        raise AssemblyCorruptionError("nonpositive lumped-mass entry")
    return sp.diags(diag).tocsr()


def interpolate(mesh: StructuredMesh, fn, space: str = "state") -> NodalField:
    """Nodal interpolant of a pointwise function fn(y1, y2)."""
    y1, y2 = mesh.node_coords[:, 0], mesh.node_coords[:, 1]
    return NodalField(values=np.asarray(fn(y1, y2), dtype=float), space=space)


def integrate_cellwise(mesh: StructuredMesh, integrand, npts: int = 3) -> float:
    """Integrate integrand(y1, y2) over the domain with a tensor Gauss rule.

    The integrand is evaluated at the physical quadrature points of every cell;
    nodal fields can be folded in by the caller via closures over
    `shape_functions` values (see `l2_error`).
    """
    rule = gauss_rule(npts)
    basis = shape_functions(rule.points)
    qp = np.einsum("eck,qc->eqk", mesh.node_coords[mesh.cells], basis)
    detj = mesh.h**2 / 4.0
    vals = integrand(qp[..., 0], qp[..., 1])
    return float(np.einsum("q,eq->", rule.weights * detj, vals))


def l2_error(mesh: StructuredMesh, values, fn, npts: int = 4) -> float:
    """L2 distance between a Q1 field and a pointwise function, via quadrature
    finer than the assembly rule."""
    rule = gauss_rule(npts)
    basis = shape_functions(rule.points)
    vals = np.asarray(values, dtype=float)
    uh = vals[mesh.cells] @ basis.T  # (n_cells, nq)
    qp = np.einsum("eck,qc->eqk", mesh.node_coords[mesh.cells], basis)
    detj = mesh.h**2 / 4.0
    diff2 = (uh - fn(qp[..., 0], qp[..., 1])) ** 2
    return float(np.sqrt(np.einsum("q,eq->", rule.weights * detj, diff2)))


def inject_nodal(values: np.ndarray, fine_n: int) -> np.ndarray:
    """Restrict a nodal vector on an n-grid to the n/2-grid by injection."""
    if fine_n % 2 != 0:
        raise ConfigurationError("injection requires an even fine grid")
    grid = np.asarray(values, dtype=float).reshape(fine_n + 1, fine_n + 1)
    return grid[::2, ::2].ravel()


# --- VTK legacy ASCII structured-points IO -----------------------------------


def write_vtk(path, mesh: StructuredMesh, fields: dict, title: str = "ipgn fields"):
    """Write nodal scalar fields as a legacy ASCII STRUCTURED_POINTS dataset."""
    npts = mesh.n + 1
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {npts} {npts} 1",
        "ORIGIN 0 0 0",
        f"SPACING {mesh.h:.17g} {mesh.h:.17g} 1",
        f"POINT_DATA {mesh.n_nodes}",
    ]
    for name, values in fields.items():
        vals = np.asarray(values, dtype=float)
        if vals.shape != (mesh.n_nodes,):
            raise ConfigurationError(f"field '{name}' does not match the mesh")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.17g}" for v in vals)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path) -> tuple[StructuredMesh, dict]:
    """Read fields written by `write_vtk`; returns the mesh and a name->vector dict."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    dims = next(ln for ln in lines if ln.startswith("DIMENSIONS")).split()
    npts = int(dims[1])
    mesh = build_mesh(npts - 1)
    fields = {}
    i = 0
    while i < len(lines):
        if lines[i].startswith("SCALARS"):
            name = lines[i].split()[1]
            i += 2  # skip LOOKUP_TABLE
            vals = np.array([float(v) for v in lines[i : i + mesh.n_nodes]])
            fields[name] = vals
            i += mesh.n_nodes
        else:
            i += 1
    return mesh, fields
