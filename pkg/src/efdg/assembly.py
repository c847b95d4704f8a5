"""Assembly of the DG operator matrices and right-hand sides.

Degrees of freedom are midpoint values per (element, local edge): dof
3*K + l sits at the midpoint of the edge opposite local vertex l of
triangle K.  The basis function of a dof is the P1 bubble phi = 1 - 2*lam
(lam = barycentric coordinate of the opposite vertex), whose trace on its
own edge is identically 1 and whose mean on every other edge vanishes, so
edge projections of DG functions are just midpoint values.

Every matrix entry is a signed sum of products of fitted quantities and
geometry.  The products are formed by adding logs and exponentiating once
("core" values); the volume and consistency contributions of one element
reuse the same core float, which makes the cancellations behind the block
structure of the split system exact in floating point, not just small.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import SingularOperatorError
from .fitting import FittingData
from .logscale import LOG_MAX, exp_flushed
from .mesh import Mesh


@dataclass(frozen=True)
class DofMap:
    """Bijection (element, local edge slot) <-> global dof index 3K + slot."""

    mesh: Mesh
    dof_edge: np.ndarray       # (N,) edge id of each dof
    dof_elem: np.ndarray       # (N,) element of each dof
    dof_side: np.ndarray       # (N,) 0 if the dof's element is K+, else 1
    dof_is_boundary: np.ndarray  # (N,) bool
    edge_dofs: np.ndarray      # (n_e, 2) dof ids (K+ side, K- side or -1)

    @property
    def n_dofs(self) -> int:
        return self.dof_edge.shape[0]


def build_dofmap(mesh: Mesh) -> DofMap:
    n_k = mesh.n_triangles
    dof_edge = mesh.element_edges.reshape(-1).copy()
    dof_elem = np.repeat(np.arange(n_k), 3)
    dof_is_boundary = mesh.boundary_mask[dof_edge]
    edge_dofs = np.full((mesh.n_edges, 2), -1, dtype=np.int64)
    dofs = np.arange(3 * n_k)
    side = np.where(mesh.edge_elems[dof_edge, 0] == dof_elem, 0, 1)
    edge_dofs[dof_edge, side] = dofs
    n_dofs = 3 * n_k
    assert n_dofs == 2 * mesh.n_edges - mesh.n_boundary_edges
    return DofMap(mesh=mesh, dof_edge=dof_edge, dof_elem=dof_elem,
                  dof_side=side, dof_is_boundary=dof_is_boundary,
                  edge_dofs=edge_dofs)


@dataclass
class DGSolution:
    """Coefficient vector over a DofMap (midpoint values per element edge)."""

    values: np.ndarray
    mesh: Mesh
    dofmap: DofMap
    n_overflow: int = 0

    def midpoints(self) -> np.ndarray:
        return self.mesh.edge_midpoints[self.dofmap.dof_edge]


def _check_same_mesh(mesh: Mesh, dofmap: DofMap, fitting: FittingData) -> None:
    if dofmap.mesh is not mesh or fitting.mesh is not mesh:
        raise ValueError("mesh, dofmap and fitting data do not belong together")


def _core_logs(mesh: Mesh, fitting: FittingData):
    """Log magnitude and sign of core(K,i,j) = kappa*_K |e_i||e_j|/|K| n_i.n_j s_i s_j.

    core(K,i,j) equals |e_i| * (kappa* grad phi_j) . n_out(K, e_i); it is both
    the volume integral of kappa* grad phi_j . grad phi_i over K and, up to
    the factors -1/2, +1/2 or -1, the consistency term of edge e_i.
    """
    e = mesh.element_edges           # (n_K, 3)
    n = mesh.edge_normals[e]         # (n_K, 3, 2)
    dots = np.einsum("kia,kja->kij", n, n)
    signs = np.sign(dots) * (mesh.element_edge_signs[:, :, None]
                             * mesh.element_edge_signs[:, None, :])
    log_len = np.log(mesh.edge_lengths)[e]
    with np.errstate(divide="ignore"):
        log_core = (fitting.log_kappa_star[:, None, None]
                    + log_len[:, :, None] + log_len[:, None, :]
                    - np.log(mesh.areas)[:, None, None]
                    + np.log(np.abs(dots)))
    return log_core, signs.astype(np.int8)


def _finalize(n: int, rows, cols, vals) -> sp.csr_matrix:
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    mat.eliminate_zeros()
    return mat


def dof_log_d(mesh: Mesh, fitting: FittingData) -> np.ndarray:
    """Side-appropriate edge weight per (element, local slot), (n_K, 3).

    For continuous potentials both sides coincide; for per-element ones each
    dof carries the weight computed from its own element's potential, which
    keeps every kappa* x d product bounded by the within-element monotonicity
    of the potential minima.
    """
    e = mesh.element_edges
    side = (mesh.edge_elems[e, 0] != np.arange(mesh.n_triangles)[:, None])
    return fitting.log_d_side[e, side.astype(np.int64)]


def _assemble_operator(mesh: Mesh, dofmap: DofMap, fitting: FittingData,
                       fused: bool) -> sp.csr_matrix:
    """Shared assembly of the plain (A) and fitted (B) operators.

    With fused=True every contribution is multiplied by the trial dof's edge
    weight inside the log before the single exponentiation, which is the
    overflow-safe realization of B = A * D.
    """
    n_k = mesh.n_triangles
    log_core, signs = _core_logs(mesh, fitting)
    if fused:
        log_core = log_core + dof_log_d(mesh, fitting)[:, None, :]
    core = signs * exp_flushed(log_core)         # (n_K, 3, 3)

    dof = (3 * np.arange(n_k)[:, None] + np.arange(3)[None, :])  # (n_K, 3)
    rows_vol = np.broadcast_to(dof[:, :, None], (n_k, 3, 3))
    cols_vol = np.broadcast_to(dof[:, None, :], (n_k, 3, 3))

    e_test = mesh.element_edges                 # (n_K, 3): edge of the test slot
    interior = ~mesh.boundary_mask[e_test]      # (n_K, 3)
    fac_own = np.where(interior, -0.5, -1.0)    # average carries 1/2 on interior edges
    vals_own = fac_own[:, :, None] * core

    other_dof = (dofmap.edge_dofs[e_test, 0] + dofmap.edge_dofs[e_test, 1]
                 - dof)                          # (n_K, 3); junk where boundary
    rows_cross = np.broadcast_to(other_dof[:, :, None], (n_k, 3, 3))
    vals_cross = 0.5 * core
    keep = np.broadcast_to(interior[:, :, None], (n_k, 3, 3))

    log_pen = fitting.log_S + np.log(mesh.edge_lengths)
    if fused:
        # one penalty value per trial side (equal for continuous potentials)
        pen0 = exp_flushed(log_pen + fitting.log_d_side[:, 0])
        pen1 = exp_flushed(log_pen + fitting.log_d_side[:, 1])
    else:
        pen0 = exp_flushed(log_pen)
        pen1 = pen0
    int_e = mesh.interior_edges
    d0, d1 = dofmap.edge_dofs[int_e, 0], dofmap.edge_dofs[int_e, 1]
    bnd_e = np.flatnonzero(mesh.boundary_mask)
    b0 = dofmap.edge_dofs[bnd_e, 0]

    rows = [rows_vol.ravel(), rows_vol.ravel(), rows_cross[keep],
            d0, d0, d1, d1, b0]
    cols = [cols_vol.ravel(), cols_vol.ravel(), cols_vol[keep],
            d0, d1, d0, d1, b0]
    vals = [core.ravel(), vals_own.ravel(), vals_cross[keep],
            pen0[int_e], -pen1[int_e], -pen0[int_e], pen1[int_e], pen0[bnd_e]]
    return _finalize(dofmap.n_dofs, rows, cols, vals)


def assemble_A(mesh: Mesh, dofmap: DofMap, fitting: FittingData) -> sp.csr_matrix:
    """IIPG-0 matrix of the fitted diffusion form (volume - one-sided
    consistency + jump-mean penalty)."""
    _check_same_mesh(mesh, dofmap, fitting)
    return _assemble_operator(mesh, dofmap, fitting, fused=False)


def assemble_B(mesh: Mesh, dofmap: DofMap, fitting: FittingData) -> sp.csr_matrix:
    """Matrix of the full fitted scheme, B = A @ D assembled fused in log space."""
    _check_same_mesh(mesh, dofmap, fitting)
    return _assemble_operator(mesh, dofmap, fitting, fused=True)


def assemble_D(mesh: Mesh, dofmap: DofMap, fitting: FittingData) -> sp.csr_matrix:
    """Diagonal matrix of the fitting operator: side-appropriate edge weight
    per dof.

    Entries are materialized floats; in extreme regimes some overflow to inf
    (never nan).  recover_u divides in log space and does not use this matrix.
    """
    _check_same_mesh(mesh, dofmap, fitting)
    d = exp_flushed(fitting.log_d_side[dofmap.dof_edge, dofmap.dof_side])
    return sp.diags(d, format="csr")


@dataclass(frozen=True)
class Rhs:
    F: np.ndarray        # rhs of the rho-system
    F_tilde: np.ndarray  # rhs of the u-system; identical by construction


def assemble_rhs(mesh: Mesh, dofmap: DofMap, fitting: FittingData,
                 f: Callable, g: Callable) -> Rhs:
    """Load vector: 3-point midpoint quadrature of (f, phi) plus weak
    Dirichlet data through the boundary penalty, S_e |e| d_e g(m_e)."""
    _check_same_mesh(mesh, dofmap, fitting)
    mids = mesh.edge_midpoints[dofmap.dof_edge]
    fv = np.asarray(f(mids[:, 0], mids[:, 1]), dtype=float)
    F = (mesh.areas[dofmap.dof_elem] / 3.0) * fv

    bnd_e = np.flatnonzero(mesh.boundary_mask)
    bdof = dofmap.edge_dofs[bnd_e, 0]
    log_w = (fitting.log_S[bnd_e] + np.log(mesh.edge_lengths[bnd_e])
             + fitting.log_d_edge[bnd_e])
    gm = mesh.edge_midpoints[bnd_e]
    gv = np.asarray(g(gm[:, 0], gm[:, 1]), dtype=float)
    F[bdof] += exp_flushed(log_w) * gv
    return Rhs(F=F, F_tilde=F.copy())


def recover_u(rho: DGSolution, fitting: FittingData) -> DGSolution:
    """Invert the diagonal fitting operator in log space: u_i = rho_i / d_i."""
    log_d = fitting.log_d_side[rho.dofmap.dof_edge, rho.dofmap.dof_side]
    if not np.all(np.isfinite(log_d)):
        raise SingularOperatorError("fitting operator has zero diagonal entries")
    with np.errstate(divide="ignore"):
        log_u = np.log(np.abs(rho.values)) - log_d
    n_over = int(np.count_nonzero(log_u > LOG_MAX))
    u = np.sign(rho.values) * exp_flushed(log_u)
    return DGSolution(values=u, mesh=rho.mesh, dofmap=rho.dofmap,
                      n_overflow=n_over)


@dataclass(frozen=True)
class ErrorNorms:
    l2: float
    broken_h1: float
    midpoint_max: float


def _gradients(u: DGSolution) -> np.ndarray:
    """Constant gradient of the P1 solution per element, (n_K, 2)."""
    mesh = u.mesh
    e = mesh.element_edges
    coeff = u.values.reshape(-1, 3)
    scale = (mesh.edge_lengths[e] * mesh.element_edge_signs
             / mesh.areas[:, None])
    return np.einsum("kl,kl,kld->kd", coeff, scale, mesh.edge_normals[e])


def error_norms(u: DGSolution, exact: Callable,
                exact_grad: Optional[Callable] = None,
                fd_step: float = 1e-6) -> ErrorNorms:
    """L2 and broken-H1 errors by midpoint quadrature, plus max midpoint error.

    The gradient of the exact solution is taken analytically when provided,
    else by central differences with the given step.
    """
    mesh = u.mesh
    mids = mesh.edge_midpoints[u.dofmap.dof_edge]
    ex = np.asarray(exact(mids[:, 0], mids[:, 1]), dtype=float)
    diff = u.values - ex
    w = mesh.areas[u.dofmap.dof_elem] / 3.0
    l2 = math.sqrt(float(np.sum(w * diff ** 2)))
    midpoint_max = float(np.max(np.abs(diff))) if diff.size else 0.0

    if exact_grad is None:
        def exact_grad(x, y, h=fd_step):
            ux = (exact(x + h, y) - exact(x - h, y)) / (2 * h)
            uy = (exact(x, y + h) - exact(x, y - h)) / (2 * h)
            return ux, uy
    gu = _gradients(u)                       # (n_K, 2)
    gx, gy = exact_grad(mids[:, 0], mids[:, 1])
    dgx = gu[u.dofmap.dof_elem, 0] - np.asarray(gx, dtype=float)
    dgy = gu[u.dofmap.dof_elem, 1] - np.asarray(gy, dtype=float)
    h1 = math.sqrt(float(np.sum(w * (dgx ** 2 + dgy ** 2))))
    return ErrorNorms(l2=l2, broken_h1=h1, midpoint_max=midpoint_max)
