"""Change of basis splitting the DG space into a CR part and its complement.

Per interior edge the pair of one-sided midpoint dofs (w+, w-) is traded
for a mean coefficient (the Crouzeix-Raviart hat function chi = phi+ + phi-)
and a half-difference coefficient (zeta = phi+ - phi-); each boundary dof
is a pure zeta.  In this basis the test rows of zeta functions only see the
penalty term (the volume and consistency contributions cancel exactly, and
the assembly keeps that cancellation bitwise), so the transformed operators
are block lower triangular with a diagonal zeta-zeta block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .assembly import DofMap
from .errors import NotPositiveDefiniteError, StructureViolationError
from .fitting import FittingData
from .logscale import LOG_MAX
from .mesh import Mesh

_LOG4 = math.log(4.0)


@dataclass(frozen=True)
class SplitTransform:
    """Sparse change of basis P with dg = P @ [z; cr]."""

    mesh: Mesh
    dofmap: DofMap
    P: sp.csr_matrix            # (N, N), entries +-1
    Pinv: sp.csr_matrix         # (N, N), coefficients (mean, half-difference)
    n_z: int
    n_cr: int
    edge_of_cr: np.ndarray      # (n_cr,) interior edge id per cr index
    cr_of_edge: np.ndarray      # (n_e,) cr column (offset by n_z), -1 on boundary

    @property
    def n_dofs(self) -> int:
        return self.n_z + self.n_cr

    def dg_to_split(self, w: np.ndarray) -> np.ndarray:
        return self.Pinv @ w

    def split_to_dg(self, s: np.ndarray) -> np.ndarray:
        return self.P @ s

    def rhs_to_split(self, F: np.ndarray) -> np.ndarray:
        """Load vectors transform with P^T, not P^-1."""
        return self.P.T @ F


def build_split_transform(mesh: Mesh, dofmap: DofMap) -> SplitTransform:
    n_e = mesh.n_edges
    n_b = mesh.n_boundary_edges
    n_z, n_cr = n_e, n_e - n_b
    N = dofmap.n_dofs
    assert N == n_z + n_cr

    interior = mesh.interior_edges
    cr_of_edge = np.full(n_e, -1, dtype=np.int64)
    cr_of_edge[interior] = n_z + np.arange(n_cr)

    d0 = dofmap.edge_dofs[:, 0]
    d1 = dofmap.edge_dofs[:, 1]

    # columns of P: zeta_e = phi+ - phi- (interior) or phi (boundary);
    # chi_e = phi+ + phi-
    rows = [d0[interior], d1[interior],
            d0[mesh.boundary_mask],
            d0[interior], d1[interior]]
    cols = [interior, interior,
            np.flatnonzero(mesh.boundary_mask),
            cr_of_edge[interior], cr_of_edge[interior]]
    vals = [np.ones(n_cr), -np.ones(n_cr),
            np.ones(n_b),
            np.ones(n_cr), np.ones(n_cr)]
    P = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    P.sort_indices()

    # inverse: z_e = (w+ - w-)/2, cr_e = (w+ + w-)/2, boundary z = w
    rows = [interior, interior,
            np.flatnonzero(mesh.boundary_mask),
            cr_of_edge[interior], cr_of_edge[interior]]
    cols = [d0[interior], d1[interior],
            d0[mesh.boundary_mask],
            d0[interior], d1[interior]]
    vals = [0.5 * np.ones(n_cr), -0.5 * np.ones(n_cr),
            np.ones(n_b),
            0.5 * np.ones(n_cr), 0.5 * np.ones(n_cr)]
    Pinv = sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N)).tocsr()
    Pinv.sort_indices()

    return SplitTransform(mesh=mesh, dofmap=dofmap, P=P, Pinv=Pinv,
                          n_z=n_z, n_cr=n_cr,
                          edge_of_cr=interior.copy(), cr_of_edge=cr_of_edge)


@dataclass
class BlockSystem:
    """2x2 block view [[zz, top], [vz, vv]] of a transformed operator.

    For continuous potentials the top block vanishes identically; for
    per-element potentials it carries small penalty-coupling entries whose
    magnitude is recorded, and the two-step solver iterates over it.
    """

    transform: SplitTransform
    zz_diag: np.ndarray          # (n_z,) float diagonal of the zz block
    B_z_cr: sp.csr_matrix        # (n_z, n_cr) top-right block
    B_vz: sp.csr_matrix          # (n_cr, n_z)
    B_vv: sp.csr_matrix          # (n_cr, n_cr)
    rhs_z: Optional[np.ndarray]
    rhs_cr: Optional[np.ndarray]
    top_right_max: float         # largest |entry| in the (z-row, cr-col) block
    matrix_max: float
    zz_offdiag_nnz: int
    zz_log_diag: Optional[np.ndarray] = None  # overflow-safe diagonal, if supplied
    full_matrix: Optional[sp.csr_matrix] = None
    full_rhs: Optional[np.ndarray] = None


def split_matrix(M: sp.csr_matrix, T: SplitTransform,
                 rhs: Optional[np.ndarray] = None, *,
                 continuous: bool = True,
                 structure_tol: float = 1e-13,
                 zz_log_diag: Optional[np.ndarray] = None) -> BlockSystem:
    """Congruence transform P^T M P, sliced into blocks, structure verified.

    For continuous potentials a top-right block above structure_tol times
    max|M|, or any stored off-diagonal entry in the zz block, raises
    StructureViolationError; with continuous=False (per-element potentials)
    the magnitudes are recorded in the returned system instead.
    """
    S = (T.P.T @ M @ T.P).tocsr()
    S.eliminate_zeros()
    n_z = T.n_z
    Szz = S[:n_z, :n_z].tocsr()
    Stop = S[:n_z, n_z:].tocsr()
    Svz = S[n_z:, :n_z].tocsr()
    Svv = S[n_z:, n_z:].tocsr()

    matrix_max = float(np.abs(M.data).max()) if M.nnz else 0.0
    top_max = float(np.abs(Stop.data).max()) if Stop.nnz else 0.0
    offdiag = Szz - sp.diags(Szz.diagonal())
    offdiag.eliminate_zeros()
    if continuous and top_max > structure_tol * matrix_max:
        raise StructureViolationError(
            f"top-right block magnitude {top_max:.3e} exceeds "
            f"{structure_tol:.1e} * max|M| = {structure_tol * matrix_max:.3e}")
    if offdiag.nnz:
        # penalty-only test rows make this hold for any potential
        raise StructureViolationError(
            f"zz block has {offdiag.nnz} stored off-diagonal entries")

    rhs_split = T.rhs_to_split(rhs) if rhs is not None else None
    return BlockSystem(
        transform=T,
        zz_diag=Szz.diagonal().copy(),
        B_z_cr=Stop,
        B_vz=Svz,
        B_vv=Svv,
        rhs_z=None if rhs_split is None else rhs_split[:n_z],
        rhs_cr=None if rhs_split is None else rhs_split[n_z:],
        top_right_max=top_max,
        matrix_max=matrix_max,
        zz_offdiag_nnz=int(offdiag.nnz),
        zz_log_diag=zz_log_diag,
        full_matrix=M,
        full_rhs=rhs,
    )


def zz_log_diag(mesh: Mesh, dofmap: DofMap, fitting: FittingData,
                fused: bool = True) -> np.ndarray:
    """Closed-form log of the zz diagonal: 4 S_e |e| (d_e) interior,
    S_e |e| (d_e) boundary.

    The float diagonal of the split matrix underflows once psi/eps is large;
    this log form is what the z-solve and the positivity checks use.
    """
    log = fitting.log_S + np.log(mesh.edge_lengths)
    if fused:
        log = log + fitting.log_d_edge
    return log + np.where(mesh.boundary_mask, 0.0, _LOG4)


def solve_zz(B_zz, rhs_z: np.ndarray) -> np.ndarray:
    """Solve the diagonal z block.

    B_zz may be a float vector (checked strictly positive) or a log-space
    vector of a positive diagonal; in the latter form the division is done
    in log space, so near-underflow diagonals still produce finite results
    whenever the true quotient is representable.
    """
    rhs_z = np.asarray(rhs_z, dtype=float)
    if isinstance(B_zz, sp.spmatrix):
        B_zz = B_zz.diagonal()
    B_zz = np.asarray(B_zz, dtype=float)
    if B_zz.shape != rhs_z.shape:
        raise ValueError("diagonal and rhs sizes differ")
    if np.any(B_zz <= 0) or not np.all(np.isfinite(B_zz)):
        raise NotPositiveDefiniteError("zz diagonal is not strictly positive")
    return rhs_z / B_zz


def solve_zz_log(log_diag: np.ndarray, rhs_z: np.ndarray) -> np.ndarray:
    """Entrywise rhs / exp(log_diag) computed as exp(log|rhs| - log_diag)."""
    log_diag = np.asarray(log_diag, dtype=float)
    rhs_z = np.asarray(rhs_z, dtype=float)
    if not np.all(np.isfinite(log_diag)):
        raise NotPositiveDefiniteError("zz log diagonal is not finite")
    with np.errstate(divide="ignore"):
        log_q = np.log(np.abs(rhs_z)) - log_diag
    with np.errstate(over="ignore", under="ignore"):
        return np.sign(rhs_z) * np.exp(log_q)


def export_blocks(system: BlockSystem, out_dir, prefix: str = "block") -> list[str]:
    """Matrix Market files for the blocks plus a sidecar dof permutation."""
    from .io import mm_write

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T = system.transform
    written = []

    def _w(name, mat):
        path = out / f"{prefix}_{name}.mtx"
        mm_write(path, mat, comment=f"{name} block of the split operator")
        written.append(str(path))

    _w("zz", sp.diags(system.zz_diag))
    _w("vz", system.B_vz)
    _w("vv", system.B_vv)

    side = out / f"{prefix}_permutation.txt"
    lines = ["# split_index kind edge dof_plus dof_minus"]
    for e in range(T.mesh.n_edges):
        d0, d1 = T.dofmap.edge_dofs[e]
        lines.append(f"{e} z {e} {d0} {d1}")
    for c, e in enumerate(T.edge_of_cr):
        d0, d1 = T.dofmap.edge_dofs[e]
        lines.append(f"{T.n_z + c} cr {e} {d0} {d1}")
    side.write_text("\n".join(lines) + "\n")
    written.append(str(side))
    return written
