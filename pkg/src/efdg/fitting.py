"""Exponential-fitting quantities, computed entirely in log space.

The method rewrites advection-diffusion as pure diffusion with coefficient
eps*e^(psi/eps), then represents that wildly varying coefficient through
elementwise harmonic averages kappa*_K = eps / P0_K(e^(-psi/eps)) and edge
weights d_e = P0_e(e^(-psi/eps)).  The element mean of e^(-psi/eps) for a
linear psi is, by the Hermite-Genocchi formula, twice the second divided
difference of exp at the scaled vertex values; the edge mean is
e^(-min/eps) * phi1(spread/eps) with phi1(t) = (1 - e^(-t))/t.

Everything is stored as natural logs (all quantities are positive).  The
potential is normalized internally by subtracting max_K min_{vertex} psi,
the unique shift for which the float materializations of both operator
matrices stay finite and non-degenerate in the advection-dominated regime;
the discrete solution of the fitted system is invariant under this shift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .logscale import LogScaled, exp_with_flags, log_mean_exp_pair
from .mesh import Mesh
from .problems import ProblemSpec, element_psi_values

# below this spread the divided difference is evaluated by series
_SERIES_SPREAD = 2e-2
_LOG2 = math.log(2.0)


def _log_phi1(t):
    """log((1 - e^(-t)) / t) for t >= 0, elementwise, full accuracy.

    phi1(0) = 1; for large t the e^(-t) term is dropped once it is below
    resolution, leaving -log(t).
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 0) & (t <= 708.0)
    big = t > 708.0
    with np.errstate(divide="ignore"):
        out[mid] = np.log(-np.expm1(-t[mid])) - np.log(t[mid])
        out[big] = -np.log(t[big])
    return out


def _log_dd1(u, v):
    """log of (e^u - e^v)/(u - v), the first divided difference of exp."""
    hi = np.maximum(u, v)
    return hi + _log_phi1(np.abs(u - v))


def _log_g_rows(y: np.ndarray) -> np.ndarray:
    """log(2 * DD2(exp; y1, y2, y3)) per row, rows normalized to max(y) = 0.

    Rows with spread below _SERIES_SPREAD use a complete-homogeneous series
    around the row mean (terms through degree 6, truncation ~1e-16); wider
    rows use the divided-difference recurrence anchored at the middle value,
    so the one genuine subtraction is between means of exp over the two
    adjacent subintervals, whose ratio is bounded away from 1.
    """
    y = np.asarray(y, dtype=float)
    ys = np.sort(y, axis=1)  # a <= b <= c per row
    a, b, c = ys[:, 0], ys[:, 1], ys[:, 2]
    spread = c - a
    out = np.empty(y.shape[0])

    near = spread < _SERIES_SPREAD
    if np.any(near):
        mu = y[near].mean(axis=1)
        d = y[near] - mu[:, None]
        p = [np.sum(d ** k, axis=1) for k in range(1, 7)]
        h = [np.ones_like(mu)]
        for n in range(1, 7):
            acc = np.zeros_like(mu)
            for k in range(1, n + 1):
                acc += p[k - 1] * h[n - k]
            h.append(acc / n)
        fact = [math.factorial(n + 2) for n in range(7)]
        s = sum(h[n] / fact[n] for n in range(7))
        out[near] = mu + np.log(2.0 * s)

    far = ~near
    if np.any(far):
        af, bf, cf = a[far], b[far], c[far]
        l_hi = _log_dd1(bf, cf)   # mean of exp over [b, c]
        l_lo = _log_dd1(af, bf)   # mean of exp over [a, b], strictly smaller
        out[far] = _LOG2 + l_hi + np.log1p(-np.exp(l_lo - l_hi)) - np.log(cf - af)
    return out


def edge_exp_mean(psi_a: float, psi_b: float, eps: float) -> LogScaled:
    """Edge mean of e^(-psi/eps) for psi linear with the given endpoint values."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    lo = min(psi_a, psi_b)
    spread = abs(psi_b - psi_a)
    log_val = -lo / eps + float(_log_phi1(spread / eps))
    return LogScaled(1, log_val)


def tri_exp_mean(psi_1: float, psi_2: float, psi_3: float, eps: float) -> LogScaled:
    """Element mean of e^(-psi/eps) for psi linear with the given vertex values.

    Equals twice the second divided difference of exp at -psi_i/eps.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array([[-psi_1, -psi_2, -psi_3]], dtype=float) / eps
    m = x.max()
    log_val = m + float(_log_g_rows(x - m)[0])
    return LogScaled(1, log_val)


@dataclass(frozen=True)
class FittingData:
    """All fitted quantities of one (mesh, problem) pair, as logs.

    Potential minima are stored for the shifted potential psi - psi_shift;
    add psi_shift back to recover the problem's values.  log_d_side holds
    the one-sided edge weights (columns K+, K-); the fitting operator is
    diagonal with the side-appropriate weight per dof.  log_d_edge is their
    arithmetic mean (the common value for continuous potentials); it is the
    weight that appears in the z-block diagonal and in the boundary data.

    For per-element potentials the penalty coefficient S_e uses the harmonic
    average of the two kappa* instead of Eq-style arithmetic one: the
    harmonic average is dominated by either side, so S_e times a one-sided
    weight stays bounded even when the two elements' scalings differ by
    many orders of magnitude.  A pragmatic recipe; the method's theory for
    discontinuous potentials is deferred.
    """

    mesh: Mesh
    epsilon: float
    psi_shift: float
    continuous: bool
    psi_min_K: np.ndarray       # (n_K,)
    log_kappa_star: np.ndarray  # (n_K,)
    psi_min_e: np.ndarray       # (n_e,)
    log_d_side: np.ndarray      # (n_e, 2)
    log_d_edge: np.ndarray      # (n_e,)
    log_S: np.ndarray           # (n_e,)
    alpha_e: np.ndarray         # (n_e,)

    @property
    def h_e(self) -> np.ndarray:
        return self.mesh.edge_lengths

    def kappa_star_floats(self):
        return exp_with_flags(self.log_kappa_star)

    def d_edge_floats(self):
        return exp_with_flags(self.log_d_edge)

    def assert_finite(self) -> None:
        for name in ("psi_min_K", "log_kappa_star", "psi_min_e",
                     "log_d_side", "log_d_edge", "log_S"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)):
                raise AssertionError(f"non-finite values in FittingData.{name}")


def build_fitting_data(mesh: Mesh, problem: ProblemSpec) -> FittingData:
    """Compute kappa*_K, d_e and S_e for a problem on a mesh.

    S_e = alpha_e / h_e * avg(kappa*) with the arithmetic average of the two
    adjacent elements on interior edges (single value on boundary edges),
    formed with logaddexp so the huge dynamic range never materializes.
    """
    eps = problem.epsilon
    psi_elem = element_psi_values(problem, mesh)  # (n_K, 3), raw values
    shift = float(psi_elem.min(axis=1).max())
    psi_elem = psi_elem - shift

    x = -psi_elem / eps
    m = x.max(axis=1)
    log_p0_K = m + _log_g_rows(x - m[:, None])
    log_kappa = math.log(eps) - log_p0_K
    psi_min_K = psi_elem.min(axis=1)

    n_e = mesh.n_edges
    log_d_side = np.empty((n_e, 2))
    psi_end_side = np.full((n_e, 2, 2), np.nan)  # per side, the 2 endpoint values
    elem_ids = np.arange(mesh.n_triangles)
    for l in range(3):
        e = mesh.element_edges[:, l]
        side = np.where(mesh.edge_elems[e, 0] == elem_ids, 0, 1)
        pa = psi_elem[:, (l + 1) % 3]
        pb = psi_elem[:, (l + 2) % 3]
        psi_end_side[e, side, 0] = pa
        psi_end_side[e, side, 1] = pb
        lo = np.minimum(pa, pb)
        spread = np.abs(pb - pa)
        log_d_side[e, side] = -lo / eps + _log_phi1(spread / eps)
    boundary = mesh.boundary_mask
    log_d_side[boundary, 1] = log_d_side[boundary, 0]
    psi_end_side[boundary, 1] = psi_end_side[boundary, 0]

    if problem.psi_continuous:
        # both sides were computed from the same vertex values
        if not np.array_equal(log_d_side[:, 0], log_d_side[:, 1]):
            raise AssertionError("one-sided edge weights differ for continuous psi")
        log_d_edge = log_d_side[:, 0].copy()
    else:
        log_d_edge = log_mean_exp_pair(log_d_side[:, 0], log_d_side[:, 1])
    psi_min_e = psi_end_side.min(axis=(1, 2))

    lk0 = log_kappa[mesh.edge_elems[:, 0]]
    lk1 = log_kappa[np.where(boundary, 0, mesh.edge_elems[:, 1])]
    if problem.psi_continuous:
        log_avg_kappa = log_mean_exp_pair(lk0, lk1)
    else:
        # harmonic: log(2 k0 k1 / (k0 + k1))
        log_avg_kappa = math.log(2.0) + lk0 + lk1 - np.logaddexp(lk0, lk1)
    log_avg_kappa = np.where(boundary, lk0, log_avg_kappa)
    alpha_e = np.full(n_e, float(problem.alpha))
    log_S = np.log(alpha_e) - np.log(mesh.edge_lengths) + log_avg_kappa

    data = FittingData(
        mesh=mesh,
        epsilon=eps,
        psi_shift=shift,
        continuous=problem.psi_continuous,
        psi_min_K=psi_min_K,
        log_kappa_star=log_kappa,
        psi_min_e=psi_min_e,
        log_d_side=log_d_side,
        log_d_edge=log_d_edge,
        log_S=log_S,
        alpha_e=alpha_e,
    )
    data.assert_finite()
    return data
