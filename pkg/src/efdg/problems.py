"""Benchmark problem definitions.

A ProblemSpec bundles the diffusion constant, the potential whose gradient
is the advection field, source and boundary data, and (when known) the
exact solution.  The potential is either a globally continuous callable or
a per-element linear, given by its gradient as a function of the element
barycenter; both reduce to vertex values per element via
element_psi_values().
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: tuple[float, float, float, float]  # x0, x1, y0, y1
    epsilon: float
    alpha: float = 2.0
    f: Callable = None                 # source, vectorized over (x, y)
    g: Callable = None                 # Dirichlet data, vectorized
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None   # (x, y) -> (ux, uy)
    psi: Optional[Callable] = None           # continuous potential
    psi_cell_grad: Optional[Callable] = None  # (xK, yK) -> (c1, c2), per-element
    psi_vertex_values: Optional[np.ndarray] = None  # tabulated, continuous
    psi_continuous: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def element_psi_values(problem: ProblemSpec, mesh: Mesh) -> np.ndarray:
    """Per-element potential values at the element's three vertices, (n_K, 3).

    For continuous potentials the values of shared vertices agree by
    construction; tabulated values are checked for length.
    """
    tri = mesh.triangles
    if problem.psi_vertex_values is not None:
        vals = np.asarray(problem.psi_vertex_values, dtype=float)
        if vals.shape != (mesh.n_vertices,):
            raise ValueError(
                f"psi table has {vals.shape} entries, mesh has {mesh.n_vertices} vertices")
        return vals[tri]
    if problem.psi is not None:
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        return np.asarray(problem.psi(x, y), dtype=float)[tri]
    if problem.psi_cell_grad is not None:
        bary = mesh.vertices[tri].mean(axis=1)
        c1, c2 = problem.psi_cell_grad(bary[:, 0], bary[:, 1])
        px = mesh.vertices[tri, 0]
        py = mesh.vertices[tri, 1]
        return np.asarray(c1)[:, None] * px + np.asarray(c2)[:, None] * py
    raise ValueError(f"problem {problem.name!r} defines no potential")


def exact_u_test1(x, y, epsilon: float):
    """Boundary-layer product solution on (-1,1)^2.

    Each factor is  t + (1 + E2 - 2*e^((t-1)/eps)) / (1 - E2)  with
    E2 = e^(-2/eps); all exponents are nonpositive on the closed square,
    so the evaluation never overflows, down to arbitrarily small eps.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    e2 = math.exp(-2.0 / epsilon)
    denom = 1.0 - e2
    fx = x + (1.0 + e2 - 2.0 * np.exp(np.minimum(x - 1.0, 0.0) / epsilon)) / denom
    fy = y + (1.0 + e2 - 2.0 * np.exp(np.minimum(y - 1.0, 0.0) / epsilon)) / denom
    return fx * fy


def _test1_factors(t, epsilon):
    """(U, U', U'') of the 1D factor, overflow-safe shifted exponentials."""
    t = np.asarray(t, dtype=float)
    e2 = math.exp(-2.0 / epsilon)
    denom = 1.0 - e2
    E = np.exp(np.minimum(t - 1.0, 0.0) / epsilon)
    U = t + (1.0 + e2 - 2.0 * E) / denom
    Up = 1.0 - (2.0 / epsilon) * E / denom
    Upp = -(2.0 / epsilon ** 2) * E / denom
    return U, Up, Upp


def test1(epsilon: float, alpha: float = 2.0) -> ProblemSpec:
    """Boundary layer benchmark: beta = (1,1), psi = x + y on (-1,1)^2.

    The source is derived analytically from the product form of the exact
    solution: f = -eps*(U''V + U V'') + U'V + U V'  (div beta = 0).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    def f(x, y):
        U, Up, Upp = _test1_factors(x, epsilon)
        V, Vp, Vpp = _test1_factors(y, epsilon)
        return -epsilon * (Upp * V + U * Vpp) + Up * V + U * Vp

    def g(x, y):
        return exact_u_test1(x, y, epsilon)

    def exact(x, y):
        return exact_u_test1(x, y, epsilon)

    def exact_grad(x, y):
        U, Up, _ = _test1_factors(x, epsilon)
        V, Vp, _ = _test1_factors(y, epsilon)
        return Up * V, U * Vp

    return ProblemSpec(
        name="test1",
        domain=(-1.0, 1.0, -1.0, 1.0),
        epsilon=epsilon,
        alpha=alpha,
        f=f,
        g=g,
        exact=exact,
        exact_grad=exact_grad,
        psi=lambda x, y: x + y,
        psi_continuous=True,
    )


def test2(epsilon: float, alpha: float = 2.0, psi_variant: str = "paper") -> ProblemSpec:
    """Rotating flow benchmark on (-1,1) x (0,1), f = 0.

    beta = (2y(1-x^2), -2x(1-y^2)) has nonzero curl, so there is no global
    potential; per element the advection is approximated by the gradient of
    psi|_K(x,y) = 2 yK (1-xK^2) x - 2 xK (1-2 yK^2) y at the barycenter
    (xK, yK).  The (1-2 yK^2) coefficient is kept as printed; the
    "consistent" variant replaces it with (1-yK^2) to match beta exactly.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if psi_variant not in ("paper", "consistent"):
        raise ValueError(f"unknown psi variant {psi_variant!r}")

    def psi_cell_grad(xk, yk):
        c1 = 2.0 * yk * (1.0 - xk ** 2)
        if psi_variant == "paper":
            c2 = -2.0 * xk * (1.0 - 2.0 * yk ** 2)
        else:
            c2 = -2.0 * xk * (1.0 - yk ** 2)
        return c1, c2

    def f(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inflow = (x <= 0.0) & (y == 0.0)
        return np.where(inflow, 1.0 + np.tanh(10.0 * (2.0 * x + 1.0)), 0.0)

    return ProblemSpec(
        name="test2",
        domain=(-1.0, 1.0, 0.0, 1.0),
        epsilon=epsilon,
        alpha=alpha,
        f=f,
        g=g,
        psi_cell_grad=psi_cell_grad,
        psi_continuous=False,
    )


def custom(domain, epsilon: float, alpha: float = 2.0,
           psi="zero", f=0.0, g=0.0, name: str = "custom") -> ProblemSpec:
    """Problem from tabulated or trivial data.

    psi is either the string "zero", a per-vertex value array (continuous,
    aligned with the mesh the problem will be used on), or a callable.
    f and g may be constants or callables.
    """
    f_call = f if callable(f) else (lambda x, y, c=float(f): np.full_like(np.asarray(x, dtype=float), c))
    g_call = g if callable(g) else (lambda x, y, c=float(g): np.full_like(np.asarray(x, dtype=float), c))
    kwargs = {}
    if isinstance(psi, str):
        if psi != "zero":
            raise ValueError(f"unknown builtin potential {psi!r}")
        kwargs["psi"] = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
    elif callable(psi):
        kwargs["psi"] = psi
    else:
        kwargs["psi_vertex_values"] = np.asarray(psi, dtype=float)
    return ProblemSpec(
        name=name,
        domain=tuple(domain),
        epsilon=epsilon,
        alpha=alpha,
        f=f_call,
        g=g_call,
        psi_continuous=True,
        **kwargs,
    )


def from_config(cfg: dict) -> ProblemSpec:
    """Build a problem from a JSON-style dict (see README for the schema)."""
    name = cfg.get("name", "custom")
    if name == "test1":
        return test1(cfg["epsilon"], alpha=cfg.get("alpha", 2.0))
    if name == "test2":
        return test2(cfg["epsilon"], alpha=cfg.get("alpha", 2.0),
                     psi_variant=cfg.get("psi_variant", "paper"))
    return custom(
        domain=cfg.get("domain", (-1.0, 1.0, -1.0, 1.0)),
        epsilon=cfg["epsilon"],
        alpha=cfg.get("alpha", 2.0),
        psi=cfg.get("psi", "zero"),
        f=cfg.get("f", 0.0),
        g=cfg.get("g", 0.0),
    )
