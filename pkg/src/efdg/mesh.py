"""Conforming triangular meshes with full edge topology.

A Mesh is immutable after construction (all arrays are frozen) and carries,
besides vertices and triangles, the deduplicated edge table: midpoints,
lengths, unit normals with a fixed global orientation, boundary flags and
the two adjacent elements per edge.  The normal of an edge points out of
its first adjacent element, which is always the one with the lower index,
so every derived quantity is deterministic across runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicateTriangleError, NonManifoldError

_EULER_MSG = "edge counting identity 3*n_K == 2*n_e - n_b violated"

# local edge l is opposite local vertex l: edge 0 = (v1, v2), etc.
_LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray        # (n_v, 2) float
    triangles: np.ndarray       # (n_K, 3) int, counterclockwise
    edges: np.ndarray           # (n_e, 2) int, endpoint indices
    edge_elems: np.ndarray      # (n_e, 2) int, (K+, K-) with K- == -1 on boundary
    element_edges: np.ndarray   # (n_K, 3) int, edge id opposite local vertex
    element_edge_signs: np.ndarray  # (n_K, 3) int8, +1 if global normal is outward
    areas: np.ndarray           # (n_K,) float
    edge_lengths: np.ndarray    # (n_e,) float
    edge_midpoints: np.ndarray  # (n_e, 2) float
    edge_normals: np.ndarray    # (n_e, 2) float, unit, out of K+

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.edge_elems[:, 1] < 0

    @property
    def n_boundary_edges(self) -> int:
        return int(np.count_nonzero(self.boundary_mask))

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def __repr__(self):
        return (f"Mesh(n_K={self.n_triangles}, n_e={self.n_edges}, "
                f"n_b={self.n_boundary_edges})")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * np.cross(p1 - p0, p2 - p0)


def build_topology(vertices, triangles) -> Mesh:
    """Build the full edge topology from raw vertex/triangle arrays.

    Input triangles may have arbitrary orientation; they are reoriented
    counterclockwise.  Edge ids are assigned in first-encounter order over
    the element loop, which makes K+ the lower adjacent element index.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ValueError("vertices must be an (n, 2) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise ValueError("triangles must be an (n, 3) array")
    n_v = vertices.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n_v):
        raise ValueError("triangle vertex index out of range")
    for t, tri in enumerate(triangles):
        if len(set(tri.tolist())) != 3:
            raise ValueError(f"triangle {t} has repeated vertices")

    seen = set()
    for t, tri in enumerate(triangles):
        key = frozenset(tri.tolist())
        if key in seen:
            raise DuplicateTriangleError(f"triangle {t} duplicates an earlier one")
        seen.add(key)

    triangles = triangles.copy()
    sa = _signed_areas(vertices, triangles)
    if np.any(sa == 0.0):
        raise ValueError("degenerate (zero-area) triangle")
    flip = sa < 0
    triangles[flip, 1], triangles[flip, 2] = triangles[flip, 2], triangles[flip, 1]
    areas = _signed_areas(vertices, triangles)

    edge_ids: dict[tuple[int, int], int] = {}
    edges: list[tuple[int, int]] = []
    edge_elems: list[list[int]] = []
    element_edges = np.empty((len(triangles), 3), dtype=np.int64)
    for t, tri in enumerate(triangles):
        for l, (a, b) in enumerate(_LOCAL_EDGES):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            e = edge_ids.get(key)
            if e is None:
                e = len(edges)
                edge_ids[key] = e
                edges.append(key)
                edge_elems.append([t, -1])
            else:
                if edge_elems[e][1] != -1:
                    raise NonManifoldError(
                        f"edge {key} shared by more than two triangles")
                edge_elems[e][1] = t
            element_edges[t, l] = e

    edges_arr = np.asarray(edges, dtype=np.int64)
    edge_elems_arr = np.asarray(edge_elems, dtype=np.int64)

    pa = vertices[edges_arr[:, 0]]
    pb = vertices[edges_arr[:, 1]]
    edge_mid = 0.5 * (pa + pb)
    tangent = pb - pa
    edge_len = np.hypot(tangent[:, 0], tangent[:, 1])
    if np.any(edge_len == 0.0):
        raise ValueError("zero-length edge")
    normals = np.column_stack((tangent[:, 1], -tangent[:, 0])) / edge_len[:, None]
    # orient out of K+ (the first adjacent element)
    centroids = vertices[triangles].mean(axis=1)
    kplus = edge_elems_arr[:, 0]
    flip = np.einsum("ij,ij->i", normals, edge_mid - centroids[kplus]) < 0
    normals[flip] *= -1.0

    signs = np.empty((len(triangles), 3), dtype=np.int8)
    for l in range(3):
        e = element_edges[:, l]
        dots = np.einsum("ij,ij->i", normals[e],
                         edge_mid[e] - centroids)
        signs[:, l] = np.where(dots > 0, 1, -1)

    mesh = Mesh(
        vertices=_freeze(vertices),
        triangles=_freeze(triangles),
        edges=_freeze(edges_arr),
        edge_elems=_freeze(edge_elems_arr),
        element_edges=_freeze(element_edges),
        element_edge_signs=_freeze(signs),
        areas=_freeze(areas),
        edge_lengths=_freeze(edge_len),
        edge_midpoints=_freeze(edge_mid),
        edge_normals=_freeze(normals),
    )
    _validate(mesh)
    return mesh


def _validate(mesh: Mesh) -> None:
    n_k, n_e, n_b = mesh.n_triangles, mesh.n_edges, mesh.n_boundary_edges
    if 3 * n_k != 2 * n_e - n_b:
        raise AssertionError(_EULER_MSG)
    if np.any(mesh.areas <= 0):
        raise AssertionError("nonpositive triangle area")
    # stored sign must match the geometric outward direction on both sides
    for l in range(3):
        e = mesh.element_edges[:, l]
        k_plus = mesh.edge_elems[e, 0]
        own = k_plus == np.arange(n_k)
        expect = np.where(own, 1, -1)
        if np.any(mesh.element_edge_signs[:, l] != expect):
            raise AssertionError("edge sign inconsistent with K+ convention")


def generate_rect_mesh(bounds, nx: int, ny: int, diagonal: str = "ne") -> Mesh:
    """Structured triangulation of the rectangle [x0,x1] x [y0,y1].

    Each of the nx*ny cells is split along its NE or NW diagonal;
    "alternating" flips the diagonal in a checkerboard pattern, which
    yields a weakly acute mesh of right triangles.
    """
    x0, x1, y0, y1 = bounds
    if not (x0 < x1 and y0 < y1):
        raise ValueError(f"degenerate bounds {bounds}")
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    diagonal = diagonal.lower()
    if diagonal not in ("ne", "nw", "alternating"):
        raise ValueError(f"unknown diagonal pattern {diagonal!r}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack((X.ravel(), Y.ravel()))

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            ne = diagonal == "ne" or (diagonal == "alternating" and (i + j) % 2 == 0)
            if ne:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
    return build_topology(vertices, np.asarray(tris))


def refine_red(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children via edge midpoints."""
    n_v = mesh.n_vertices
    new_vertices = np.vstack((mesh.vertices, mesh.edge_midpoints))
    t = mesh.triangles
    m = n_v + mesh.element_edges  # midpoint vertex id per (K, local edge)
    children = np.empty((4 * mesh.n_triangles, 3), dtype=np.int64)
    children[0::4] = np.column_stack((t[:, 0], m[:, 2], m[:, 1]))
    children[1::4] = np.column_stack((t[:, 1], m[:, 0], m[:, 2]))
    children[2::4] = np.column_stack((t[:, 2], m[:, 1], m[:, 0]))
    children[3::4] = m
    return build_topology(new_vertices, children)


@dataclass(frozen=True)
class AcuteReport:
    is_acute: bool
    weakly_acute: bool
    max_angle: float


def check_acute(mesh: Mesh, tol: float = 1e-12) -> AcuteReport:
    """Largest interior angle and (weak) acuteness of the triangulation."""
    p = mesh.vertices[mesh.triangles]  # (n_K, 3, 2)
    max_angle = 0.0
    for l in range(3):
        a = p[:, (l + 1) % 3] - p[:, l]
        b = p[:, (l + 2) % 3] - p[:, l]
        cos = np.einsum("ij,ij->i", a, b) / (
            np.hypot(a[:, 0], a[:, 1]) * np.hypot(b[:, 0], b[:, 1]))
        ang = np.arccos(np.clip(cos, -1.0, 1.0))
        max_angle = max(max_angle, float(ang.max()))
    half_pi = 0.5 * math.pi
    return AcuteReport(
        is_acute=max_angle < half_pi - tol,
        weakly_acute=max_angle <= half_pi + tol,
        max_angle=max_angle,
    )


def write_mesh_text(mesh: Mesh, path) -> None:
    """Plain text format: 'nv nt', nv lines 'x y', nt lines 'i j k'."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    for x, y in mesh.vertices:
        lines.append(f"{x!r} {y!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh_text(path) -> Mesh:
    tokens = Path(path).read_text().split()
    if len(tokens) < 2:
        raise ValueError(f"mesh file {path} is empty or truncated")
    it = iter(tokens)
    nv, nt = int(next(it)), int(next(it))
    try:
        vertices = np.array([[float(next(it)), float(next(it))] for _ in range(nv)])
        triangles = np.array([[int(next(it)), int(next(it)), int(next(it))]
                              for _ in range(nt)])
    except StopIteration:
        raise ValueError(f"mesh file {path} is truncated") from None
    return build_topology(vertices, triangles)
