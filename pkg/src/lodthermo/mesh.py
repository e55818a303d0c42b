"""Uniform triangulations of the unit square and coarse/fine hierarchies."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

SIDES = ("bottom", "right", "top", "left")


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured mesh of [0,1]^2 with N = 2**level squares per side.

    Every square is cut along its (+1,+1) diagonal. Vertex ``j*(N+1)+i`` sits at
    ``(i/N, j/N)``; triangles ``2*(j*N+i)`` (lower) and ``2*(j*N+i)+1`` (upper)
    belong to square ``(i, j)``.
    """

    level: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple[str, ...]

    @property
    def n(self) -> int:
        return 2**self.level

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def h(self) -> float:
        """Longest edge length, sqrt(2)/N."""
        return float(np.sqrt(2.0) / self.n)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three P1 shape functions, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        # rows: x1-x0, x2-x0; solve J^T g = e for reference gradients
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        inv = np.linalg.inv(jac)
        return np.einsum("tij,aj->tai", inv, ref)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def shape_regularity(self) -> np.ndarray:
        """Per-element ratio  diam(inscribed ball) / diam(element)."""
        p = self.vertices[self.triangles]
        e = np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)
        inradius = 2.0 * self.areas / e.sum(axis=1)
        return 2.0 * inradius / e.max(axis=1)

    def side_vertices(self, sides) -> np.ndarray:
        """Boolean vertex mask for the closure of the given boundary sides."""
        mask = np.zeros(self.num_vertices, dtype=bool)
        for edge, tag in zip(self.boundary_edges, self.boundary_tags):
            if tag in sides:
                mask[edge] = True
        return mask

    def boundary_vertices(self) -> np.ndarray:
        return self.side_vertices(SIDES)

    @cached_property
    def vertex_elements(self) -> sp.csr_matrix:
        """Incidence matrix vertex x triangle."""
        nt = self.num_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(nt), 3)
        return sp.csr_matrix(
            (np.ones(3 * nt), (rows, cols)), shape=(self.num_vertices, nt)
        )

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates for each point."""
        points = np.atleast_2d(points)
        n = self.n
        ij = np.clip(np.floor(points * n).astype(int), 0, n - 1)
        local = points * n - ij
        upper = local[:, 1] > local[:, 0]
        tri = 2 * (ij[:, 1] * n + ij[:, 0]) + upper
        x, y = local[:, 0], local[:, 1]
        # lower: (00, 10, 11); upper: (00, 11, 01)
        bary = np.where(
            upper[:, None],
            np.stack([1.0 - y, x, y - x], axis=1),
            np.stack([1.0 - x, x - y, y], axis=1),
        )
        return tri, bary

    def write_off(self, path) -> None:
        """Plain-text dump: counts line, coordinate lines, index triples."""
        with open(path, "w") as fh:
            fh.write(f"{self.num_vertices} {self.num_triangles}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            for a, b, c in self.triangles:
                fh.write(f"{a} {b} {c}\n")


def build_uniform_mesh(m: int) -> TriMesh:
    if m < 0:
        raise ValueError(f"mesh level must be >= 0, got {m}")
    n = 2**m
    idx = np.arange(n + 1)
    xx, yy = np.meshgrid(idx / n, idx / n)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    s = np.arange(n)
    edges, tags = [], []
    for tag, a, b in (
        ("bottom", s, s + 1),
        ("right", s * (n + 1) + n, (s + 1) * (n + 1) + n),
        ("top", n * (n + 1) + s, n * (n + 1) + s + 1),
        ("left", s * (n + 1), (s + 1) * (n + 1)),
    ):
        edges.append(np.column_stack([a, b]))
        tags.extend([tag] * n)
    return TriMesh(m, vertices, triangles, np.vstack(edges), tuple(tags))


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    coarse: TriMesh
    fine: TriMesh
    parent: np.ndarray  # fine triangle -> coarse triangle
    node_embed: np.ndarray  # coarse vertex -> fine vertex
    elem_children: list = field(repr=False)

    @property
    def ratio(self) -> int:
        return 2 ** (self.fine.level - self.coarse.level)

    @cached_property
    def coarse_adjacency(self) -> sp.csr_matrix:
        """Coarse element x element matrix, nonzero where closures intersect."""
        inc = self.coarse.vertex_elements
        return (inc.T @ inc).tocsr()

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Coarse P1 -> fine P1 nodal interpolation over all vertices."""
        tri, bary = self.coarse.locate(self.fine.vertices)
        nf = self.fine.num_vertices
        rows = np.repeat(np.arange(nf), 3)
        cols = self.coarse.triangles[tri].ravel()
        vals = bary.ravel()
        keep = np.abs(vals) > 1e-14
        P = sp.csr_matrix(
            (vals[keep], (rows[keep], cols[keep])),
            shape=(nf, self.coarse.num_vertices),
        )
        P.sum_duplicates()
        return P


def build_hierarchy(m_coarse: int, m_fine: int) -> MeshHierarchy:
    """Nested pair of uniform meshes; ``m_fine == m_coarse`` gives the identity pair."""
    if m_coarse < 0 or m_fine < m_coarse:
        raise ValueError(f"need 0 <= m_coarse <= m_fine, got ({m_coarse}, {m_fine})")
    coarse, fine = build_uniform_mesh(m_coarse), build_uniform_mesh(m_fine)
    r = 2 ** (m_fine - m_coarse)
    nf, nc = fine.n, coarse.n

    t = np.arange(fine.num_triangles)
    sq = t // 2
    i, j = sq % nf, sq // nf
    li, lj = i % r, j % r
    # fine lower triangles on the local diagonal belong to the coarse lower half
    upper = (lj > li) | ((lj == li) & (t % 2 == 1))
    parent = 2 * ((j // r) * nc + (i // r)) + upper

    order = np.argsort(parent, kind="stable")
    counts = np.bincount(parent, minlength=coarse.num_triangles)
    children = np.split(order, np.cumsum(counts)[:-1])

    ci = np.arange(nc + 1)
    CJ, CI = np.meshgrid(ci, ci, indexing="ij")
    node_embed = (CJ * r * (nf + 1) + CI * r).ravel()
    return MeshHierarchy(coarse, fine, parent, node_embed, children)


@dataclass(frozen=True, eq=False)
class PatchIndex:
    center: int
    k: int
    elements: frozenset
    fine_elements: np.ndarray


def coarse_patch(hierarchy: MeshHierarchy, K: int, k: int) -> PatchIndex:
    """k-layer vertex-neighbourhood of coarse element K."""
    coarse = hierarchy.coarse
    if not 0 <= K < coarse.num_triangles:
        raise IndexError(f"coarse element {K} out of range")
    if k < 0:
        raise ValueError("k must be >= 0")
    adj = hierarchy.coarse_adjacency
    mask = np.zeros(coarse.num_triangles, dtype=bool)
    mask[K] = True
    for _ in range(k):
        grown = adj @ mask.astype(float) > 0
        if grown.sum() == mask.sum():
            break
        mask = grown
    elems = np.flatnonzero(mask)
    fine = np.flatnonzero(mask[hierarchy.parent])
    return PatchIndex(K, k, frozenset(elems.tolist()), fine)

