from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


@dataclass(frozen=True)
class CycleLoop:
    """Closed vertex loop traversing consecutive mesh edges (first vertex == last vertex)."""

    vertices: Tuple[int, ...]
    label: str = ""

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def steps(self) -> np.ndarray:
        """(k, 2) array of consecutive vertex pairs along the loop."""
        v = np.asarray(self.vertices, dtype=np.int64)
        return np.column_stack([v[:-1], v[1:]])


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Simplicial 1-D or 2-D mesh of a canonical test manifold.

    Coordinates are intrinsic where the manifold is periodic: a circle of
    radius R is stored as arc length s in [0, 2*pi*R) with period 2*pi*R,
    a flat torus as a rectangle with both periods set. Displacements between
    vertices always use the minimum image, so cells that cross a periodic
    seam have the same geometry as every other cell.
    """

    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray
    periods: Tuple[Optional[float], ...] = ()
    generator_cycles: Tuple[CycleLoop, ...] = ()
    kind: str = "mesh"
    notes: Tuple[str, ...] = field(default=())

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    def displacement(self, i, j) -> np.ndarray:
        """Minimum-image vector x_j - x_i, shape (..., dimension)."""
        d = self.vertices[j] - self.vertices[i]
        for axis, period in enumerate(self.periods):
            if period:
                d[..., axis] -= period * np.round(d[..., axis] / period)
        return d

    @cached_property
    def cell_frames(self) -> np.ndarray:
        """Edge vectors from the first vertex of each cell, shape (cells, dim, dim)."""
        if self.dimension == 1:
            return self.displacement(self.cells[:, 0], self.cells[:, 1])[:, :, None]
        e1 = self.displacement(self.cells[:, 0], self.cells[:, 1])
        e2 = self.displacement(self.cells[:, 0], self.cells[:, 2])
        return np.stack([e1, e2], axis=2)

    @cached_property
    def signed_measures(self) -> np.ndarray:
        """Signed edge increments (1-D) or signed triangle areas (2-D)."""
        frames = self.cell_frames
        if self.dimension == 1:
            return frames[:, 0, 0].copy()
        return 0.5 * (frames[:, 0, 0] * frames[:, 1, 1] - frames[:, 0, 1] * frames[:, 1, 0])

    @cached_property
    def cell_measures(self) -> np.ndarray:
        return np.abs(self.signed_measures)

    @property
    def total_measure(self) -> float:
        return float(self.cell_measures.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted pairs, lexicographically ordered."""
        if self.dimension == 1:
            pairs = self.cells
        else:
            c = self.cells
            pairs = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    @cached_property
    def edge_cell_counts(self) -> np.ndarray:
        """Number of cells incident to each edge of `edges` (2-D meshes)."""
        c = self.cells
        pairs = np.sort(np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]]), axis=1)
        _, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return np.bincount(inverse.ravel(), minlength=len(self.edges))

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        if self.dimension == 1:
            return np.empty((0, 2), dtype=np.int64)
        return self.edges[self.edge_cell_counts == 1]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.displacement(self.edges[:, 0], self.edges[:, 1])
        return np.linalg.norm(d, axis=1)

    @property
    def max_edge_length(self) -> float:
        return float(self.edge_lengths.max())

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        n = self.n_vertices
        e = self.edges
        data = np.ones(len(e))
        graph = sparse.coo_matrix((data, (e[:, 0], e[:, 1])), shape=(n, n))
        return (graph + graph.T).tocsr()

    @cached_property
    def component_labels(self) -> np.ndarray:
        _, labels = csgraph.connected_components(self.adjacency, directed=False)
        return labels

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1 if self.n_vertices else 0

    def euler_characteristic(self, component: Optional[int] = None) -> int:
        """V - E (+ F in 2-D), for the whole mesh or one connected component."""
        vmask = np.ones(self.n_vertices, dtype=bool)
        if component is not None:
            vmask = self.component_labels == component
        n_v = int(vmask.sum())
        n_e = int(vmask[self.edges[:, 0]].sum())
        chi = n_v - n_e
        if self.dimension == 2:
            chi += int(vmask[self.cells[:, 0]].sum())
        return chi

    def betti_1(self) -> int:
        """First Betti number, summed over connected components."""
        total = 0
        for comp in range(self.n_components):
            chi = self.euler_characteristic(comp)
            closed = not bool(self.boundary[self.component_labels == comp].any())
            if self.dimension == 2 and closed:
                total += 2 - chi
            else:
                total += 1 - chi
        return total

    def bounding_box(self) -> np.ndarray:
        """(dim, 2) array of [min, max] per coordinate."""
        return np.column_stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])
