import logging
import math
import os
import tempfile
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InvalidArgumentError, MeshValidationError
from app.models.mesh import CycleLoop, Mesh

logger = logging.getLogger(__name__)


# Positional parameter order per generator, shared by the CLI and the config layer.
GENERATOR_PARAMS: Dict[str, Tuple[str, ...]] = {
    "circle": ("n", "radius"),
    "interval": ("n", "length", "start"),
    "disk": ("rings", "radius"),
    "annulus": ("r_in", "r_out", "rings", "segments"),
    "torus": ("nx", "ny", "lx", "ly"),
    "strip": ("n_long", "n_wide", "length", "width"),
    "two-disks": ("rings", "radius", "gap"),
}

INTEGER_PARAMS = {"n", "rings", "segments", "nx", "ny", "n_long", "n_wide"}


def _orient_counterclockwise(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Flip any planar triangle with negative signed area."""
    p = vertices[cells]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    signed = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flipped = cells.copy()
    neg = signed < 0
    flipped[neg, 1], flipped[neg, 2] = cells[neg, 2], cells[neg, 1]
    return flipped


def _ring_zipper(inner: Sequence[int], outer: Sequence[int]) -> List[Tuple[int, int, int]]:
    """
    Triangulate the band between two concentric vertex rings.

    Both rings start at angle 0 and run counterclockwise; at each step the
    ring whose next vertex has the smaller angle advances.
    """
    m, p = len(inner), len(outer)
    tris = []
    if m == 0:
        return tris
    i = j = 0
    while i < m or j < p:
        next_inner = (i + 1) / m
        next_outer = (j + 1) / p
        if i == m or (j < p and next_outer <= next_inner):
            tris.append((inner[i % m], outer[j % p], outer[(j + 1) % p]))
            j += 1
        else:
            tris.append((inner[i % m], outer[j % p], inner[(i + 1) % m]))
            i += 1
    return tris


class MeshService:
    """Generators, refinement, validation and text I/O for canonical test meshes."""

    # Generators

    def gen_circle(self, n: int, radius: float = 1.0) -> Mesh:
        """
        Periodic 1-D mesh of a circle, stored in arc-length coordinates.

        Args:
            n: Number of vertices (>= 3)
            radius: Circle radius

        Returns:
            Mesh with n equal edges of length 2*pi*radius/n and one generator cycle
        """
        if n < 3:
            raise InvalidArgumentError(f"circle needs n >= 3 vertices, got {n}")
        if radius <= 0:
            raise InvalidArgumentError(f"circle radius must be positive, got {radius}")
        period = 2.0 * math.pi * radius
        s = np.arange(n) * (period / n)
        idx = np.arange(n)
        cells = np.column_stack([idx, (idx + 1) % n])
        cycle = CycleLoop(tuple(int(v) for v in idx) + (0,), label="circle")
        return Mesh(
            dimension=1,
            vertices=s[:, None],
            cells=cells,
            boundary=np.zeros(n, dtype=bool),
            periods=(period,),
            generator_cycles=(cycle,),
            kind="circle",
        )

    def gen_interval(self, n: int, length: float = 1.0, start: float = 0.0) -> Mesh:
        """
        Uniform 1-D mesh of [start, start + length] with both endpoints on the boundary.

        Args:
            n: Number of vertices (>= 2)
            length: Interval length
            start: Left endpoint

        Returns:
            Mesh with n - 1 equal edges and no generator cycles
        """
        if n < 2:
            raise InvalidArgumentError(f"interval needs n >= 2 vertices, got {n}")
        if length <= 0:
            raise InvalidArgumentError(f"interval length must be positive, got {length}")
        x = start + np.arange(n) * (length / (n - 1))
        idx = np.arange(n - 1)
        boundary = np.zeros(n, dtype=bool)
        boundary[[0, n - 1]] = True
        return Mesh(
            dimension=1,
            vertices=x[:, None],
            cells=np.column_stack([idx, idx + 1]),
            boundary=boundary,
            periods=(None,),
            kind="interval",
        )

    def gen_disk(self, rings: int, radius: float = 1.0) -> Mesh:
        """
        Concentric-ring triangulation of a planar disk.

        Ring k (1 <= k <= rings) carries 6k vertices at radius k*radius/rings
        around a center vertex.

        Args:
            rings: Number of rings (>= 1)
            radius: Outer radius

        Returns:
            Mesh whose outermost ring is flagged as boundary
        """
        if rings < 1:
            raise InvalidArgumentError(f"disk needs rings >= 1, got {rings}")
        if radius <= 0:
            raise InvalidArgumentError(f"disk radius must be positive, got {radius}")
        points = [(0.0, 0.0)]
        ring_ids: List[List[int]] = [[0]]
        for k in range(1, rings + 1):
            r = radius * k / rings
            count = 6 * k
            ids = []
            for j in range(count):
                theta = 2.0 * math.pi * j / count
                ids.append(len(points))
                points.append((r * math.cos(theta), r * math.sin(theta)))
            ring_ids.append(ids)

        tris: List[Tuple[int, int, int]] = []
        first = ring_ids[1]
        for j in range(len(first)):
            tris.append((0, first[j], first[(j + 1) % len(first)]))
        for k in range(2, rings + 1):
            tris.extend(_ring_zipper(ring_ids[k - 1], ring_ids[k]))

        vertices = np.asarray(points, dtype=float)
        cells = _orient_counterclockwise(vertices, np.asarray(tris, dtype=np.int64))
        boundary = np.zeros(len(points), dtype=bool)
        boundary[ring_ids[-1]] = True
        return Mesh(
            dimension=2,
            vertices=vertices,
            cells=cells,
            boundary=boundary,
            periods=(None, None),
            kind="disk",
        )

    def gen_annulus(self, r_in: float, r_out: float, rings: int, segments: Optional[int] = None) -> Mesh:
        """
        Triangulated planar annulus between two circles.

        Args:
            r_in: Inner radius (> 0)
            r_out: Outer radius (> r_in)
            rings: Number of concentric vertex circles (>= 2)
            segments: Vertices per circle; defaults to near-isotropic cells

        Returns:
            Mesh with both circles on the boundary and the inner circle as generator cycle
        """
        if not 0 < r_in < r_out:
            raise InvalidArgumentError(f"annulus needs 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
        if rings < 2:
            raise InvalidArgumentError(f"annulus needs rings >= 2, got {rings}")
        dr = (r_out - r_in) / (rings - 1)
        if segments is None:
            segments = max(8, int(math.ceil(math.pi * (r_in + r_out) / dr)))
        if segments < 3:
            raise InvalidArgumentError(f"annulus needs segments >= 3, got {segments}")

        radii = r_in + dr * np.arange(rings)
        theta = 2.0 * math.pi * np.arange(segments) / segments
        xs = (radii[:, None] * np.cos(theta)[None, :]).ravel()
        ys = (radii[:, None] * np.sin(theta)[None, :]).ravel()
        vertices = np.column_stack([xs, ys])

        tris = []
        for k in range(rings - 1):
            for j in range(segments):
                a = k * segments + j
                b = k * segments + (j + 1) % segments
                c = (k + 1) * segments + (j + 1) % segments
                d = (k + 1) * segments + j
                tris.append((a, b, c))
                tris.append((a, c, d))
        cells = _orient_counterclockwise(vertices, np.asarray(tris, dtype=np.int64))

        boundary = np.zeros(len(vertices), dtype=bool)
        boundary[:segments] = True
        boundary[-segments:] = True
        inner = CycleLoop(tuple(range(segments)) + (0,), label="inner-circle")
        return Mesh(
            dimension=2,
            vertices=vertices,
            cells=cells,
            boundary=boundary,
            periods=(None, None),
            generator_cycles=(inner,),
            kind="annulus",
        )

    def gen_flat_torus(self, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Mesh:
        """
        Periodic triangulation of the rectangle [0, lx) x [0, ly).

        Args:
            nx: Vertices along x (>= 3)
            ny: Vertices along y (>= 3)
            lx: Period along x
            ly: Period along y

        Returns:
            Closed mesh with the x-loop and the y-loop as generator cycles
        """
        if nx < 3 or ny < 3:
            raise InvalidArgumentError(f"torus needs nx, ny >= 3, got nx={nx}, ny={ny}")
        if lx <= 0 or ly <= 0:
            raise InvalidArgumentError(f"torus periods must be positive, got lx={lx}, ly={ly}")
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        vertices = np.column_stack([(i * (lx / nx)).ravel(), (j * (ly / ny)).ravel()])

        def vid(a, b):
            return (a % nx) + nx * (b % ny)

        tris = []
        for b in range(ny):
            for a in range(nx):
                v00, v10, v11, v01 = vid(a, b), vid(a + 1, b), vid(a + 1, b + 1), vid(a, b + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        x_loop = CycleLoop(tuple(vid(a, 0) for a in range(nx)) + (0,), label="x-loop")
        y_loop = CycleLoop(tuple(vid(0, b) for b in range(ny)) + (0,), label="y-loop")
        return Mesh(
            dimension=2,
            vertices=vertices,
            cells=np.asarray(tris, dtype=np.int64),
            boundary=np.zeros(nx * ny, dtype=bool),
            periods=(lx, ly),
            generator_cycles=(x_loop, y_loop),
            kind="torus",
        )

    def gen_strip(self, n_long: int, n_wide: int, length: float = 1.0, width: float = 1.0) -> Mesh:
        """
        Planar rectangle [0, length] x [0, width], triangulated along one diagonal direction.

        Args:
            n_long: Vertices along the length (>= 2)
            n_wide: Vertices across the width (>= 2)
            length: Rectangle length
            width: Rectangle width

        Returns:
            Mesh with all four sides on the boundary
        """
        if n_long < 2 or n_wide < 2:
            raise InvalidArgumentError(f"strip needs n_long, n_wide >= 2, got {n_long}, {n_wide}")
        if length <= 0 or width <= 0:
            raise InvalidArgumentError(f"strip sides must be positive, got {length} x {width}")
        xs = np.linspace(0.0, length, n_long)
        ys = np.linspace(0.0, width, n_wide)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        vertices = np.column_stack([gx.ravel(), gy.ravel()])

        def vid(a, b):
            return a + n_long * b

        tris = []
        for b in range(n_wide - 1):
            for a in range(n_long - 1):
                v00, v10, v11, v01 = vid(a, b), vid(a + 1, b), vid(a + 1, b + 1), vid(a, b + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        a_idx = np.arange(len(vertices)) % n_long
        b_idx = np.arange(len(vertices)) // n_long
        boundary = (a_idx == 0) | (a_idx == n_long - 1) | (b_idx == 0) | (b_idx == n_wide - 1)
        return Mesh(
            dimension=2,
            vertices=vertices,
            cells=np.asarray(tris, dtype=np.int64),
            boundary=boundary,
            periods=(None, None),
            kind="strip",
            notes=("truncated proxy for a non-compact end; not equivalent to a complete manifold",),
        )

    def disjoint_union(self, first: Mesh, second: Mesh, gap: float = 1.0) -> Mesh:
        """
        Disjoint union of two non-periodic meshes of the same dimension.

        The second mesh is translated along the first axis so the two
        bounding boxes are separated by `gap`.
        """
        if first.dimension != second.dimension:
            raise InvalidArgumentError("cannot unite meshes of different dimensions")
        if any(first.periods) or any(second.periods):
            raise InvalidArgumentError("disjoint union is only defined for non-periodic meshes")
        shift = np.zeros(first.dimension)
        shift[0] = first.bounding_box()[0, 1] - second.bounding_box()[0, 0] + gap
        offset = first.n_vertices
        cycles = tuple(first.generator_cycles) + tuple(
            CycleLoop(tuple(v + offset for v in c.vertices), label=c.label) for c in second.generator_cycles
        )
        return Mesh(
            dimension=first.dimension,
            vertices=np.vstack([first.vertices, second.vertices + shift]),
            cells=np.vstack([first.cells, second.cells + offset]),
            boundary=np.concatenate([first.boundary, second.boundary]),
            periods=first.periods,
            generator_cycles=cycles,
            kind=f"{first.kind}+{second.kind}",
            notes=tuple(first.notes) + tuple(second.notes),
        )

    def generate(self, generator: str, params: Dict[str, float]) -> Mesh:
        """
        Build a mesh from a generator name and a parameter mapping.

        Args:
            generator: One of GENERATOR_PARAMS
            params: Generator parameters by name

        Returns:
            The generated mesh
        """
        if generator not in GENERATOR_PARAMS:
            raise InvalidArgumentError(f"unknown mesh generator '{generator}'")
        unknown = set(params) - set(GENERATOR_PARAMS[generator])
        if unknown:
            raise InvalidArgumentError(f"unknown parameters for {generator}: {sorted(unknown)}")
        kw = {k: (int(v) if k in INTEGER_PARAMS else float(v)) for k, v in params.items()}
        logger.info(f"Generating {generator} mesh with {kw}")
        try:
            return self._dispatch(generator, kw)
        except TypeError as e:
            raise InvalidArgumentError(f"bad parameters for {generator}: {e}")

    def _dispatch(self, generator: str, kw: Dict) -> Mesh:
        if generator == "circle":
            return self.gen_circle(**kw)
        if generator == "interval":
            return self.gen_interval(**kw)
        if generator == "disk":
            return self.gen_disk(**kw)
        if generator == "annulus":
            return self.gen_annulus(**kw)
        if generator == "torus":
            return self.gen_flat_torus(**kw)
        if generator == "strip":
            return self.gen_strip(**kw)
        gap = kw.pop("gap", 1.0)
        disk = self.gen_disk(**kw)
        return self.disjoint_union(disk, disk, gap=gap)

    # Refinement

    def refine(self, mesh: Mesh) -> Mesh:
        """
        Uniform midpoint subdivision.

        1-D edges are bisected; 2-D triangles split into four children with
        the parent's orientation. Original vertices keep their indices and
        midpoints follow in edge order. Boundary flags and generator cycles
        are lifted to the refined mesh.

        Args:
            mesh: Mesh to refine

        Returns:
            The refined mesh
        """
        edges = mesh.edges
        n = mesh.n_vertices
        mids = mesh.vertices[edges[:, 0]] + 0.5 * mesh.displacement(edges[:, 0], edges[:, 1])
        for axis, period in enumerate(mesh.periods):
            if period:
                mids[:, axis] = np.mod(mids[:, axis], period)
        midpoint_of = {(int(a), int(b)): n + k for k, (a, b) in enumerate(edges)}

        def mid(a, b):
            return midpoint_of[(a, b) if a < b else (b, a)]

        if mesh.dimension == 1:
            cells = []
            for a, b in mesh.cells:
                m = mid(int(a), int(b))
                cells.append((int(a), m))
                cells.append((m, int(b)))
            mid_boundary = np.zeros(len(edges), dtype=bool)
        else:
            cells = []
            for a, b, c in mesh.cells:
                a, b, c = int(a), int(b), int(c)
                ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
                cells.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
            on_boundary = {(int(a), int(b)) for a, b in mesh.boundary_edges}
            mid_boundary = np.array([(int(a), int(b)) in on_boundary for a, b in edges], dtype=bool)

        cycles = []
        for cycle in mesh.generator_cycles:
            lifted = [cycle.vertices[0]]
            for a, b in cycle.steps:
                lifted.extend([mid(int(a), int(b)), int(b)])
            cycles.append(CycleLoop(tuple(lifted), label=cycle.label))

        refined = Mesh(
            dimension=mesh.dimension,
            vertices=np.vstack([mesh.vertices, mids]),
            cells=np.asarray(cells, dtype=np.int64),
            boundary=np.concatenate([mesh.boundary, mid_boundary]),
            periods=mesh.periods,
            generator_cycles=tuple(cycles),
            kind=mesh.kind,
            notes=mesh.notes,
        )
        logger.info(f"Refined {mesh.kind} mesh: {n} -> {refined.n_vertices} vertices")
        return refined

    def refine_levels(self, mesh: Mesh, levels: int) -> List[Mesh]:
        """The mesh followed by `levels` successive refinements."""
        meshes = [mesh]
        for _ in range(levels):
            meshes.append(self.refine(meshes[-1]))
        return meshes

    # Validation

    def validation_issues(self, mesh: Mesh) -> List[str]:
        """
        Check every Mesh invariant.

        Args:
            mesh: Mesh to check

        Returns:
            Human-readable descriptions of violated invariants (empty if valid)
        """
        issues = []
        if mesh.dimension not in (1, 2):
            return [f"dimension must be 1 or 2, got {mesh.dimension}"]
        if mesh.cells.shape[1] != mesh.dimension + 1:
            issues.append(f"cells must have {mesh.dimension + 1} vertices")
            return issues
        if mesh.vertices.shape[1] != mesh.dimension:
            issues.append(f"vertex coordinates must have {mesh.dimension} components")
        if mesh.boundary.shape != (mesh.n_vertices,):
            issues.append("boundary flags must have one entry per vertex")
            return issues
        if mesh.cells.min() < 0 or mesh.cells.max() >= mesh.n_vertices:
            issues.append("cell references a vertex out of range")
            return issues

        signed = mesh.signed_measures
        if np.any(mesh.cell_measures <= 0):
            issues.append(f"{int(np.sum(mesh.cell_measures <= 0))} cells have non-positive measure")
        if mesh.dimension == 2 and np.any(signed < 0):
            issues.append(f"{int(np.sum(signed < 0))} triangles are clockwise")

        if mesh.dimension == 2:
            counts = mesh.edge_cell_counts
            if np.any(counts > 2):
                issues.append(f"{int(np.sum(counts > 2))} edges are shared by more than two triangles")
            # an edge touching an interior vertex cannot lie on the boundary
            flags = mesh.boundary.astype(bool)
            interior = ~(flags[mesh.edges[:, 0]] & flags[mesh.edges[:, 1]])
            unpaired = interior & (counts != 2)
            if np.any(unpaired):
                issues.append(f"{int(np.sum(unpaired))} interior edges are not shared by exactly two triangles")
            on_edge = np.zeros(mesh.n_vertices, dtype=bool)
            on_edge[mesh.boundary_edges.ravel()] = True
            if not np.array_equal(on_edge, mesh.boundary):
                issues.append("boundary vertex flags disagree with boundary edges")
        else:
            degree = np.bincount(mesh.cells.ravel(), minlength=mesh.n_vertices)
            if np.any(degree > 2):
                issues.append("1-D vertex with more than two incident edges")
            if not np.array_equal(degree == 1, mesh.boundary):
                issues.append("boundary vertex flags disagree with 1-D endpoints")

        edge_set = {(int(a), int(b)) for a, b in mesh.edges}
        for cycle in mesh.generator_cycles:
            v = cycle.vertices
            if len(v) < 2 or v[0] != v[-1]:
                issues.append(f"cycle '{cycle.label}' is not closed")
                continue
            for a, b in cycle.steps:
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                if key not in edge_set:
                    issues.append(f"cycle '{cycle.label}' steps across non-edge {key}")
                    break

        betti = mesh.betti_1()
        if len(mesh.generator_cycles) != betti:
            issues.append(f"{len(mesh.generator_cycles)} generator cycles stored, first Betti number is {betti}")
        return issues

    def validate(self, mesh: Mesh) -> None:
        """Raise MeshValidationError if any invariant is violated."""
        issues = self.validation_issues(mesh)
        if issues:
            raise MeshValidationError(issues)

    # Text I/O

    def dumps(self, mesh: Mesh) -> str:
        """
        Serialize a mesh to the plain-text mesh format.

        Comment lines (`#`) carry the kind and periods; the first
        non-comment line is the header `dim n_vertices n_cells n_boundary
        n_cycles`, followed by vertex coordinates, cells, boundary vertex
        indices and one line per cycle (label first, then vertex indices).
        """
        periods = " ".join("none" if not p else repr(float(p)) for p in mesh.periods) or "none"
        lines = [f"# mesh {mesh.kind}", f"# periods {periods}"]
        boundary = mesh.boundary_vertices
        lines.append(
            f"{mesh.dimension} {mesh.n_vertices} {mesh.n_cells} {len(boundary)} {len(mesh.generator_cycles)}"
        )
        for row in mesh.vertices:
            lines.append(" ".join(repr(float(x)) for x in row))
        for row in mesh.cells:
            lines.append(" ".join(str(int(v)) for v in row))
        for v in boundary:
            lines.append(str(int(v)))
        for cycle in mesh.generator_cycles:
            label = cycle.label or "cycle"
            lines.append(label + " " + " ".join(str(v) for v in cycle.vertices))
        return "\n".join(lines) + "\n"

    def loads(self, text: str) -> Mesh:
        """Parse the plain-text mesh format written by `dumps`."""
        kind = "mesh"
        periods: Tuple[Optional[float], ...] = ()
        body = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "mesh" and len(parts) > 1:
                    kind = parts[1]
                elif parts and parts[0] == "periods":
                    periods = tuple(None if p == "none" else float(p) for p in parts[1:])
                continue
            body.append(line)
        if not body:
            raise InvalidArgumentError("mesh file has no header line")
        try:
            dim, n_v, n_c, n_b, n_cyc = (int(x) for x in body[0].split())
            pos = 1
            vertices = np.array([[float(x) for x in body[pos + k].split()] for k in range(n_v)], dtype=float)
            pos += n_v
            cells = np.array([[int(x) for x in body[pos + k].split()] for k in range(n_c)], dtype=np.int64)
            pos += n_c
            boundary = np.zeros(n_v, dtype=bool)
            for k in range(n_b):
                boundary[int(body[pos + k])] = True
            pos += n_b
            cycles = []
            for k in range(n_cyc):
                parts = body[pos + k].split()
                cycles.append(CycleLoop(tuple(int(v) for v in parts[1:]), label=parts[0]))
        except (ValueError, IndexError) as e:
            raise InvalidArgumentError(f"malformed mesh file: {e}")
        if not periods:
            periods = (None,) * dim
        return Mesh(
            dimension=dim,
            vertices=vertices.reshape(n_v, dim),
            cells=cells.reshape(n_c, dim + 1),
            boundary=boundary,
            periods=periods,
            generator_cycles=tuple(cycles),
            kind=kind,
        )

    def save(self, mesh: Mesh, path: str) -> None:
        """Write a mesh file atomically (temp file + rename)."""
        write_text_atomic(path, self.dumps(mesh))
        logger.info(f"Saved {mesh.kind} mesh ({mesh.n_vertices} vertices) to {path}")

    def load(self, path: str) -> Mesh:
        with open(path, "r", encoding="utf-8") as fh:
            return self.loads(fh.read())


def write_text_atomic(path: str, text: str) -> None:
    """Write text to path via a temporary sibling file and os.replace."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
