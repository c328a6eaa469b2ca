import logging
import math
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from app.errors import ResolutionError
from app.models.mesh import CycleLoop, Mesh
from app.models.schemas import CycleObstruction, CycleWinding, PhaseReport, ZeroCertificate
from app.models.systems import ComplexLogResult
from app.services.identity_service import require_nonvanishing
from app.services.operator_service import OperatorService

logger = logging.getLogger(__name__)

# Barycentric slack for "zero inside the triangle".
INSIDE_SLACK = 1e-12


def _segment_minimum(fa: complex, fb: complex):
    """Parameter t in [0, 1] and modulus of the point of smallest |f| on the segment."""
    d = fb - fa
    dd = abs(d) ** 2
    t = 0.0 if dd == 0 else min(1.0, max(0.0, -(np.conj(fa) * d).real / dd))
    return t, abs(fa + t * d)


class PhaseService:
    """Winding numbers, branches of log f, phase energy and zero location."""

    def __init__(self, operators: Optional[OperatorService] = None, jump_margin: float = 1e-6):
        self.operators = operators or OperatorService()
        self.jump_margin = jump_margin

    def _jump(self, f: np.ndarray, a: int, b: int) -> float:
        jump = float(np.angle(f[b] / f[a]))
        if abs(jump) >= math.pi - self.jump_margin:
            raise ResolutionError(
                f"phase jump {jump:.6f} along edge ({a}, {b}) is not below pi; refine the mesh",
                edge=(a, b),
                jump=jump,
            )
        return jump

    def winding_number(self, mesh: Mesh, f: np.ndarray, cycle: CycleLoop) -> int:
        """
        Total principal-branch phase change of f around a closed loop, over 2 pi.

        Args:
            mesh: Mesh the cycle lives on
            f: Field, nonzero on the cycle
            cycle: Closed vertex loop

        Returns:
            Integer winding number

        Raises:
            DomainError: If f vanishes on the cycle
            ResolutionError: If a consecutive phase jump is not below pi
        """
        f = np.asarray(f, dtype=complex)
        require_nonvanishing(f[list(cycle.vertices)], what=f"field on cycle '{cycle.label}'")
        total = sum(self._jump(f, int(a), int(b)) for a, b in cycle.steps)
        return int(round(total / (2.0 * math.pi)))

    def _spanning_forest(self, mesh: Mesh):
        """BFS parent and depth per vertex; roots are the lowest index of each component."""
        n = mesh.n_vertices
        parent = np.full(n, -1, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        orders = []
        labels = mesh.component_labels
        for comp in range(mesh.n_components):
            root = int(np.flatnonzero(labels == comp)[0])
            order, pred = csgraph.breadth_first_order(
                mesh.adjacency, root, directed=False, return_predecessors=True
            )
            for v in order[1:]:
                parent[v] = pred[v]
                depth[v] = depth[pred[v]] + 1
            orders.append(order)
        return np.concatenate(orders), parent, depth

    def _fundamental_cycle(self, parent: np.ndarray, depth: np.ndarray, a: int, b: int) -> List[int]:
        """Tree path a -> lca -> b closed by the edge (b, a)."""
        up_a, up_b = [a], [b]
        x, y = a, b
        while depth[x] > depth[y]:
            x = int(parent[x])
            up_a.append(x)
        while depth[y] > depth[x]:
            y = int(parent[y])
            up_b.append(y)
        while x != y:
            x, y = int(parent[x]), int(parent[y])
            up_a.append(x)
            up_b.append(y)
        return up_a + up_b[-2::-1] + [a]

    def tree_phase(self, mesh: Mesh, f: np.ndarray):
        """Phase tracked from each component root along a BFS spanning forest."""
        order, parent, depth = self._spanning_forest(mesh)
        u = np.zeros(mesh.n_vertices)
        for v in order:
            p = parent[v]
            u[v] = float(np.angle(f[v])) if p < 0 else u[p] + self._jump(f, int(p), int(v))
        return u, parent, depth

    def complex_log(self, mesh: Mesh, f: np.ndarray) -> ComplexLogResult:
        """
        A branch phi of log f, or the loop that obstructs one.

        Generator cycles are checked first; then every edge off the
        spanning forest must close the tracked phase up to a zero multiple
        of 2 pi. On success Re phi = log|f| and Im phi is the tracked phase.

        Args:
            mesh: Mesh
            f: Nowhere-vanishing field

        Returns:
            ComplexLogResult with phi, or with the obstructing cycle and its winding

        Raises:
            DomainError: If f vanishes somewhere
            ResolutionError: If an edge jump is not below pi
        """
        f = np.asarray(f, dtype=complex)
        require_nonvanishing(f)
        u, parent, depth = self.tree_phase(mesh, f)
        for cycle in mesh.generator_cycles:
            w = self.winding_number(mesh, f, cycle)
            if w != 0:
                logger.info(f"complex_log obstructed by generator '{cycle.label}' with winding {w}")
                return ComplexLogResult(phi=None, obstruction=cycle, winding=w, tree_phase=u)

        for a, b in mesh.edges:
            a, b = int(a), int(b)
            if parent[a] == b or parent[b] == a:
                continue
            k = int(round((u[b] - u[a] - self._jump(f, a, b)) / (2.0 * math.pi)))
            if k != 0:
                loop = CycleLoop(tuple(self._fundamental_cycle(parent, depth, a, b)), label="fundamental")
                logger.info(f"complex_log obstructed at edge ({a}, {b}) with winding {k}")
                return ComplexLogResult(phi=None, obstruction=loop, winding=k, tree_phase=u)

        phi = np.log(np.abs(f)) + 1j * u
        return ComplexLogResult(phi=phi, tree_phase=u)

    def phase_energy(self, mesh: Mesh, f: np.ndarray, matrix: Optional[sparse.spmatrix] = None) -> float:
        """
        sum_cells measure * |f|^2_cell * |grad u|^2 with u unwrapped locally in each cell.

        Local unwrapping takes u = arg(f_k / f_first) on every cell, so the
        energy does not depend on any global branch.
        """
        f = np.asarray(f, dtype=complex)
        g = (self.operators.gradient_matrix(mesh) if matrix is None else matrix).tocoo()
        dim = mesh.dimension
        cell = g.row // dim
        local = np.angle(f[g.col] / f[mesh.cells[cell, 0]])
        grad = np.bincount(g.row, weights=g.data * local, minlength=mesh.n_cells * dim)
        grad = grad.reshape(mesh.n_cells, dim)
        f2_cell = (np.abs(f[mesh.cells]) ** 2).mean(axis=1)
        return float(np.sum(mesh.cell_measures * f2_cell * np.sum(grad ** 2, axis=1)))

    def phase_report(self, mesh: Mesh, f: np.ndarray, stiffness: Optional[sparse.spmatrix] = None) -> PhaseReport:
        """
        Windings, log existence, per-component phase ranges and phase energy of a field.

        Args:
            mesh: Mesh
            f: Nowhere-vanishing field
            stiffness: A, for the energy scale; assembled when omitted

        Returns:
            PhaseReport
        """
        f = np.asarray(f, dtype=complex)
        log_result = self.complex_log(mesh, f)
        windings = [
            CycleWinding(label=c.label, winding=self.winding_number(mesh, f, c)) for c in mesh.generator_cycles
        ]
        u = log_result.tree_phase
        labels = mesh.component_labels
        ranges = [float(np.ptp(u[labels == comp])) for comp in range(mesh.n_components)]
        a = self.operators.assemble_stiffness(mesh) if stiffness is None else stiffness
        energy_scale = float(abs(a).max()) * float(np.sum(np.abs(f) ** 2))
        obstruction = None
        if log_result.obstruction is not None:
            obstruction = CycleObstruction(
                label=log_result.obstruction.label,
                vertices=list(log_result.obstruction.vertices),
                winding=log_result.winding,
            )
        return PhaseReport(
            windings=windings,
            global_log_exists=log_result.ok,
            n_components=mesh.n_components,
            component_ranges=ranges,
            phase_energy=self.phase_energy(mesh, f),
            energy_scale=energy_scale,
            obstruction=obstruction,
        )

    def zero_locate(self, mesh: Mesh, f: np.ndarray, tol: float = 1e-6) -> List[ZeroCertificate]:
        """
        Numerical zeros of f and simplices certified to contain a zero of its interpolant.

        A vertex counts when |f_i| <= tol * max|f|. A 1-D edge is certified
        when Re f and Im f both change sign along it (zero endpoints count);
        a triangle when the real 2x2 system for the interpolant's zero has a
        solution inside it, or, for a real-valued interpolant, when Re f
        changes sign over its vertices. Simplices touching a vertex zero are
        not repeated.

        Args:
            mesh: Mesh
            f: Field
            tol: Relative vanishing threshold

        Returns:
            Certificates sorted ascending by |f|
        """
        f = np.asarray(f, dtype=complex)
        fmax = float(np.abs(f).max()) if f.size else 0.0
        found: List[ZeroCertificate] = []
        if fmax == 0:
            return [
                ZeroCertificate(kind="vertex", index=i, vertices=[i], modulus=0.0, location=mesh.vertices[i].tolist())
                for i in range(mesh.n_vertices)
            ]
        vertex_zero = np.abs(f) <= tol * fmax
        for i in np.flatnonzero(vertex_zero):
            found.append(
                ZeroCertificate(
                    kind="vertex",
                    index=int(i),
                    vertices=[int(i)],
                    modulus=float(abs(f[i])),
                    location=mesh.vertices[i].tolist(),
                )
            )

        fc = f[mesh.cells]
        candidates = np.flatnonzero(~vertex_zero[mesh.cells].any(axis=1))
        if mesh.dimension == 1:
            re, im = fc.real, fc.imag
            straddle = (re[:, 0] * re[:, 1] <= 0) & (im[:, 0] * im[:, 1] <= 0)
            for c in candidates[straddle[candidates]]:
                a = int(mesh.cells[c, 0])
                t, modulus = _segment_minimum(fc[c, 0], fc[c, 1])
                location = mesh.vertices[a] + t * mesh.cell_frames[c, :, 0]
                found.append(self._cell_certificate("edge", mesh, int(c), modulus, location))
        else:
            for c in candidates:
                cert = self._triangle_zero(mesh, int(c), fc[c])
                if cert is not None:
                    found.append(cert)

        found.sort(key=lambda z: (z.modulus, z.kind != "vertex", z.index))
        logger.info(f"zero_locate: {len(found)} certificate(s) on {mesh.kind}")
        return found

    def _cell_certificate(self, kind: str, mesh: Mesh, c: int, modulus: float, location) -> ZeroCertificate:
        location = np.asarray(location, dtype=float)
        for axis, period in enumerate(mesh.periods):
            if period:
                location[axis] = location[axis] % period
        return ZeroCertificate(
            kind=kind,
            index=c,
            vertices=[int(v) for v in mesh.cells[c]],
            modulus=float(modulus),
            location=location.tolist(),
        )

    def _triangle_zero(self, mesh: Mesh, c: int, values: np.ndarray) -> Optional[ZeroCertificate]:
        fa, fb, fc = values
        db, dc = fb - fa, fc - fa
        system = np.array([[db.real, dc.real], [db.imag, dc.imag]])
        base = mesh.vertices[mesh.cells[c, 0]]
        e1, e2 = mesh.cell_frames[c, :, 0], mesh.cell_frames[c, :, 1]
        scale = max(abs(db), abs(dc), abs(fa))
        det = np.linalg.det(system)
        if abs(det) > 1e-14 * scale ** 2:
            s, t = np.linalg.solve(system, [-fa.real, -fa.imag])
            if s >= -INSIDE_SLACK and t >= -INSIDE_SLACK and s + t <= 1.0 + INSIDE_SLACK:
                modulus = abs(fa + s * db + t * dc)
                return self._cell_certificate("cell", mesh, c, modulus, base + s * e1 + t * e2)
            return None

        re, im = values.real, values.imag
        if not (re.min() <= 0 <= re.max() and im.min() <= 0 <= im.max()):
            return None
        # Real-valued (or collinear) interpolant: the zero set crosses an edge.
        corners = [np.zeros(2), e1, e2]
        best = None
        for p, q in ((0, 1), (1, 2), (2, 0)):
            t, modulus = _segment_minimum(values[p], values[q])
            if best is None or modulus < best[0]:
                best = (modulus, base + corners[p] + t * (corners[q] - corners[p]))
        return self._cell_certificate("cell", mesh, c, best[0], best[1])
