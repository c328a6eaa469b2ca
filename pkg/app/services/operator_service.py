import logging
from typing import Optional

import numpy as np
from scipy import sparse

from app.errors import AssemblyError
from app.models.mesh import Mesh
from app.models.systems import SchrodingerSystem
from app.services.mesh_service import write_text_atomic

logger = logging.getLogger(__name__)

# Cells whose measure falls below this fraction of (max edge length)^dim are degenerate.
DEGENERACY_RATIO = 1e-14


class OperatorService:
    """
    Assembly of the discrete metric structure on a mesh.

    Sign convention: the stiffness matrix A represents -Delta_g in weak
    form, so <Af, f> approximates the Dirichlet energy and is >= 0. Natural
    (Neumann) boundary behavior is built in because no boundary terms are
    assembled.
    """

    def _check_cells(self, mesh: Mesh) -> None:
        h = mesh.max_edge_length
        floor = DEGENERACY_RATIO * h ** mesh.dimension
        bad = np.flatnonzero(mesh.cell_measures <= floor)
        if bad.size:
            raise AssemblyError(
                f"{bad.size} degenerate cell(s) in {mesh.kind} mesh, first is cell {int(bad[0])} "
                f"with vertices {mesh.cells[bad[0]].tolist()}"
            )

    def edge_weights(self, mesh: Mesh) -> sparse.csr_matrix:
        """
        Strictly upper-triangular matrix W of edge weights w_ij (i < j).

        1-D: w_ij = 1/h_e. 2-D: w_ij = (cot(alpha) + cot(beta))/2 over the
        angles opposite edge ij. Obtuse triangles give negative
        contributions and are kept as they are.
        """
        self._check_cells(mesh)
        n = mesh.n_vertices
        if mesh.dimension == 1:
            rows, cols = mesh.cells[:, 0], mesh.cells[:, 1]
            data = 1.0 / mesh.cell_measures
        else:
            frames = mesh.cell_frames
            e1, e2 = frames[:, :, 0], frames[:, :, 1]
            quarter_inv_area = 1.0 / (4.0 * mesh.cell_measures)
            a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
            # edge opposite a is bc, opposite b is ca, opposite c is ab
            w_bc = np.einsum("ij,ij->i", e1, e2) * quarter_inv_area
            w_ca = np.einsum("ij,ij->i", e2 - e1, -e1) * quarter_inv_area
            w_ab = np.einsum("ij,ij->i", -e2, e1 - e2) * quarter_inv_area
            rows = np.concatenate([b, c, a])
            cols = np.concatenate([c, a, b])
            data = np.concatenate([w_bc, w_ca, w_ab])
        lo = np.minimum(rows, cols)
        hi = np.maximum(rows, cols)
        return sparse.coo_matrix((data, (lo, hi)), shape=(n, n)).tocsr()

    def assemble_stiffness(self, mesh: Mesh) -> sparse.csr_matrix:
        """
        Assemble the stiffness matrix A.

        Off-diagonal entries are -w_ij, mirrored from one upper-triangular
        matrix so A equals its transpose bit for bit; the diagonal is the
        negated off-diagonal row sum, so constants are in the kernel.

        Args:
            mesh: Valid mesh

        Returns:
            Real symmetric sparse matrix (CSR)
        """
        upper = self.edge_weights(mesh)
        off = upper + upper.T
        diag = np.asarray(off.sum(axis=1)).ravel()
        stiffness = (sparse.diags(diag) - off).tocsr()
        stiffness.sum_duplicates()
        logger.info(f"Assembled stiffness for {mesh.kind}: n={mesh.n_vertices}, nnz={stiffness.nnz}")
        return stiffness

    def assemble_mass(self, mesh: Mesh) -> np.ndarray:
        """
        Lumped mass diagonal.

        1-D: half the sum of incident edge lengths. 2-D: one third of the
        incident triangle areas. The trace equals the total measure.

        Args:
            mesh: Valid mesh

        Returns:
            Positive vector of length n_vertices
        """
        self._check_cells(mesh)
        share = mesh.cell_measures / (mesh.dimension + 1)
        weights = np.repeat(share, mesh.dimension + 1)
        mass = np.bincount(mesh.cells.ravel(), weights=weights, minlength=mesh.n_vertices)
        if np.any(mass <= 0):
            raise AssemblyError(f"vertex {int(np.argmin(mass))} has no incident cell")
        return mass

    def assemble_schrodinger(
        self, stiffness: sparse.spmatrix, mass: np.ndarray, potential
    ) -> SchrodingerSystem:
        """
        Combine A, M and V into K = A + M diag(V).

        Args:
            stiffness: Stiffness matrix A (n x n)
            mass: Lumped mass diagonal (n)
            potential: Per-vertex complex potential (n) or a scalar

        Returns:
            SchrodingerSystem with complex symmetric operator K
        """
        n = stiffness.shape[0]
        v = np.asarray(potential, dtype=complex)
        if v.ndim == 0:
            v = np.full(n, complex(v))
        if stiffness.shape != (n, n) or mass.shape != (n,) or v.shape != (n,):
            raise AssemblyError(
                f"size mismatch: A {stiffness.shape}, M {mass.shape}, V {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise AssemblyError("potential has non-finite entries")
        operator = (stiffness.astype(complex) + sparse.diags(mass * v)).tocsr()
        return SchrodingerSystem(
            stiffness=stiffness.tocsr(),
            mass=mass,
            potential=v,
            operator=operator,
        )

    def build_system(self, mesh: Mesh, potential) -> SchrodingerSystem:
        """Assemble A and M on `mesh` and combine them with `potential`."""
        return self.assemble_schrodinger(self.assemble_stiffness(mesh), self.assemble_mass(mesh), potential)

    def shift_potential(self, system: SchrodingerSystem, eigenvalue: complex) -> SchrodingerSystem:
        """Replace V by V - eigenvalue, turning an eigenpair into an exact kernel pair."""
        return self.assemble_schrodinger(system.stiffness, system.mass, system.potential - eigenvalue)

    # Gradient and divergence

    def gradient_matrix(self, mesh: Mesh) -> sparse.csr_matrix:
        """
        Sparse G with (G f)[c*dim + k] = k-th component of the gradient of
        the piecewise-linear interpolant of f on cell c.
        """
        self._check_cells(mesh)
        m, n = mesh.n_cells, mesh.n_vertices
        if mesh.dimension == 1:
            inc = mesh.signed_measures
            rows = np.concatenate([np.arange(m), np.arange(m)])
            cols = np.concatenate([mesh.cells[:, 0], mesh.cells[:, 1]])
            data = np.concatenate([-1.0 / inc, 1.0 / inc])
            return sparse.coo_matrix((data, (rows, cols)), shape=(m, n)).tocsr()

        frames = mesh.cell_frames
        e1, e2 = frames[:, :, 0], frames[:, :, 1]
        det = 2.0 * mesh.signed_measures
        grad_b = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
        grad_c = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
        grad_a = -(grad_b + grad_c)
        rows, cols, data = [], [], []
        for local, grads in enumerate((grad_a, grad_b, grad_c)):
            for k in range(2):
                rows.append(2 * np.arange(m) + k)
                cols.append(mesh.cells[:, local])
                data.append(grads[:, k])
        return sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * m, n)
        ).tocsr()

    def gradient(self, mesh: Mesh, f: np.ndarray, matrix: Optional[sparse.spmatrix] = None) -> np.ndarray:
        """
        Per-cell gradient of the piecewise-linear interpolant of f.

        Args:
            mesh: Mesh
            f: One value per vertex (real or complex)
            matrix: Precomputed gradient_matrix(mesh), optional

        Returns:
            Array of shape (n_cells, dimension)
        """
        f = np.asarray(f)
        if f.shape != (mesh.n_vertices,):
            raise AssemblyError(f"field has shape {f.shape}, mesh has {mesh.n_vertices} vertices")
        g = self.gradient_matrix(mesh) if matrix is None else matrix
        return (g @ f).reshape(mesh.n_cells, mesh.dimension)

    def divergence(
        self,
        mesh: Mesh,
        field: np.ndarray,
        mass: Optional[np.ndarray] = None,
        matrix: Optional[sparse.spmatrix] = None,
    ) -> np.ndarray:
        """
        Discrete divergence, the negative M-adjoint of `gradient`:
        sum_i M_ii chi_i (div X)_i = -sum_cells measure * <X, grad chi>.

        Args:
            mesh: Mesh
            field: Cell vector field of shape (n_cells, dimension)
            mass: Lumped mass diagonal, optional
            matrix: Precomputed gradient_matrix(mesh), optional

        Returns:
            One value per vertex
        """
        field = np.asarray(field)
        if field.shape != (mesh.n_cells, mesh.dimension):
            raise AssemblyError(
                f"cell field has shape {field.shape}, expected {(mesh.n_cells, mesh.dimension)}"
            )
        g = self.gradient_matrix(mesh) if matrix is None else matrix
        m = self.assemble_mass(mesh) if mass is None else mass
        weighted = (mesh.cell_measures[:, None] * field).ravel()
        return -(g.T @ weighted) / m

    def strong_laplacian(self, system: SchrodingerSystem) -> sparse.csr_matrix:
        """M^{-1} A, the strong-form approximation of -Delta_g."""
        return (sparse.diags(1.0 / system.mass) @ system.stiffness).tocsr()

    # Export

    def export_coordinate_text(self, matrix: sparse.spmatrix, path: str) -> None:
        """Write a sparse matrix as `row col re im` lines, sorted by row then column."""
        coo = sparse.coo_matrix(matrix)
        order = np.lexsort((coo.col, coo.row))
        values = coo.data.astype(complex)
        lines = [f"# {matrix.shape[0]} {matrix.shape[1]} {coo.nnz}"]
        for k in order:
            z = values[k]
            lines.append(f"{int(coo.row[k])} {int(coo.col[k])} {float(z.real)!r} {float(z.imag)!r}")
        write_text_atomic(path, "\n".join(lines) + "\n")
        logger.info(f"Exported {coo.nnz} entries to {path}")
