import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from app.errors import DomainError, InvalidArgumentError
from app.models.mesh import Mesh
from app.models.schemas import ComplexValue, CutoffRow, CutoffSeries, IdentityReport
from app.models.systems import SchrodingerSystem
from app.services.operator_service import OperatorService

logger = logging.getLogger(__name__)

# Slack on [0, 1] when validating cutoff values.
CUTOFF_SLACK = 1e-14


def require_nonvanishing(f: np.ndarray, what: str = "field") -> None:
    """Raise DomainError naming the first vertex where f is zero or not finite."""
    bad = np.flatnonzero(~np.isfinite(f) | (f == 0))
    if bad.size:
        vertex = int(bad[0])
        raise DomainError(f"{what} vanishes at vertex {vertex} (f = {complex(f[vertex])})", vertex=vertex)


def observed_orders(errors: Sequence[float], sizes: Sequence[float]) -> List[Optional[float]]:
    """
    Observed convergence orders log(e_k / e_{k+1}) / log(h_k / h_{k+1}).

    The first entry is None; an entry is None as well where either error is
    not positive.
    """
    orders: List[Optional[float]] = [None]
    for k in range(1, len(errors)):
        e0, e1, h0, h1 = errors[k - 1], errors[k], sizes[k - 1], sizes[k]
        if e0 > 0 and e1 > 0 and h0 > 0 and h1 > 0 and h0 != h1:
            orders.append(float(np.log(e0 / e1) / np.log(h0 / h1)))
        else:
            orders.append(None)
    return orders


def stiffness_norm(system: SchrodingerSystem) -> float:
    """Infinity norm (maximum absolute row sum) of A."""
    return float(abs(system.stiffness).sum(axis=1).max())


class IdentityService:
    """
    Divergence identity for f-bar grad f - f grad f-bar in three forms:
    pointwise (cell flux, convergent), edge pairing (exact under summation
    by parts) and tested against cutoffs.
    """

    def __init__(self, operators: Optional[OperatorService] = None):
        self.operators = operators or OperatorService()

    # Flux

    def flux(self, mesh: Mesh, f: np.ndarray, matrix: Optional[sparse.spmatrix] = None) -> np.ndarray:
        """
        Cell flux conj(f_c) grad f - f_c grad conj(f), f_c the vertex average over the cell.

        Args:
            mesh: Mesh
            f: Per-vertex field
            matrix: Precomputed gradient matrix, optional

        Returns:
            Complex array of shape (n_cells, dimension); exactly zero for real f
        """
        f = np.asarray(f)
        grad = self.operators.gradient(mesh, f, matrix)
        fc = f[mesh.cells].mean(axis=1)[:, None]
        return np.conj(fc) * grad - fc * np.conj(grad)

    def edge_flux(self, system: SchrodingerSystem, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Edge pairing w_ij (conj(f_i) f_j - f_i conj(f_j)) with w_ij = -A_ij, over i < j.

        Returns:
            (edges, values): (k, 2) vertex pairs and their purely imaginary pairings
        """
        upper = sparse.triu(system.stiffness, k=1).tocoo()
        i, j = upper.row, upper.col
        values = -upper.data * (np.conj(f[i]) * f[j] - f[i] * np.conj(f[j]))
        return np.column_stack([i, j]), values

    # Residuals and balances

    def pointwise_identity_residual(self, mesh: Mesh, system: SchrodingerSystem, f: np.ndarray) -> IdentityReport:
        """
        Compare div(flux) with -2i Im(conj(f) Lf) + 2i Im(V)|f|^2 vertex by vertex.

        Lf is the strong-form action M^{-1} K f. The identity only holds
        where f does not vanish, so a zero vertex is rejected.

        Args:
            mesh: Mesh
            system: Schrodinger system assembled on `mesh`
            f: Nowhere-vanishing field

        Returns:
            IdentityReport with residual norms and the raw exact balance

        Raises:
            DomainError: If f vanishes at some vertex
        """
        f = np.asarray(f, dtype=complex)
        require_nonvanishing(f)
        g = self.operators.gradient_matrix(mesh)
        lhs = self.operators.divergence(mesh, self.flux(mesh, f, g), system.mass, g)
        lf = system.apply_L(f)
        rhs = -2j * np.imag(np.conj(f) * lf) + 2j * np.imag(system.potential) * np.abs(f) ** 2
        residual = lhs - rhs
        report = IdentityReport(
            kind=mesh.kind,
            n_vertices=mesh.n_vertices,
            h=mesh.max_edge_length,
            residual_max=float(np.abs(residual).max()),
            residual_l2=float(np.sqrt(np.sum(system.mass * np.abs(residual) ** 2))),
            scale=float(np.sqrt(np.sum(system.mass * np.abs(rhs) ** 2))),
            roundoff_scale=self.roundoff_scale(system, f),
            exact_balance=ComplexValue.of(self.exact_balance(system, f)),
            lhs=lhs,
            rhs=rhs,
        )
        logger.info(f"Pointwise residual on {mesh.kind} (n={mesh.n_vertices}): l2={report.residual_l2:.3e}")
        return report

    def roundoff_scale(self, system: SchrodingerSystem, f: np.ndarray) -> float:
        """M-weighted L2 norm of |f| (|A| |f|) / M; rounding in Lf is relative to this, not to Lf itself."""
        modulus = np.abs(f)
        terms = modulus * (abs(system.stiffness) @ modulus) / system.mass
        return float(np.sqrt(np.sum(system.mass * terms ** 2)))

    def exact_balance(self, system: SchrodingerSystem, f: np.ndarray) -> complex:
        """sum_i [conj(f_i) (Af)_i - f_i (A conj f)_i]; zero up to roundoff for every f."""
        f = np.asarray(f, dtype=complex)
        a = system.stiffness
        return complex(np.sum(np.conj(f) * (a @ f) - f * (a @ np.conj(f))))

    def balance_scale(self, system: SchrodingerSystem, f: np.ndarray) -> float:
        """||A||_inf * ||f||^2, the size roundoff in exact_balance is measured against."""
        return stiffness_norm(system) * float(np.sum(np.abs(f) ** 2))

    def weak_identity(
        self, mesh: Mesh, system: SchrodingerSystem, f: np.ndarray, chi: np.ndarray
    ) -> Tuple[complex, complex, float]:
        """
        Test the identity against a cutoff chi.

        lhs = sum_{i<j} A_ij (chi_j - chi_i)(conj(f_i) f_j - f_i conj(f_j)) is
        the summation-by-parts form of -<grad chi, flux>; rhs = 2i sum_i
        Im(V_i)|f_i|^2 chi_i M_ii. The two differ by exactly
        -sum_i chi_i 2i Im(conj(f_i)(Kf)_i), which vanishes for kernel pairs.

        Args:
            mesh: Mesh
            system: Schrodinger system on `mesh`
            f: Per-vertex field (need not be a kernel element)
            chi: Real cutoff with values in [0, 1]

        Returns:
            (lhs, rhs, gap) with gap = |lhs - rhs|
        """
        chi = self._check_cutoff(mesh, chi)
        f = np.asarray(f, dtype=complex)
        upper = sparse.triu(system.stiffness, k=1).tocoo()
        i, j = upper.row, upper.col
        pairing = np.conj(f[i]) * f[j] - f[i] * np.conj(f[j])
        lhs = complex(np.sum(upper.data * (chi[j] - chi[i]) * pairing))
        rhs = complex(2j * np.sum(np.imag(system.potential) * np.abs(f) ** 2 * chi * system.mass))
        return lhs, rhs, abs(lhs - rhs)

    def identity_scale(self, system: SchrodingerSystem, f: np.ndarray) -> float:
        """||A||_inf ||f||^2 + sum_i M_ii |V_i| |f_i|^2, the size of either side of the weak identity."""
        f2 = np.abs(f) ** 2
        return self.balance_scale(system, f) + float(np.sum(system.mass * np.abs(system.potential) * f2))

    def _check_cutoff(self, mesh: Mesh, chi: np.ndarray) -> np.ndarray:
        chi = np.asarray(chi)
        if chi.shape != (mesh.n_vertices,):
            raise InvalidArgumentError(f"cutoff has shape {chi.shape}, mesh has {mesh.n_vertices} vertices")
        if np.iscomplexobj(chi):
            if np.any(chi.imag != 0):
                raise InvalidArgumentError("cutoff must be real-valued")
            chi = chi.real
        if chi.min() < -CUTOFF_SLACK or chi.max() > 1.0 + CUTOFF_SLACK:
            raise InvalidArgumentError(f"cutoff values must lie in [0, 1], got [{chi.min()}, {chi.max()}]")
        return chi.astype(float)

    # Cutoffs

    def distances(self, mesh: Mesh, center: int, metric: str = "euclidean") -> np.ndarray:
        """Distance of every vertex from `center`, straight-line (minimum image) or along mesh edges."""
        if not 0 <= center < mesh.n_vertices:
            raise InvalidArgumentError(f"center vertex {center} out of range")
        if metric == "euclidean":
            return np.linalg.norm(mesh.displacement(center, np.arange(mesh.n_vertices)), axis=1)
        if metric == "graph":
            e = mesh.edges
            weights = sparse.coo_matrix((mesh.edge_lengths, (e[:, 0], e[:, 1])), shape=(mesh.n_vertices,) * 2)
            return csgraph.dijkstra(weights.tocsr(), directed=False, indices=center)
        raise InvalidArgumentError(f"unknown metric '{metric}'")

    def cutoff_family(
        self,
        mesh: Mesh,
        center: int,
        radii: Sequence[Tuple[float, float]],
        metric: str = "euclidean",
    ) -> List[np.ndarray]:
        """
        Plateau-and-ramp cutoffs around a vertex.

        chi_n is 1 within distance plateau_n, falls linearly to 0 at ramp_n
        and stays 0 beyond, so its gradient is bounded by 1/(ramp_n - plateau_n).

        Args:
            mesh: Mesh
            center: Center vertex
            radii: (plateau, ramp) pairs with 0 <= plateau < ramp
            metric: "euclidean" or "graph"

        Returns:
            One real cutoff per radius pair
        """
        for plateau, ramp in radii:
            if not 0 <= plateau < ramp:
                raise InvalidArgumentError(f"cutoff radii need 0 <= plateau < ramp, got ({plateau}, {ramp})")
        d = self.distances(mesh, center, metric)
        extent = float(d[np.isfinite(d)].max())
        for plateau, ramp in radii:
            if ramp > extent:
                logger.warning(
                    f"Cutoff ramp {ramp} exceeds the mesh extent {extent:.6g} from vertex {center} "
                    f"(plateau {plateau}); the cutoff does not reach zero inside the mesh"
                )
        return [np.clip((ramp - d) / (ramp - plateau), 0.0, 1.0) for plateau, ramp in radii]

    def gradient_sup(self, mesh: Mesh, chi: np.ndarray, matrix: Optional[sparse.spmatrix] = None) -> float:
        """max over cells of |grad chi|."""
        grad = self.operators.gradient(mesh, np.asarray(chi, dtype=float), matrix)
        return float(np.linalg.norm(grad, axis=1).max())

    def cutoff_limit_experiment(
        self,
        mesh: Mesh,
        system: SchrodingerSystem,
        f: np.ndarray,
        family: Sequence[np.ndarray],
        radii: Sequence[Tuple[float, float]],
        roundoff: float = 1e-12,
    ) -> CutoffSeries:
        """
        Evaluate sum chi_n Im(V)|f|^2 M along a cutoff family widening towards chi == 1.

        Args:
            mesh: Mesh
            system: Schrodinger system, Kf = 0 up to roundoff
            f: Kernel field
            family: Cutoffs from cutoff_family
            radii: The (plateau, ramp) pairs the family was built from
            roundoff: Relative slack of the monotonicity test

        Returns:
            CutoffSeries with one row per cutoff and the chi == 1 limit
        """
        f = np.asarray(f, dtype=complex)
        density = np.imag(system.potential) * np.abs(f) ** 2 * system.mass
        scale = float(np.sum(np.abs(density)))
        g = self.operators.gradient_matrix(mesh)
        rows = []
        for n, (chi, (plateau, ramp)) in enumerate(zip(family, radii)):
            lhs, rhs, gap = self.weak_identity(mesh, system, f, chi)
            rows.append(
                CutoffRow(
                    index=n,
                    plateau=plateau,
                    ramp=ramp,
                    grad_sup=self.gradient_sup(mesh, chi, g),
                    integral=float(np.sum(chi * density)),
                    lhs=ComplexValue.of(lhs),
                    gap=gap,
                )
            )
        magnitudes = [abs(r.integral) for r in rows]
        slack = roundoff * scale
        monotone = all(b <= a + slack for a, b in zip(magnitudes, magnitudes[1:]))
        series = CutoffSeries(
            rows=rows,
            limit=float(np.sum(density)),
            scale=scale,
            monotone=monotone,
            l2_mass=float(np.sum(system.mass * np.abs(f) ** 2)),
            gradient_energy=float(np.real(np.vdot(f, system.stiffness @ f))),
        )
        logger.info(f"Cutoff series over {len(rows)} cutoffs: monotone={monotone}")
        return series

    # Exact kernels

    def inverse_design_potential(self, stiffness: sparse.spmatrix, mass: np.ndarray, f: np.ndarray) -> np.ndarray:
        """
        V_i = -(Af)_i / (M_ii f_i), so that (A + M diag(V)) f = 0.

        Args:
            stiffness: A
            mass: Lumped mass diagonal
            f: Nowhere-vanishing field

        Returns:
            Finite per-vertex potential

        Raises:
            DomainError: If f vanishes at some vertex
        """
        f = np.asarray(f, dtype=complex)
        require_nonvanishing(f)
        v = -(stiffness @ f) / (mass * f)
        if not np.all(np.isfinite(v)):
            vertex = int(np.flatnonzero(~np.isfinite(v))[0])
            raise DomainError(f"designed potential overflows at vertex {vertex}", vertex=vertex)
        return v

    def kernel_residual(self, system: SchrodingerSystem, f: np.ndarray) -> float:
        """||Kf|| / (||K||_inf ||f||)."""
        kf = system.operator @ f
        norm_k = float(abs(system.operator).sum(axis=1).max())
        denominator = norm_k * float(np.linalg.norm(f))
        return float(np.linalg.norm(kf)) / denominator if denominator > 0 else float(np.linalg.norm(kf))
