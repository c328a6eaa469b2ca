from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import sparse

from app.models.mesh import CycleLoop, Mesh
from app.models.schemas import IdentityReport, PhaseReport


@dataclass(frozen=True, eq=False)
class SchrodingerSystem:
    """
    Discrete weak form of L = -Delta_g + V.

    `stiffness` is A (represents -Delta_g, positive semidefinite), `mass`
    is the lumped diagonal of M, `potential` holds V per vertex and
    `operator` is K = A + M diag(V). K is complex symmetric: K^T = K.
    """

    stiffness: sparse.csr_matrix
    mass: np.ndarray
    potential: np.ndarray
    operator: sparse.csr_matrix

    @property
    def size(self) -> int:
        return int(self.mass.shape[0])

    def apply_L(self, f: np.ndarray) -> np.ndarray:
        """Strong-form action M^{-1} K f."""
        return (self.operator @ f) / self.mass


@dataclass(frozen=True, eq=False)
class SpectralResult:
    """Smallest singular pair of B = M^{-1/2} K M^{-1/2} (optionally shifted)."""

    sigma: float
    f: np.ndarray
    iterations: int
    converged: bool
    scale: float
    shift: complex = 0.0
    eigenvalue: Optional[complex] = None
    regularized: bool = False

    @property
    def relative_sigma(self) -> float:
        return self.sigma / self.scale if self.scale > 0 else self.sigma


@dataclass(frozen=True, eq=False)
class OracleSummary:
    """Dense singular value decomposition summary of B."""

    sigma_min: float
    sigma_max: float
    f: np.ndarray
    singular_values: np.ndarray

    @property
    def condition(self) -> float:
        return self.sigma_max / self.sigma_min if self.sigma_min > 0 else float("inf")

    @property
    def relative_sigma(self) -> float:
        return self.sigma_min / self.sigma_max if self.sigma_max > 0 else 0.0


@dataclass(frozen=True, eq=False)
class ComplexLogResult:
    """A branch of log f, or the cycle that obstructs one."""

    phi: Optional[np.ndarray]
    obstruction: Optional[CycleLoop] = None
    winding: int = 0
    tree_phase: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.phi is not None


@dataclass(frozen=True, eq=False)
class CounterexampleBundle:
    """Everything the circle counterexample produces, packaged for reporting."""

    mesh: Mesh
    f: np.ndarray
    potential: np.ndarray
    system: SchrodingerSystem
    phase: PhaseReport
    identity: IdentityReport
    kernel_residual: float

    @property
    def v_error(self) -> Tuple[float, float]:
        """(max |Im V|, max |V + 1/R^2|), R the circle radius; V tends to -1/R^2."""
        radius = self.mesh.periods[0] / (2.0 * np.pi)
        return float(np.abs(self.potential.imag).max()), float(np.abs(self.potential + radius ** -2).max())
