import logging
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu

from app.errors import InvalidArgumentError, SolverError
from app.models.systems import OracleSummary, SchrodingerSystem, SpectralResult

logger = logging.getLogger(__name__)

# Relative regularization applied when a factorization is exactly singular.
REGULARIZATION = 1e-12

# Relative size of the fixed-seed perturbation added to the all-ones start vector.
START_PERTURBATION = 1e-2

# Entries within this relative distance of max |f| count as tied for the phase pivot.
PIVOT_TIE = 1e-10


def fix_phase(f: np.ndarray) -> np.ndarray:
    """Rotate f so its entry of maximum modulus (lowest index on ties) is real positive."""
    modulus = np.abs(f)
    if modulus.size == 0:
        return f
    k = int(np.flatnonzero(modulus >= modulus.max() * (1.0 - PIVOT_TIE))[0])
    if f[k] == 0:
        return f
    rotated = f * (np.conj(f[k]) / np.abs(f[k]))
    rotated[k] = np.abs(f[k])
    return rotated


def _check_controls(tol: float, max_iter: int) -> None:
    if tol <= 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise InvalidArgumentError(f"max_iter must be at least 1, got {max_iter}")


def m_normalize(f: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Scale f so that sum_i M_ii |f_i|^2 = 1."""
    norm = np.sqrt(np.sum(mass * np.abs(f) ** 2))
    return f / norm if norm > 0 else f


class SpectralService:
    """
    Near-kernel vectors and nearby eigenpairs of the pencil (K, M).

    Everything works on the symmetrically scaled matrix
    B = M^{-1/2} (K - shift M) M^{-1/2}. The smallest singular pair of B
    is found by inverse iteration on B^H B, which needs one sparse LU
    factorization of B and two triangular solves per step.
    """

    def __init__(self, tol: float = 1e-10, max_iter: int = 300, seed: int = 0, max_oracle_size: int = 2000):
        """
        Initialize the spectral service.

        Args:
            tol: Convergence threshold on the change of the phase-fixed iterate
            max_iter: Iteration cap; the best iterate is returned unconverged past it
            seed: Seed of the start-vector perturbation
            max_oracle_size: Largest system the dense oracle accepts
        """
        _check_controls(tol, max_iter)
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed
        self.max_oracle_size = max_oracle_size

    def _scaled(self, system: SchrodingerSystem, shift: complex) -> Tuple[sparse.csc_matrix, np.ndarray]:
        d = 1.0 / np.sqrt(system.mass)
        shifted = system.operator
        if shift != 0:
            shifted = shifted - sparse.diags(shift * system.mass)
        scaled = (sparse.diags(d) @ shifted @ sparse.diags(d)).tocsc()
        if not np.any(scaled.data.imag):
            # splu needs contiguous index and data arrays; .real is a strided view
            scaled = sparse.csc_matrix(
                (np.ascontiguousarray(scaled.data.real), scaled.indices.copy(), scaled.indptr.copy()),
                shape=scaled.shape,
            )
        return scaled, d

    def _start_vector(self, n: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        x = np.ones(n) + START_PERTURBATION * rng.standard_normal(n)
        return x / np.linalg.norm(x)

    def _factorize(self, scaled: sparse.csc_matrix, scale: float):
        try:
            return splu(scaled), False
        except RuntimeError as e:
            eps = REGULARIZATION * scale
            logger.info(f"Exactly singular factorization ({e}); regularizing with eps={eps:.3e}")
            try:
                return splu((scaled + eps * sparse.identity(scaled.shape[0], format="csc")).tocsc()), True
            except RuntimeError as e2:
                raise SolverError(
                    "sparse factorization failed after regularization",
                    diagnostics={"size": scaled.shape[0], "norm_inf": scale, "epsilon": eps, "message": str(e2)},
                )

    def _iterate(
        self, system: SchrodingerSystem, shift: complex, tol: Optional[float], max_iter: Optional[int]
    ) -> SpectralResult:
        tol = self.tol if tol is None else tol
        max_iter = self.max_iter if max_iter is None else max_iter
        _check_controls(tol, max_iter)
        scaled, d = self._scaled(system, shift)
        n = scaled.shape[0]
        scale = float(abs(scaled).sum(axis=1).max()) if n else 0.0
        lu, regularized = self._factorize(scaled, scale)

        x = self._start_vector(n).astype(scaled.dtype)
        converged = False
        iterations = 0
        for iterations in range(1, max_iter + 1):
            y = lu.solve(x, trans="H")
            z = lu.solve(y)
            if not np.all(np.isfinite(z)):
                raise SolverError(
                    "inverse iteration produced non-finite values",
                    diagnostics={"size": n, "norm_inf": scale, "iteration": iterations, "regularized": regularized},
                )
            z = fix_phase(z / np.linalg.norm(z))
            change = float(np.linalg.norm(z - x))
            x = z
            if change <= tol:
                converged = True
                break

        sigma = float(np.linalg.norm(scaled @ x))
        f = fix_phase(m_normalize(d * x, system.mass))
        if not converged:
            logger.info(f"Inverse iteration stopped at max_iter={max_iter} (n={n}, shift={shift})")
        return SpectralResult(
            sigma=sigma,
            f=f,
            iterations=iterations,
            converged=converged,
            scale=scale,
            shift=shift,
            eigenvalue=self.rayleigh_quotient(system, f),
            regularized=regularized,
        )

    def rayleigh_quotient(self, system: SchrodingerSystem, f: np.ndarray) -> complex:
        """
        Eigenvalue estimate f^T K f / f^T M f (bilinear, the natural
        quotient of a complex symmetric pencil). Falls back to the
        Hermitian quotient when the bilinear denominator vanishes.
        """
        denominator = np.sum(system.mass * f * f)
        if abs(denominator) > 1e-8 * np.sum(system.mass * np.abs(f) ** 2):
            return complex(f @ (system.operator @ f) / denominator)
        return complex(np.vdot(f, system.operator @ f) / np.sum(system.mass * np.abs(f) ** 2))

    def kernel_vector(
        self, system: SchrodingerSystem, tol: Optional[float] = None, max_iter: Optional[int] = None
    ) -> SpectralResult:
        """
        Smallest singular pair of B = M^{-1/2} K M^{-1/2}.

        Args:
            system: Assembled Schrodinger system
            tol: Overrides the service tolerance for this call
            max_iter: Overrides the service iteration cap for this call

        Returns:
            SpectralResult with an M-normalized, phase-fixed f

        Raises:
            SolverError: If the factorization fails even after regularization
        """
        result = self._iterate(system, 0.0, tol, max_iter)
        logger.info(
            f"kernel_vector: n={system.size}, iterations={result.iterations}, converged={result.converged}"
        )
        return result

    def eigenpair_nearest(
        self,
        system: SchrodingerSystem,
        shift: complex,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
    ) -> SpectralResult:
        """
        Eigenpair of K f = lambda M f with lambda nearest `shift`.

        Args:
            system: Assembled Schrodinger system
            shift: Target eigenvalue
            tol: Overrides the service tolerance for this call
            max_iter: Overrides the service iteration cap for this call

        Returns:
            SpectralResult whose `eigenvalue` is the quotient of the returned f
        """
        result = self._iterate(system, shift, tol, max_iter)
        logger.info(f"eigenpair_nearest: shift={shift}, iterations={result.iterations}")
        return result

    def dense_oracle(self, system: SchrodingerSystem, shift: complex = 0.0) -> OracleSummary:
        """
        Full singular value decomposition of B, for cross-checking.

        Args:
            system: Assembled Schrodinger system with at most max_oracle_size vertices
            shift: Optional spectral shift

        Returns:
            OracleSummary with the smallest right singular vector mapped back to f

        Raises:
            InvalidArgumentError: If the system is larger than max_oracle_size
        """
        if system.size > self.max_oracle_size:
            raise InvalidArgumentError(
                f"dense oracle limited to n <= {self.max_oracle_size}, got n = {system.size}"
            )
        scaled, d = self._scaled(system, shift)
        try:
            _, s, vh = linalg.svd(scaled.toarray())
        except linalg.LinAlgError as e:
            raise SolverError("dense SVD did not converge", diagnostics={"size": system.size, "message": str(e)})
        v = np.conj(vh[-1])
        f = fix_phase(m_normalize(d * v, system.mass))
        return OracleSummary(sigma_min=float(s[-1]), sigma_max=float(s[0]), f=f, singular_values=s)
