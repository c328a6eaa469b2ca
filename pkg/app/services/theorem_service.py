import logging
import math
from typing import Optional, Tuple

import numpy as np

from app.config import Tolerances
from app.errors import DomainError, InvalidArgumentError, ResolutionError
from app.models.mesh import Mesh
from app.models.schemas import PhaseReport, TheoremVerdict
from app.models.systems import CounterexampleBundle, SchrodingerSystem
from app.services.identity_service import IdentityService
from app.services.mesh_service import MeshService
from app.services.operator_service import OperatorService
from app.services.phase_service import PhaseService

logger = logging.getLogger(__name__)

NEUMANN_NOTE = "discretization is Neumann-natural; Dirichlet data would contradict a nowhere-vanishing f"


class TheoremService:
    """Checkers for the two vanishing/phase theorems and the circle counterexample."""

    def __init__(
        self,
        tolerances: Optional[Tolerances] = None,
        operators: Optional[OperatorService] = None,
        identities: Optional[IdentityService] = None,
        phases: Optional[PhaseService] = None,
        meshes: Optional[MeshService] = None,
    ):
        self.tolerances = tolerances or Tolerances()
        self.operators = operators or OperatorService()
        self.identities = identities or IdentityService(self.operators)
        self.phases = phases or PhaseService(self.operators, jump_margin=self.tolerances.phase_jump)
        self.meshes = meshes or MeshService()

    def theorem1_check(
        self, mesh: Mesh, system: SchrodingerSystem, f: np.ndarray, sigma: float
    ) -> TheoremVerdict:
        """
        Signed, nontrivial Im V forces a kernel element to vanish somewhere.

        Checked in the stronger discrete form: for Kf = 0, Im(f^H K f) =
        sum_i Im(V_i)|f_i|^2 M_ii must vanish, so f vanishes on the support
        of a signed Im V. When sigma shows there is no kernel element at
        all, the conclusion holds vacuously.

        Args:
            mesh: Mesh
            system: Schrodinger system
            f: Candidate kernel vector (e.g. from kernel_vector)
            sigma: Relative smallest singular value reported for f

        Returns:
            TheoremVerdict for theorem 1
        """
        tol = self.tolerances
        f = np.asarray(f, dtype=complex)
        im_v = np.imag(system.potential)
        threshold = tol.roundoff * max(float(np.abs(system.potential).max()), 1.0)
        nontrivial = float(np.abs(im_v).max()) > threshold
        signed = bool(im_v.min() >= -threshold or im_v.max() <= threshold)
        diagnostics = [NEUMANN_NOTE]
        if not nontrivial:
            diagnostics.append("Im V vanishes identically: hypothesis 'not identically zero' fails")
        elif not signed:
            diagnostics.append(f"Im V takes both signs (min {im_v.min():.3e}, max {im_v.max():.3e})")
        if not (nontrivial and signed):
            return TheoremVerdict(
                theorem=1,
                hypotheses_satisfied=False,
                conclusion_verified=False,
                diagnostics=diagnostics,
                relative_sigma=sigma,
            )

        weights = system.mass * np.abs(f) ** 2
        balance = abs(float(np.sum(im_v * weights)))
        balance_scale = float(np.abs(im_v).max()) * float(np.sum(weights))
        support = np.flatnonzero(np.abs(im_v) > threshold)
        fmax = float(np.abs(f).max())
        ratios = np.abs(f[support]) / fmax if fmax > 0 else np.zeros(support.size)
        k = int(np.argmin(ratios))
        witness, ratio = int(support[k]), float(ratios[k])

        if sigma > tol.spectral:
            diagnostics.append(
                f"relative sigma {sigma:.3e} above {tol.spectral:.1e}: no kernel element, conclusion holds vacuously"
            )
            verified = True
        else:
            balance_ok = balance <= tol.vanishing * balance_scale
            vanishes = ratio <= tol.vanishing
            diagnostics.append(
                f"|sum Im(V)|f|^2 M| = {balance:.3e} (bound {tol.vanishing * balance_scale:.3e}); "
                f"min |f|/max|f| on supp Im V = {ratio:.3e} at vertex {witness}"
            )
            verified = bool(balance_ok and vanishes)
        return TheoremVerdict(
            theorem=1,
            hypotheses_satisfied=True,
            conclusion_verified=verified,
            diagnostics=diagnostics,
            relative_sigma=sigma,
            imaginary_balance=balance,
            witness_vertex=witness,
            witness_ratio=ratio,
        )

    def theorem2_check(
        self, mesh: Mesh, system: SchrodingerSystem, f: np.ndarray
    ) -> Tuple[TheoremVerdict, Optional[PhaseReport]]:
        """
        Real V and f = exp(phi) force Im(phi) to be locally constant.

        Hypotheses: V real, f nowhere vanishing, a global log exists. The
        conclusion is checked as per-component phase range and phase
        Dirichlet energy both below tolerance. A globally constant phase is
        only claimed on a connected mesh.

        Args:
            mesh: Mesh
            system: Schrodinger system with (numerically) real V
            f: Kernel element

        Returns:
            (verdict, phase report); the report is None if the phase cannot be resolved
        """
        tol = self.tolerances
        f = np.asarray(f, dtype=complex)
        diagnostics = [NEUMANN_NOTE]
        v_scale = max(float(np.abs(system.potential).max()), 1.0)
        im_max = float(np.abs(np.imag(system.potential)).max())
        real_v = im_max <= tol.roundoff * v_scale
        if not real_v:
            diagnostics.append(f"V is not real: max|Im V| = {im_max:.3e}")
        fmax = float(np.abs(f).max())
        min_ratio = float(np.abs(f).min()) / fmax if fmax > 0 else 0.0
        nonvanishing = min_ratio > tol.vanishing
        if not nonvanishing:
            diagnostics.append(f"f vanishes numerically: min|f|/max|f| = {min_ratio:.3e}")

        report = None
        if nonvanishing:
            try:
                report = self.phases.phase_report(mesh, f, system.stiffness)
            except (ResolutionError, DomainError) as e:
                diagnostics.append(f"phase not resolvable: {e}")
        if report is None:
            return (
                TheoremVerdict(theorem=2, hypotheses_satisfied=False, conclusion_verified=False, diagnostics=diagnostics),
                None,
            )

        if not report.global_log_exists:
            diagnostics.append(
                f"no global logarithm: cycle '{report.obstruction.label}' has winding {report.obstruction.winding}"
            )
        hypotheses = bool(real_v and nonvanishing and report.global_log_exists)
        ranges_ok = all(r <= tol.phase_range for r in report.component_ranges)
        energy_ok = report.phase_energy <= tol.phase_energy * report.energy_scale
        verified = bool(hypotheses and ranges_ok and energy_ok)
        globally_constant = None
        if mesh.n_components == 1:
            globally_constant = verified
        else:
            diagnostics.append(f"{mesh.n_components} components: phase constancy is per component")
        return (
            TheoremVerdict(
                theorem=2,
                hypotheses_satisfied=hypotheses,
                conclusion_verified=verified,
                diagnostics=diagnostics,
                phase_ranges=report.component_ranges,
                phase_energy=report.phase_energy,
                globally_constant=globally_constant,
                obstruction=report.obstruction,
            ),
            report,
        )

    def counterexample_circle(self, n: int, radius: float = 1.0) -> CounterexampleBundle:
        """
        f_j = exp(2 pi i j / n) on the circle with its designed potential.

        The designed V is real and close to -1/radius^2; on the unit circle it
        equals -(2 - 2cos h)/h^2. f is an exact discrete kernel element that
        vanishes nowhere and winds once, so its phase is not constant.

        Args:
            n: Vertex count (>= 12 keeps every phase jump well below pi)
            radius: Circle radius

        Returns:
            CounterexampleBundle
        """
        if n < 12:
            raise InvalidArgumentError(f"counterexample needs n >= 12, got {n}")
        mesh = self.meshes.gen_circle(n, radius)
        f = np.exp(2j * math.pi * np.arange(n) / n)
        stiffness = self.operators.assemble_stiffness(mesh)
        mass = self.operators.assemble_mass(mesh)
        potential = self.identities.inverse_design_potential(stiffness, mass, f)
        system = self.operators.assemble_schrodinger(stiffness, mass, potential)
        phase = self.phases.phase_report(mesh, f, stiffness)
        identity = self.identities.pointwise_identity_residual(mesh, system, f)
        bundle = CounterexampleBundle(
            mesh=mesh,
            f=f,
            potential=potential,
            system=system,
            phase=phase,
            identity=identity,
            kernel_residual=self.identities.kernel_residual(system, f),
        )
        logger.info(f"Circle counterexample n={n}: max|V+1/R^2|={bundle.v_error[1]:.3e}")
        return bundle

