"""
Example: the complete lab workflow in code
This walks through both theorems and the circle counterexample with the services directly.
"""
import numpy as np

from app.errors import LabError
from app.services.field_service import FieldService
from app.services.mesh_service import MeshService
from app.services.operator_service import OperatorService
from app.services.phase_service import PhaseService
from app.services.spectral_service import SpectralService
from app.services.theorem_service import TheoremService


class LabSession:
    """Helper class bundling the services one walkthrough needs."""

    def __init__(self, seed: int = 0):
        self.meshes = MeshService()
        self.operators = OperatorService()
        self.fields = FieldService()
        self.phases = PhaseService(self.operators)
        self.spectral = SpectralService(tol=1e-12, max_iter=500, seed=seed)
        self.theorems = TheoremService(operators=self.operators, phases=self.phases, meshes=self.meshes)

    def ground_state_kernel(self, mesh, potential):
        """Shift a real potential by its ground-state eigenvalue so the eigenvector is an exact kernel element."""
        system = self.operators.build_system(mesh, potential)
        shift = float(np.real(system.potential).min()) - 1.0
        result = self.spectral.eigenpair_nearest(system, shift)
        return self.operators.shift_potential(system, result.eigenvalue.real), result.f


def example_theorem1(lab: LabSession):
    """Signed imaginary bump on the disk."""
    print("=" * 70)
    print("THEOREM 1: SIGNED IMAGINARY POTENTIAL")
    print("=" * 70)

    mesh = lab.meshes.gen_disk(8)
    system = lab.operators.build_system(mesh, lab.fields.bump_potential(mesh, 1.0j, 0.5))
    result = lab.spectral.kernel_vector(system)
    verdict = lab.theorems.theorem1_check(mesh, system, result.f, result.relative_sigma)

    print(f"\n🔺 Disk with {mesh.n_vertices} vertices, V = i * bump(radius 0.5)")
    print(f"   Relative sigma: {result.relative_sigma:.3e} ({result.iterations} iterations)")
    print(f"   Hypotheses satisfied: {verdict.hypotheses_satisfied}")
    print(f"   Conclusion verified: {verdict.conclusion_verified}")
    for line in verdict.diagnostics:
        print(f"   - {line}")

    zeros = lab.phases.zero_locate(mesh, result.f)
    print(f"\n📍 Zero certificates of the near-kernel vector: {len(zeros)}")
    for z in zeros[:3]:
        print(f"   {z.kind} {z.index}: |f| = {z.modulus:.3e} at {np.round(z.location, 4).tolist()}")


def example_theorem2(lab: LabSession):
    """Real potential on the interval and on two disjoint disks."""
    print("\n" + "=" * 70)
    print("THEOREM 2: REAL POTENTIAL, CONSTANT PHASE")
    print("=" * 70)

    interval = lab.meshes.gen_interval(101)
    system, f = lab.ground_state_kernel(interval, lab.fields.bump_potential(interval, 3.0, 0.3))
    verdict, report = lab.theorems.theorem2_check(interval, system, f)
    print(f"\n📏 Interval ground state: verified={verdict.conclusion_verified}, "
          f"globally constant={verdict.globally_constant}")
    print(f"   Phase range: {report.component_ranges[0]:.3e}, phase energy: {report.phase_energy:.3e}")

    two = lab.meshes.generate("two-disks", {"rings": 4, "radius": 1.0, "gap": 0.5})
    field = lab.fields.component_phase(two, [0.0, 1.5])
    a = lab.operators.assemble_stiffness(two)
    mass = lab.operators.assemble_mass(two)
    designed = lab.operators.assemble_schrodinger(
        a, mass, lab.theorems.identities.inverse_design_potential(a, mass, field)
    )
    verdict, report = lab.theorems.theorem2_check(two, designed, field)
    print(f"\n🔵🔵 Two disks: verified={verdict.conclusion_verified}, "
          f"per-component ranges={[f'{r:.1e}' for r in report.component_ranges]}")
    print("   The phase is constant on each disk but differs between them.")


def example_counterexample(lab: LabSession):
    """exp(i theta) on the circle."""
    print("\n" + "=" * 70)
    print("COUNTEREXAMPLE: exp(i theta) ON THE CIRCLE")
    print("=" * 70)

    for n in (64, 128, 256):
        bundle = lab.theorems.counterexample_circle(n)
        im_v, v_error = bundle.v_error
        print(f"\n⭕ n = {n}: winding {bundle.phase.windings[0].winding}, "
              f"max|Im V| = {im_v:.1e}, max|V + 1| = {v_error:.3e}")

    verdict, _ = lab.theorems.theorem2_check(bundle.mesh, bundle.system, bundle.f)
    print(f"\n⚠️  Theorem 2 hypotheses satisfied: {verdict.hypotheses_satisfied}")
    print(f"   Obstruction: cycle '{verdict.obstruction.label}' with winding {verdict.obstruction.winding}")


if __name__ == "__main__":
    try:
        session = LabSession()
        example_theorem1(session)
        example_theorem2(session)
        example_counterexample(session)

        print("\n" + "=" * 70)
        print("WORKFLOW COMPLETE")
        print("=" * 70)
    except LabError as e:
        print(f"\n❌ Error: {e}")
        import traceback
        traceback.print_exc()
