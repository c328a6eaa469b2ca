"""
Tests for the vanishing theorem, the phase-constancy theorem and the circle counterexample.
"""
import math

import numpy as np
import pytest

from app.errors import InvalidArgumentError
from app.services.identity_service import observed_orders


def test_designed_kernels_never_meet_the_vanishing_hypotheses(disk, operators, identities, fields, theorems, rng):
    a = operators.assemble_stiffness(disk)
    mass = operators.assemble_mass(disk)
    for _ in range(20):
        f = fields.random_nonvanishing(disk, rng)
        system = operators.assemble_schrodinger(a, mass, identities.inverse_design_potential(a, mass, f))
        verdict = theorems.theorem1_check(disk, system, f, 0.0)
        # a nowhere-vanishing kernel element needs Im V of both signs, or Im V == 0
        assert not verdict.hypotheses_satisfied


def test_real_potential_fails_the_nontrivial_hypothesis(disk, operators, theorems):
    system = operators.build_system(disk, 1.0)
    verdict = theorems.theorem1_check(disk, system, np.ones(disk.n_vertices), 0.0)
    assert not verdict.hypotheses_satisfied
    assert not verdict.conclusion_verified
    assert any("identically" in line for line in verdict.diagnostics)


def test_signed_bump_is_verified(disk, operators, fields, spectral, theorems):
    system = operators.build_system(disk, fields.bump_potential(disk, 1.0j, 0.5))
    result = spectral.kernel_vector(system)
    verdict = theorems.theorem1_check(disk, system, result.f, result.relative_sigma)
    assert verdict.hypotheses_satisfied
    assert verdict.conclusion_verified
    assert verdict.witness_vertex is not None
    assert np.imag(system.potential)[verdict.witness_vertex] > 0


def test_vacuous_verdict_when_there_is_no_kernel(disk, operators, fields, theorems):
    system = operators.build_system(disk, fields.bump_potential(disk, 1.0j, 0.5))
    verdict = theorems.theorem1_check(disk, system, np.ones(disk.n_vertices), 0.5)
    assert verdict.conclusion_verified
    assert any("vacuously" in line for line in verdict.diagnostics)


def test_claimed_kernel_that_does_not_vanish_is_rejected(disk, operators, fields, theorems):
    system = operators.build_system(disk, fields.bump_potential(disk, 1.0j, 0.5))
    verdict = theorems.theorem1_check(disk, system, np.ones(disk.n_vertices), 0.0)
    assert verdict.hypotheses_satisfied
    assert not verdict.conclusion_verified
    assert verdict.witness_ratio == pytest.approx(1.0)


def test_interval_eigenmode_has_constant_phase(meshes, operators, fields, spectral, theorems):
    mesh = meshes.gen_interval(101, 1.0)
    system = operators.build_system(mesh, fields.bump_potential(mesh, 3.0, 0.3))
    v_min = float(np.real(system.potential).min())
    result = spectral.eigenpair_nearest(system, v_min - 1.0)
    shifted = operators.shift_potential(system, result.eigenvalue.real)
    verdict, report = theorems.theorem2_check(mesh, shifted, result.f)
    assert verdict.hypotheses_satisfied
    assert verdict.conclusion_verified
    assert verdict.globally_constant is True
    assert report.global_log_exists


def test_two_components_keep_separate_phases(meshes, operators, identities, fields, theorems):
    mesh = meshes.generate("two-disks", {"rings": 4, "radius": 1.0, "gap": 0.5})
    f = fields.component_phase(mesh, [0.0, 1.5])
    a = operators.assemble_stiffness(mesh)
    mass = operators.assemble_mass(mesh)
    system = operators.assemble_schrodinger(a, mass, identities.inverse_design_potential(a, mass, f))
    verdict, report = theorems.theorem2_check(mesh, system, f)
    assert verdict.hypotheses_satisfied
    assert verdict.conclusion_verified
    assert verdict.globally_constant is None
    assert len(verdict.phase_ranges) == 2


def test_complex_potential_fails_the_real_hypothesis(disk, operators, fields, theorems):
    system = operators.build_system(disk, 1.0 + 0.5j)
    verdict, _ = theorems.theorem2_check(disk, system, fields.smooth(disk))
    assert not verdict.hypotheses_satisfied
    assert not verdict.conclusion_verified


def test_vanishing_field_fails_theorem2_hypotheses(meshes, operators, theorems):
    mesh = meshes.gen_interval(11, 1.0)
    system = operators.build_system(mesh, 0.0)
    verdict, report = theorems.theorem2_check(mesh, system, (mesh.vertices[:, 0] - 0.5).astype(complex))
    assert report is None
    assert not verdict.hypotheses_satisfied


def test_circle_counterexample(theorems):
    n = 64
    bundle = theorems.counterexample_circle(n)
    h = 2 * math.pi / n
    im_error, v_error = bundle.v_error
    assert im_error <= 1e-12 * (n / 12) ** 2
    np.testing.assert_allclose(bundle.potential.real, -(2 - 2 * math.cos(h)) / h ** 2, rtol=1e-12)
    assert v_error <= 1e-2
    assert bundle.kernel_residual <= 1e-13
    assert [w.winding for w in bundle.phase.windings] == [1]
    assert not bundle.phase.global_log_exists
    assert bundle.phase.obstruction.winding == 1
    assert np.abs(bundle.f).min() == pytest.approx(1.0)
    identity = bundle.identity
    assert identity.residual_l2 <= 1e-12 * max(identity.scale, identity.roundoff_scale)


def test_counterexample_obstructs_theorem2(theorems):
    bundle = theorems.counterexample_circle(48)
    verdict, _ = theorems.theorem2_check(bundle.mesh, bundle.system, bundle.f)
    assert not verdict.hypotheses_satisfied
    assert verdict.obstruction.winding == 1


def test_counterexample_potential_converges_at_second_order(theorems):
    errors, sizes = [], []
    for n in (64, 128, 256):
        bundle = theorems.counterexample_circle(n)
        errors.append(bundle.v_error[1])
        sizes.append(bundle.mesh.max_edge_length)
    orders = observed_orders(errors, sizes)
    assert all(1.9 <= o <= 2.1 for o in orders[1:])


def test_counterexample_on_a_larger_circle(theorems):
    bundle = theorems.counterexample_circle(96, radius=2.0)
    assert bundle.v_error[1] <= 1e-2 / 4


def test_counterexample_needs_twelve_vertices(theorems):
    with pytest.raises(InvalidArgumentError):
        theorems.counterexample_circle(8)


def test_disk_ground_state_with_real_bump_has_constant_phase(meshes, operators, fields, spectral, theorems):
    disk = meshes.gen_disk(6)
    system = operators.build_system(disk, fields.bump_potential(disk, 5.0, 0.5))
    result = spectral.eigenpair_nearest(system, float(np.real(system.potential).min()) - 1.0)
    assert result.converged
    shifted = operators.shift_potential(system, result.eigenvalue.real)
    verdict, report = theorems.theorem2_check(disk, shifted, result.f)
    assert verdict.hypotheses_satisfied
    assert verdict.conclusion_verified
    assert verdict.globally_constant is True
    assert max(verdict.phase_ranges) <= 1e-8
