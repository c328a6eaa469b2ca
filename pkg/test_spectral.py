"""
Tests for near-kernel vectors, shifted eigenpairs and the dense oracle.
"""
import math

import numpy as np
import pytest

from app.errors import InvalidArgumentError
from app.services.identity_service import observed_orders
from app.services.spectral_service import SpectralService, fix_phase, m_normalize


def test_fix_phase_makes_largest_entry_real_positive():
    f = np.array([0.1 + 0.2j, -3.0j, 1.0 + 1.0j])
    fixed = fix_phase(f)
    assert fixed[1] == 3.0
    np.testing.assert_allclose(np.abs(fixed), np.abs(f))


def test_fix_phase_breaks_near_ties_at_the_first_index():
    f = np.array([1.0, 1.0 + 1e-14, 1.0]) * np.exp(0.3j)
    fixed = fix_phase(f)
    assert fixed[0].imag == 0.0
    assert fixed[0].real == pytest.approx(1.0, rel=1e-14)
    assert abs(fixed[1].imag) <= 1e-14


def test_fix_phase_of_an_empty_vector():
    assert fix_phase(np.zeros(0, dtype=complex)).size == 0


def test_m_normalize():
    mass = np.array([0.5, 1.0, 2.0])
    f = m_normalize(np.array([1.0, 2.0j, -1.0]), mass)
    assert np.sum(mass * np.abs(f) ** 2) == pytest.approx(1.0, rel=1e-14)


def test_kernel_of_free_laplacian_is_constant(disk, operators, spectral):
    system = operators.build_system(disk, 0.0)
    result = spectral.kernel_vector(system)
    assert result.relative_sigma <= 1e-12
    np.testing.assert_allclose(result.f, 1.0 / math.sqrt(disk.total_measure), rtol=1e-8)


def test_returned_vector_is_normalized_and_phase_fixed(disk, operators, fields, spectral):
    system = operators.build_system(disk, fields.bump_potential(disk, 4.0j, 0.6))
    result = spectral.kernel_vector(system)
    assert np.sum(system.mass * np.abs(result.f) ** 2) == pytest.approx(1.0, rel=1e-12)
    k = int(np.argmax(np.abs(result.f)))
    assert result.f[k].imag == 0.0
    assert result.f[k].real > 0


def test_interval_neumann_eigenvalue_matches_closed_form(meshes, operators, spectral):
    length = 1.0
    mesh = meshes.gen_interval(41, length)
    h = length / 40
    result = spectral.eigenpair_nearest(operators.build_system(mesh, 0.0), 9.0)
    assert result.converged
    exact = (2 - 2 * math.cos(math.pi * h / length)) / h ** 2
    assert result.eigenvalue.real == pytest.approx(exact, rel=1e-9)
    assert abs(result.eigenvalue.imag) <= 1e-12 * exact


def test_interval_eigenfunction_is_the_first_cosine(meshes, operators, fields, spectral):
    mesh = meshes.gen_interval(41, 1.0)
    result = spectral.eigenpair_nearest(operators.build_system(mesh, 0.0), 9.0)
    mode = fields.neumann_cosine(mesh, 1)
    overlap = abs(np.vdot(mode, result.f)) / (np.linalg.norm(mode) * np.linalg.norm(result.f))
    assert overlap == pytest.approx(1.0, abs=1e-10)


def test_interval_eigenvalue_converges_at_second_order(meshes, operators, spectral):
    errors, sizes = [], []
    for n in (21, 41, 81):
        mesh = meshes.gen_interval(n, 1.0)
        result = spectral.eigenpair_nearest(operators.build_system(mesh, 0.0), 9.0)
        errors.append(abs(result.eigenvalue.real - math.pi ** 2))
        sizes.append(mesh.max_edge_length)
    orders = observed_orders(errors, sizes)
    assert all(1.7 <= o <= 2.3 for o in orders[1:])


def test_dense_oracle_agrees_with_inverse_iteration(disk, operators, fields, spectral):
    system = operators.build_system(disk, fields.bump_potential(disk, 5.0j, 0.8))
    iterative = spectral.kernel_vector(system)
    oracle = spectral.dense_oracle(system)
    assert iterative.converged
    assert abs(iterative.sigma - oracle.sigma_min) <= 1e-8 * oracle.sigma_max
    overlap = abs(np.vdot(oracle.f, iterative.f)) / (np.linalg.norm(oracle.f) * np.linalg.norm(iterative.f))
    assert overlap == pytest.approx(1.0, abs=1e-6)
    assert oracle.condition >= 1.0


def test_signed_imaginary_bump_has_no_nowhere_vanishing_kernel(disk, operators, fields, spectral):
    system = operators.build_system(disk, fields.bump_potential(disk, 5.0j, 0.8))
    oracle = spectral.dense_oracle(system)
    support = np.flatnonzero(np.imag(system.potential) > 0)
    vanishing = np.abs(oracle.f[support]).min() / np.abs(oracle.f).max()
    assert oracle.relative_sigma >= 1e-6 or vanishing <= 1e-6


def test_dense_oracle_size_limit(disk, operators):
    small = SpectralService(max_oracle_size=10)
    with pytest.raises(InvalidArgumentError):
        small.dense_oracle(operators.build_system(disk, 0.0))


def test_service_preconditions():
    with pytest.raises(InvalidArgumentError):
        SpectralService(tol=0.0)
    with pytest.raises(InvalidArgumentError):
        SpectralService(max_iter=0)


def test_iteration_cap_returns_best_iterate(disk, operators, fields):
    capped = SpectralService(tol=1e-300, max_iter=3)
    result = capped.kernel_vector(operators.build_system(disk, fields.bump_potential(disk, 1.0j, 0.5)))
    assert not result.converged
    assert result.iterations == 3
    assert np.all(np.isfinite(result.f))


def test_rayleigh_quotient_is_bilinear(disk, operators, spectral):
    system = operators.build_system(disk, 2.0 + 1.0j)
    f = np.full(disk.n_vertices, 1.0 + 1.0j)
    assert spectral.rayleigh_quotient(system, f) == pytest.approx(2.0 + 1.0j, abs=1e-12)


def test_kernel_vector_on_a_real_system(disk, operators, fields, spectral):
    system = operators.build_system(disk, fields.bump_potential(disk, 2.0, 0.5))
    result = spectral.kernel_vector(system)
    assert result.converged
    assert np.all(np.isfinite(result.f))
    assert np.abs(np.imag(result.f)).max() <= 1e-8


def test_real_potential_eigenvector_is_real(meshes, operators, fields, spectral):
    mesh = meshes.gen_interval(61, 1.0)
    system = operators.build_system(mesh, fields.bump_potential(mesh, 3.0, 0.3))
    result = spectral.eigenpair_nearest(system, 9.0)
    assert result.converged
    assert np.abs(np.imag(result.f)).max() <= 1e-8
    assert abs(result.eigenvalue.imag) <= 1e-10 * abs(result.eigenvalue)


def test_circle_counterexample_is_a_numerical_kernel(theorems, spectral):
    bundle = theorems.counterexample_circle(64)
    result = spectral.kernel_vector(bundle.system)
    assert result.relative_sigma <= 1e-10


def test_imaginary_constant_potential_has_no_kernel(disk, operators, spectral):
    result = spectral.kernel_vector(operators.build_system(disk, 1.0j))
    assert result.relative_sigma > 1e-6
    # B = M^{-1/2} K M^{-1/2} + i I with K positive semidefinite
    assert result.sigma == pytest.approx(1.0, rel=1e-6)


def test_per_call_controls_override_the_service_defaults(disk, operators, fields):
    service = SpectralService(tol=1e-12, max_iter=500)
    system = operators.build_system(disk, fields.bump_potential(disk, 1.0j, 0.5))
    capped = service.kernel_vector(system, tol=1e-300, max_iter=2)
    assert not capped.converged
    assert capped.iterations == 2
    loose = service.eigenpair_nearest(system, 0.0, tol=2.5)
    assert loose.converged
    assert loose.iterations == 1
    assert service.tol == 1e-12 and service.max_iter == 500


@pytest.mark.parametrize("controls", [{"tol": 0.0}, {"tol": -1.0}, {"max_iter": 0}])
def test_invalid_per_call_controls(disk, operators, spectral, controls):
    system = operators.build_system(disk, 0.0)
    with pytest.raises(InvalidArgumentError):
        spectral.kernel_vector(system, **controls)
    with pytest.raises(InvalidArgumentError):
        spectral.eigenpair_nearest(system, 1.0, **controls)
