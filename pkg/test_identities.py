"""
Tests for the divergence identity: pointwise residuals, exact balance,
the weak form against cutoffs and inverse-designed kernels.
"""
import logging
import math

import numpy as np
import pytest

from app.config import Tolerances
from app.errors import DomainError, InvalidArgumentError
from app.services.identity_service import observed_orders

TOL = Tolerances()


def _designed_pair(mesh, operators, identities, f):
    a = operators.assemble_stiffness(mesh)
    mass = operators.assemble_mass(mesh)
    v = identities.inverse_design_potential(a, mass, f)
    return operators.assemble_schrodinger(a, mass, v)


def test_exact_balance_vanishes_for_every_field(any_mesh, operators, identities, fields, rng):
    system = operators.build_system(any_mesh, 0.3 + 0.7j)
    f = fields.random_complex(any_mesh, rng)
    balance = identities.exact_balance(system, f)
    assert abs(balance) <= TOL.balance * identities.balance_scale(system, f)


def test_edge_flux_is_purely_imaginary(disk, operators, identities, fields, rng):
    system = operators.build_system(disk, 0.0)
    edges, values = identities.edge_flux(system, fields.random_complex(disk, rng))
    assert edges.shape == (values.size, 2)
    assert np.all(edges[:, 0] < edges[:, 1])
    assert np.abs(values.real).max() <= 1e-15 * np.abs(values).max()


def test_flux_vanishes_for_real_fields(disk, identities):
    f = 1.0 + disk.vertices[:, 0] ** 2
    assert np.abs(identities.flux(disk, f)).max() == 0.0


@pytest.mark.parametrize("generator, params", [("circle", {"n": 64, "radius": 1.0}), ("interval", {"n": 50})])
def test_one_dimensional_residual_is_exact(meshes, operators, identities, fields, generator, params):
    mesh = meshes.generate(generator, params)
    system = operators.build_system(mesh, 0.5 + 0.25j)
    report = identities.pointwise_identity_residual(mesh, system, fields.smooth(mesh))
    assert report.residual_l2 <= TOL.roundoff * max(report.scale, report.roundoff_scale)


def test_torus_residual_converges_at_second_order(meshes, operators, identities, fields):
    errors, sizes = [], []
    for n in (12, 24, 48):
        mesh = meshes.gen_flat_torus(n, n, 2 * math.pi, 2 * math.pi)
        system = operators.build_system(mesh, 0.5 + 0.25j)
        report = identities.pointwise_identity_residual(mesh, system, fields.smooth(mesh))
        errors.append(report.residual_l2)
        sizes.append(report.h)
    orders = observed_orders(errors, sizes)
    assert errors[2] < errors[1] < errors[0]
    low, high = TOL.order_window()
    assert low <= orders[-1] <= high


def test_disk_residual_decreases_below_second_order(meshes, operators, identities, fields):
    errors, sizes = [], []
    for mesh in meshes.refine_levels(meshes.gen_disk(4), 2):
        f = fields.smooth(mesh)
        report = identities.pointwise_identity_residual(mesh, operators.build_system(mesh, 0.5 + 0.25j), f)
        errors.append(report.residual_l2)
        sizes.append(report.h)
    orders = observed_orders(errors, sizes)
    assert errors[0] > errors[1] > errors[2]
    # boundary vertices and vertices on coarse edges keep an O(h) pointwise error
    assert 1.0 < orders[-1] < TOL.order_window()[0]


def test_pointwise_residual_rejects_a_vanishing_field(disk, operators, identities):
    system = operators.build_system(disk, 0.0)
    f = np.ones(disk.n_vertices, dtype=complex)
    f[3] = 0.0
    with pytest.raises(DomainError) as err:
        identities.pointwise_identity_residual(disk, system, f)
    assert err.value.vertex == 3


def test_inverse_design_gives_an_exact_kernel(any_mesh, operators, identities, fields, rng):
    f = fields.random_nonvanishing(any_mesh, rng)
    system = _designed_pair(any_mesh, operators, identities, f)
    assert identities.kernel_residual(system, f) <= 1e-13


def test_inverse_design_rejects_zeros(disk, operators, identities):
    f = np.ones(disk.n_vertices, dtype=complex)
    f[0] = 0.0
    with pytest.raises(DomainError):
        identities.inverse_design_potential(operators.assemble_stiffness(disk), operators.assemble_mass(disk), f)


def test_weak_identity_holds_for_kernel_pairs(disk, operators, identities, fields, rng):
    worst = 0.0
    for _ in range(50):
        f = fields.random_nonvanishing(disk, rng)
        system = _designed_pair(disk, operators, identities, f)
        scale = identities.identity_scale(system, f)
        for _ in range(20):
            chi = rng.uniform(0.0, 1.0, disk.n_vertices)
            worst = max(worst, identities.weak_identity(disk, system, f, chi)[2] / scale)
    assert worst <= TOL.roundoff


def test_weak_identity_defect_for_arbitrary_fields(disk, operators, identities, fields, rng):
    v = rng.standard_normal(disk.n_vertices) + 1j * rng.standard_normal(disk.n_vertices)
    system = operators.build_system(disk, v)
    f = fields.random_complex(disk, rng)
    chi = rng.uniform(0.0, 1.0, disk.n_vertices)
    lhs, rhs, gap = identities.weak_identity(disk, system, f, chi)
    defect = -np.sum(chi * 2j * np.imag(np.conj(f) * (system.operator @ f)))
    assert abs((lhs - rhs) - defect) <= TOL.roundoff * identities.identity_scale(system, f)
    assert gap == pytest.approx(abs(lhs - rhs))


def test_weak_identity_with_unit_cutoff_has_zero_lhs(disk, operators, identities, fields, rng):
    system = operators.build_system(disk, 1.0j)
    lhs, rhs, _ = identities.weak_identity(disk, system, fields.random_complex(disk, rng), np.ones(disk.n_vertices))
    assert lhs == 0
    assert rhs.real == 0


@pytest.mark.parametrize(
    "chi",
    [
        lambda n: np.ones(n - 1),
        lambda n: np.full(n, 0.5 + 0.1j),
        lambda n: np.full(n, 1.5),
        lambda n: np.full(n, -0.1),
    ],
)
def test_weak_identity_rejects_bad_cutoffs(disk, operators, identities, chi):
    system = operators.build_system(disk, 0.0)
    with pytest.raises(InvalidArgumentError):
        identities.weak_identity(disk, system, np.ones(disk.n_vertices), chi(disk.n_vertices))


def test_cutoff_family_shape_and_gradient_bound(meshes, identities):
    mesh = meshes.gen_interval(41, 2.0)
    chi_small, chi_wide = identities.cutoff_family(mesh, 0, [(0.5, 1.0), (1.0, 3.0)])
    assert chi_small[0] == 1.0
    assert chi_small[-1] == 0.0
    assert np.all((chi_small >= 0) & (chi_small <= 1))
    assert identities.gradient_sup(mesh, chi_small) == pytest.approx(2.0, rel=1e-12)
    assert identities.gradient_sup(mesh, chi_wide) == pytest.approx(0.5, rel=1e-12)


def test_cutoff_family_graph_metric(meshes, identities):
    mesh = meshes.gen_interval(11, 1.0)
    euclid = identities.distances(mesh, 5, "euclidean")
    graph = identities.distances(mesh, 5, "graph")
    np.testing.assert_allclose(graph, euclid, atol=1e-12)


def test_cutoff_family_preconditions(disk, identities):
    with pytest.raises(InvalidArgumentError):
        identities.cutoff_family(disk, 0, [(1.0, 1.0)])
    with pytest.raises(InvalidArgumentError):
        identities.cutoff_family(disk, 0, [(0.1, 0.2)], metric="manhattan")
    with pytest.raises(InvalidArgumentError):
        identities.cutoff_family(disk, disk.n_vertices, [(0.1, 0.2)])


def test_cutoff_ramp_beyond_the_mesh_is_logged(meshes, identities, caplog):
    mesh = meshes.gen_interval(11, 1.0)
    with caplog.at_level(logging.WARNING, logger="app.services.identity_service"):
        identities.cutoff_family(mesh, 0, [(0.1, 0.5)])
        assert "exceeds the mesh extent" not in caplog.text
        (chi,) = identities.cutoff_family(mesh, 0, [(0.5, 4.0)])
    assert "exceeds the mesh extent" in caplog.text
    assert chi.min() > 0.0


def test_cutoff_series_decreases_to_the_balance(meshes, operators, identities, fields):
    mesh = meshes.gen_strip(101, 6, 20.0, 1.0)
    f = fields.gaussian_chirp(mesh, 0.5, 0.5)
    system = _designed_pair(mesh, operators, identities, f)
    center = int(np.argmin(np.linalg.norm(mesh.vertices - mesh.bounding_box().mean(axis=1), axis=1)))
    radii = [(p, p + 1.0) for p in (0.5, 1.0, 2.0, 3.0, 25.0)]
    family = identities.cutoff_family(mesh, center, radii)
    series = identities.cutoff_limit_experiment(mesh, system, f, family, radii)

    assert series.monotone
    assert len(series.rows) == 5
    assert np.all(family[-1] == 1.0)
    assert abs(series.rows[-1].integral) <= TOL.cutoff_final * series.scale
    assert abs(series.limit) <= TOL.roundoff * series.scale
    identity_scale = identities.identity_scale(system, f)
    assert max(row.gap for row in series.rows) <= TOL.roundoff * identity_scale
    assert series.l2_mass > 0
    assert series.gradient_energy > 0


def test_observed_orders():
    orders = observed_orders([4.0, 1.0, 0.0], [0.2, 0.1, 0.05])
    assert orders[0] is None
    assert orders[1] == pytest.approx(2.0)
    assert orders[2] is None
