"""
Tests for analytic fields, potentials and the field text format.
"""
import math

import numpy as np
import pytest

from app.errors import InvalidArgumentError


def test_smooth_field_is_nowhere_vanishing_and_seam_continuous(any_mesh, fields):
    f = fields.smooth(any_mesh)
    assert np.abs(f).min() >= 1.5 - 1e-12
    assert np.abs(f).max() <= 2.5 + 1e-12


def test_random_nonvanishing_is_seeded(disk, fields):
    first = fields.random_nonvanishing(disk, np.random.default_rng(3))
    again = fields.random_nonvanishing(disk, np.random.default_rng(3))
    np.testing.assert_array_equal(first, again)
    assert np.abs(first).min() >= 0.5


def test_winding_field_needs_a_period_or_a_plane(meshes, fields):
    with pytest.raises(InvalidArgumentError):
        fields.winding(meshes.gen_interval(10), 1)


def test_gaussian_chirp(meshes, fields):
    mesh = meshes.gen_interval(21, 2.0)
    f = fields.gaussian_chirp(mesh, decay=1.0, chirp=2.0)
    assert f[10] == pytest.approx(1.0)
    assert f[0] == pytest.approx(math.exp(-1.0) * np.exp(2.0j))


def test_component_phase_needs_a_phase_per_component(meshes, fields):
    mesh = meshes.generate("two-disks", {"rings": 2, "radius": 1.0, "gap": 0.5})
    with pytest.raises(InvalidArgumentError):
        fields.component_phase(mesh, [0.3])
    f = fields.component_phase(mesh, [0.3, -1.0])
    np.testing.assert_allclose(np.angle(f[mesh.component_labels == 0]), 0.3)
    np.testing.assert_allclose(np.angle(f[mesh.component_labels == 1]), -1.0)


def test_bump_potential_support(disk, fields):
    v = fields.bump_potential(disk, 2.0j, 0.5)
    r = np.linalg.norm(disk.vertices, axis=1)
    assert np.all(v[r > 0.51] == 0)
    assert v[np.argmin(r)] == pytest.approx(2.0j)
    assert np.all(v.real == 0)


def test_bump_potential_preconditions(disk, fields):
    with pytest.raises(InvalidArgumentError):
        fields.bump_potential(disk, 1.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        fields.bump_potential(disk, 1.0, 0.5, center=[0.0])


def test_field_text_round_trip(tmp_path, disk, fields, rng):
    f = fields.random_complex(disk, rng)
    path = tmp_path / "f.txt"
    fields.save(f, str(path))
    np.testing.assert_array_equal(fields.load(str(path), disk.n_vertices), f)



def test_field_text_holds_plain_numbers(fields):
    text = fields.dumps(np.array([0.1 + 0.2j, -3.0, 1e-300j]))
    assert text == "0 0.1 0.2\n1 -3.0 0.0\n2 0.0 1e-300\n"
    np.testing.assert_array_equal(fields.loads(text), [0.1 + 0.2j, -3.0, 1e-300j])

def test_field_text_rejects_gaps_and_duplicates(fields):
    with pytest.raises(InvalidArgumentError):
        fields.loads("0 1.0 0.0\n2 1.0 0.0\n")
    with pytest.raises(InvalidArgumentError):
        fields.loads("0 1.0 0.0\n0 2.0 0.0\n")
    with pytest.raises(InvalidArgumentError):
        fields.loads("0 1.0\n")
    with pytest.raises(InvalidArgumentError):
        fields.loads("# header\n0 1.0 0.0\n1 1.0 0.0\n", n_vertices=3)
