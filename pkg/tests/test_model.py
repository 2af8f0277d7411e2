import numpy as np
import pytest

from multihedin.errors import DimensionMismatchError, InvalidLatticeError, UnsupportedLatticeError
from multihedin.model import (
    Boundary, ExternalFields, LatticeSpec, ModelSystem, SpeciesSpec, Statistics,
    build_coulomb, build_kinetic, build_onebody, scaled_interaction,
)

E = SpeciesSpec("e", 1.0, -1.0, Statistics.FERMION, 1, is_electron=True)
P = SpeciesSpec("p", 1836.0, 1.0, Statistics.FERMION, 1)


def test_coulomb_zero_coupling():
    assert not np.any(build_coulomb(LatticeSpec.uniform(5, coupling_scale=0.0)))


def test_coulomb_closed_form_entries():
    v = build_coulomb(LatticeSpec((0.0, 1.0), softening=1.0))
    assert v[0, 0] == 1.0
    assert v[0, 1] == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    np.testing.assert_array_equal(v, v.T)


def test_coulomb_rejects_zero_softening():
    with pytest.raises(InvalidLatticeError):
        build_coulomb(LatticeSpec((0.0, 1.0), softening=0.0))


def test_coulomb_periodic_translation_symmetry():
    v = build_coulomb(LatticeSpec.uniform(3, boundary=Boundary.PERIODIC))
    assert v[0, 1] == v[1, 2] == v[0, 2]


def test_lattice_validation():
    with pytest.raises(InvalidLatticeError):
        LatticeSpec((0.0, 0.0))
    with pytest.raises(UnsupportedLatticeError):
        build_kinetic(E, LatticeSpec((0.0, 1.0, 3.0)))


def test_kinetic_two_site_stencil():
    np.testing.assert_array_equal(build_kinetic(E, LatticeSpec.uniform(2)), [[1, -0.5], [-0.5, 1]])


def test_kinetic_heavy_limit():
    heavy = SpeciesSpec("n", 1e12, 1.0, Statistics.BOSON, 1)
    assert np.max(np.abs(build_kinetic(heavy, LatticeSpec.uniform(4)))) < 1e-11


def test_kinetic_periodic_spectrum():
    t = build_kinetic(E, LatticeSpec.uniform(4, boundary="periodic"))
    q = np.arange(4)
    np.testing.assert_allclose(np.linalg.eigvalsh(t), np.sort(1 - np.cos(2 * np.pi * q / 4)), atol=1e-13)


def test_onebody_fields():
    lat = LatticeSpec.uniform(2)
    zero = ExternalFields.zeros(1, 2)
    np.testing.assert_array_equal(build_onebody(E, lat, zero), build_kinetic(E, lat))
    shifted = build_onebody(E, lat, zero.shifted(0.3)) - build_kinetic(E, lat)
    np.testing.assert_allclose(shifted, -0.3 * np.eye(2), atol=1e-15)
    f = ExternalFields(phi=np.array([0.0, 1.0]), f=np.zeros((1, 2)))
    np.testing.assert_array_equal(np.diag(build_onebody(E, lat, f) - build_kinetic(E, lat)), [0.0, -1.0])


def test_onebody_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        build_onebody(E, LatticeSpec.uniform(2), ExternalFields(np.zeros(3), np.zeros((1, 3))))
    with pytest.raises(DimensionMismatchError):
        ModelSystem((E,), LatticeSpec.uniform(2), 1.0, ExternalFields(np.zeros(3), np.zeros((1, 3))))


def test_scaled_interaction_signs():
    v = build_coulomb(LatticeSpec.uniform(2))
    np.testing.assert_array_equal(scaled_interaction(0, 0, v, [E, P]), v)
    np.testing.assert_array_equal(scaled_interaction(0, 1, v, [E, P]), -v)
    assert not np.any(scaled_interaction(0, 1, build_coulomb(LatticeSpec.uniform(2, coupling_scale=0.0)), [E, P]))


def test_species_validation():
    with pytest.raises(ValueError):
        SpeciesSpec("x", 0.0, 1.0, "fermion", 1)
    with pytest.raises(ValueError):
        ModelSystem((E, E), LatticeSpec.uniform(2), 1.0)
