import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homopolymer.potentials import RadialField, RadialPotential, bump, unit_well


def test_unit_well_values_and_support():
    v = unit_well(3)
    assert v(np.array([0.0, 0.5, 1.0])) == pytest.approx([1, 1, 1])
    assert v(1.0001) == 0.0
    assert v.sup == 1.0
    assert v.integral() == pytest.approx(4 * math.pi / 3, rel=1e-12)


def test_bump_integral_matches_closed_form():
    # int_0^1 4 pi r^2 (1 - r^2)^2 dr = 4 pi * 8/105
    assert bump(3).integral() == pytest.approx(4 * math.pi * 8 / 105, rel=1e-10)


def test_constructor_validation():
    with pytest.raises(ValueError):
        RadialPotential([0, 1], [1, -1], 3)
    with pytest.raises(ValueError):
        RadialPotential([0.1, 1], [1, 1], 3)
    with pytest.raises(ValueError):
        RadialPotential([0, 1], [0, 0], 3)
    with pytest.raises(ValueError):
        unit_well(6)


@given(st.floats(0.0, 3.0))
def test_potential_is_even_and_nonnegative(r):
    v = bump(3, radius=2.0, height=0.7)
    assert v(r) >= 0
    assert v(-r) == v(r)


def test_scaled_and_dimension_change():
    v = unit_well(3)
    assert v.scaled(2.5)(0.3) == pytest.approx(2.5)
    assert v.with_dimension(5).integral() == pytest.approx(math.pi ** 2 * 8 / 15, rel=1e-12)


def test_cell_average_is_volume_weighted():
    v = unit_well(3)
    edges = np.array([0.0, 0.5, 0.9, 1.2, 2.0])
    avg = v.cell_average(edges)
    # shell [0.9, 1.2] is covered by the well on [0.9, 1]
    frac = (1 - 0.9 ** 3) / (1.2 ** 3 - 0.9 ** 3)
    assert avg == pytest.approx([1, 1, frac, 0], rel=1e-12)


def test_radial_field_integral():
    r = np.linspace(0, 12, 4001)
    f = RadialField(r, np.exp(-r ** 2 / 2), 3)
    assert f.integral() == pytest.approx((2 * math.pi) ** 1.5, rel=1e-6)
    assert set(f.to_dict()) == {"r", "value"}
