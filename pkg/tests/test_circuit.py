import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiralqed.circuit import (
    CAPACITANCE_FIELDS, CPB_JOSEPHSON_FIELDS, DeviceParams, ToleranceSpec, band_edge, build_capacitance_matrix,
    capacitance_from_matrix, cell_length, charging_prefactor, sample_fabrication, waveguide_dispersion, wavenumber,
)
from chiralqed.errors import ConfigError, IllConditioned, NotPositiveDefinite, OutOfBand

E = 1.602176634e-19
H = 6.62607015e-34


def gauss_jordan_inverse(a):
    """Plain Gauss-Jordan elimination with partial pivoting, written without numpy.linalg."""
    n = len(a)
    m = [list(map(float, row)) + [1.0 if i == j else 0.0 for j in range(n)] for i, row in enumerate(a)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0.0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return np.array([row[n:] for row in m])


def test_headline_diagonal_uses_node_totals():
    cap = build_capacitance_matrix(DeviceParams())
    assert np.allclose(np.diag(cap.C) * 1e15, [150, 131, 3, 150, 131, 3])


def test_off_diagonal_layout():
    C = build_capacitance_matrix(DeviceParams()).C * 1e15
    assert C[0, 1] == pytest.approx(-100) and C[3, 4] == pytest.approx(-100)
    assert C[1, 2] == pytest.approx(-1) and C[4, 5] == pytest.approx(-1)
    assert C[2, 5] == pytest.approx(-1)
    assert C[0, 3] == 0 and C[1, 4] == 0 and C[0, 2] == 0
    assert np.allclose(C, C.T)


def test_bare_core_matrix():
    p = DeviceParams(c_dz=1, C_q_a=1, C_q_b=1, C_sigma_a=1, C_sigma_b=1, C_ab=1)
    cap = build_capacitance_matrix(p, bare_core=True)
    assert cap.nodes == ("l", "a", "r", "b")
    assert np.allclose(np.diag(cap.C) * 1e15, [2, 3, 2, 3])
    assert cap.C[1, 3] * 1e15 == pytest.approx(-1)


def test_decoupled_inverse_is_reciprocal():
    d = np.array([150.0, 131.0, 3.0, 150.0, 131.0, 3.0]) * 1e-15
    cap = capacitance_from_matrix(np.diag(d))
    assert np.allclose(cap.C_inv, np.diag(1 / d), rtol=1e-14)


def test_inverse_matches_gauss_jordan_oracle():
    cap = build_capacitance_matrix(DeviceParams())
    oracle = gauss_jordan_inverse((cap.C * 1e15).tolist()) * 1e15
    rel = np.abs(cap.C_inv - oracle).max() / np.abs(oracle).max()
    assert rel < 1e-12


def test_product_with_inverse_is_identity():
    cap = build_capacitance_matrix(DeviceParams())
    assert np.abs(cap.C @ cap.C_inv - np.eye(6)).max() < 1e-12


def test_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        capacitance_from_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]) * 1e-15, ("x", "y"))


def test_ill_conditioned():
    with pytest.raises(IllConditioned):
        capacitance_from_matrix(np.diag([1.0, 1e-13]) * 1e-15, ("x", "y"))


def test_charging_prefactor_value():
    expected = 2 * E**2 / (H * 1e-15) / 1e9
    assert expected == pytest.approx(77.48, abs=0.01)
    assert charging_prefactor() * 1e15 == pytest.approx(expected, rel=1e-12)


def test_charging_prefactor_scaling():
    one = charging_prefactor() / 1e-15
    assert charging_prefactor() / 2e-15 == pytest.approx(one / 2)
    assert charging_prefactor() / 1e300 < 1e-250


@pytest.mark.parametrize("name", CAPACITANCE_FIELDS + CPB_JOSEPHSON_FIELDS + ("E_Jt_A", "E_Jt_B"))
def test_nonpositive_constants_rejected(name):
    with pytest.raises(ConfigError):
        DeviceParams(**{name: 0.0})


@pytest.mark.parametrize("k0d", [0.0, math.pi, -0.1, 4.0])
def test_k0d_range(k0d):
    with pytest.raises(ConfigError):
        DeviceParams(k0d_design=k0d)


def test_tolerance_bounds():
    with pytest.raises(ConfigError):
        ToleranceSpec(cap_rel_halfwidth=0.5)
    with pytest.raises(ConfigError):
        ToleranceSpec(ej_rel_halfwidth=-0.1)


def test_device_roundtrip():
    p = DeviceParams(n_g_a=0.61, design_frequency=5.2)
    assert DeviceParams.from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        DeviceParams.from_dict({"bogus": 1})


def test_zero_tolerance_samples_are_nominal():
    p = DeviceParams()
    for s in sample_fabrication(p, ToleranceSpec(0.0, 0.0, seed=3), 5):
        assert s == p


def test_samples_respect_bounds_and_fix_transmon_ej():
    p = DeviceParams()
    samples = sample_fabrication(p, ToleranceSpec(seed=7), 150)
    assert len(samples) == 150
    for s in samples:
        for name in CAPACITANCE_FIELDS:
            assert abs(getattr(s, name) / getattr(p, name) - 1) <= 0.01
        for name in CPB_JOSEPHSON_FIELDS:
            assert abs(getattr(s, name) / getattr(p, name) - 1) <= 0.10
        assert s.E_Jt_A == p.E_Jt_A and s.E_Jt_B == p.E_Jt_B
        assert s.phi_ext == p.phi_ext and s.n_g_a == p.n_g_a


def test_sample_means_within_three_standard_errors():
    p = DeviceParams()
    n = 10_000
    samples = sample_fabrication(p, ToleranceSpec(seed=11), n)
    for name, hw in [(f, 0.01) for f in CAPACITANCE_FIELDS] + [(f, 0.10) for f in CPB_JOSEPHSON_FIELDS]:
        vals = np.array([getattr(s, name) for s in samples])
        nominal = getattr(p, name)
        se = nominal * hw / math.sqrt(3) / math.sqrt(n)
        assert abs(vals.mean() - nominal) < 3 * se, name


def test_samples_reproducible_and_prefix_stable():
    p = DeviceParams()
    a = sample_fabrication(p, ToleranceSpec(seed=5), 10)
    b = sample_fabrication(p, ToleranceSpec(seed=5), 10)
    c = sample_fabrication(p, ToleranceSpec(seed=5), 4)
    d = sample_fabrication(p, ToleranceSpec(seed=6), 4)
    assert a == b
    assert a[:4] == c
    assert a[:4] != d


def test_sample_count_must_be_positive():
    with pytest.raises(ValueError):
        sample_fabrication(DeviceParams(), ToleranceSpec(), 0)


@settings(max_examples=1000, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_fabricated_capacitance_matrices_are_spd(seed):
    s = sample_fabrication(DeviceParams(), ToleranceSpec(seed=seed), 1)[0]
    cap = build_capacitance_matrix(s)
    assert np.allclose(cap.C, cap.C.T)
    assert np.linalg.eigvalsh(cap.C).min() > 0


def test_cell_length_for_headline_device():
    assert cell_length(DeviceParams()) == pytest.approx(300e-6)


def test_dispersion_at_zero_and_small_k():
    p = DeviceParams()
    assert waveguide_dispersion(0.0, p) == 0.0
    dz = cell_length(p)
    for k in np.linspace(0.001, 0.099, 20):
        linear = p.v_g * k / dz * 1e-9
        assert waveguide_dispersion(k, p) == pytest.approx(linear, rel=5e-3)


def test_dispersion_symmetric_and_monotone():
    p = DeviceParams()
    k = np.linspace(0, math.pi, 500)
    w = waveguide_dispersion(k, p)
    assert np.all(np.diff(w) > 0)
    assert np.allclose(waveguide_dispersion(-k, p), w)
    assert w[-1] == pytest.approx(band_edge(p))


@given(st.floats(min_value=1e-6, max_value=math.pi - 1e-6))
def test_dispersion_round_trip(k):
    p = DeviceParams()
    assert wavenumber(waveguide_dispersion(k, p), p) == pytest.approx(k, abs=1e-10 if k < 3.1 else 1e-6)


def test_out_of_band():
    p = DeviceParams()
    with pytest.raises(OutOfBand):
        wavenumber(1.01 * band_edge(p), p)
    with pytest.raises(OutOfBand):
        waveguide_dispersion(3.2, p)
