import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiralqed.circuit import DeviceParams, build_capacitance_matrix
from chiralqed.errors import SingularKernel
from chiralqed.scattering import (
    CouplingModel, alpha_vector, bandwidth, callable_curve, circulator_fidelity, coupling_amplitudes,
    coupling_model, decay_rates, fidelity_curve, frequency_grid, peak, resolve_design_frequency, s_matrix,
    self_energy, to_mhz,
)
from chiralqed.spectrum import SpectralData, solve_spectrum

TWO_PI = 2 * math.pi


def synthetic(gaps_GHz, eta):
    gaps = TWO_PI * np.asarray(gaps_GHz, float)
    eta = np.asarray(eta, complex)
    return SpectralData(e_ground=0.0, e_n=gaps, omega_0n=gaps / TWO_PI, eta=eta,
                        cpb_weight=np.zeros(gaps.size), ground=np.zeros(1), vectors=np.zeros((1, gaps.size)))


def model(amplitude, separation):
    return CouplingModel(amplitude=np.asarray(amplitude, float), separation=separation, params=DeviceParams())


def unitarity_error(S):
    eye = np.eye(2)
    return np.abs(np.einsum("...ji,...jk->...ik", S.conj(), S) - eye).max()


@pytest.fixture(scope="module")
def nominal():
    p = resolve_design_frequency(DeviceParams())
    s = solve_spectrum(p)
    return p, s, coupling_model(p)


@pytest.fixture(scope="module")
def nominal_curve(nominal):
    _, s, cm = nominal
    return fidelity_curve(s, cm, frequency_grid(s.omega_0n[:2], 0.3, 2001))


def test_no_coupling_is_identity():
    s = synthetic([5.0, 6.0], np.ones((4, 2)))
    pt = s_matrix(s, model(np.zeros((2, 4)), 10.0), TWO_PI * 5.3)
    assert np.allclose(pt.S, np.eye(2))
    assert pt.F_R == 0.0 and pt.F_L == 0.0


def test_ideal_circulator_fidelity():
    f_r, f_l = circulator_fidelity(np.diag([-1.0, 1.0]))
    assert f_r == 1.0 and f_l == 0.0
    f_r, f_l = circulator_fidelity(np.diag([1.0, -1.0]))
    assert f_r == 0.0 and f_l == 1.0


def test_single_emitter_oracle():
    """One state coupled at one point: S++ = 1 - i G / (w - e + i G) with G = |u|^2."""
    a, eta, e = 0.05, 0.8, TWO_PI * 5.0
    amp = np.zeros((2, 4))
    amp[0, 2] = a
    s = synthetic([5.0], [[0], [0], [eta], [0]])
    cm = model(amp, 7.3)
    for w in e + np.linspace(-0.2, 0.2, 9):
        G = a**2 * w * eta**2
        expected = 1 - 1j * G / (w - e + 1j * G)
        S = s_matrix(s, cm, w).S
        assert S[0, 0] == pytest.approx(expected, abs=1e-12)
        assert S[1, 1] == pytest.approx(expected, abs=1e-12)
    assert abs(s_matrix(s, cm, e).S[0, 0]) < 1e-12


def test_destructive_interference_at_half_wave():
    k = 0.5
    amp = np.zeros((2, 4))
    amp[0, 2] = amp[1, 3] = 0.05
    s = synthetic([5.0, 6.0], [[0, 0], [0, 0], [0.3, 0.7j], [0.3, 0.7j]])
    cm = model(amp, math.pi / k)
    assert np.abs(alpha_vector(s, cm, k)).max() < 1e-15
    assert np.abs(alpha_vector(s, cm, -k)).max() < 1e-15


def test_single_channel_independent_of_direction():
    amp = np.zeros((2, 4))
    amp[0, 2] = 0.05
    s = synthetic([5.0, 6.0], [[0, 0], [0, 0], [0.3 - 0.2j, 0.7j], [0, 0]])
    cm = model(amp, 11.0)
    for k in (0.1, 0.4, 1.3):
        a = alpha_vector(s, cm, k)
        assert np.allclose(alpha_vector(s, cm, -k), a)
        assert np.all(np.abs(a) > 0)


def test_same_point_self_energy_is_dissipative():
    rng = np.random.default_rng(4)
    eta = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    s = synthetic([5.0, 5.5, 6.0], eta)
    sig = self_energy(s, model(rng.uniform(0, 0.05, (2, 4)), 0.0), 0.3)
    assert np.allclose(sig, sig.conj().T)
    assert np.linalg.eigvalsh(sig).min() > -1e-15
    assert np.linalg.matrix_rank(sig, tol=1e-12) == 1


def test_quarter_wave_cross_terms():
    amp = np.zeros((2, 4))
    amp[0, 2], amp[1, 3] = 0.03, 0.05
    s = synthetic([5.0], [[0], [0], [0.4], [0.6 + 0.1j]])
    k0 = 0.25
    cm = model(amp, (math.pi / 2) / k0)
    w = 3.0
    ul = 0.03 * math.sqrt(w) * 0.4
    ur = 0.05 * math.sqrt(w) * np.conj(0.6 + 0.1j)
    expected = abs(ul) ** 2 + abs(ur) ** 2 + 1j * (ul * np.conj(ur) + ur * np.conj(ul))
    assert self_energy(s, cm, k0, omega=w)[0, 0] == pytest.approx(expected, abs=1e-15)


def test_nominal_coupling_structure():
    p = DeviceParams()
    a = coupling_amplitudes(p, build_capacitance_matrix(p))
    # Same-side transmon dominates; the far transmon is reached only through both CPBs.
    assert a[0, 2] == a[0].max() and a[1, 3] == a[1].max()
    assert a[0, 3] < 0.01 * a[0, 2]
    assert np.allclose(a[0], a[1, [1, 0, 3, 2]])


def test_coupling_amplitude_value():
    p = DeviceParams()
    cap = build_capacitance_matrix(p)
    e, hbar = 1.602176634e-19, 6.62607015e-34 / TWO_PI
    expected = 2 * e * 50e-15 * cap.inv("l", "A") * math.sqrt(50 / (2 * hbar))
    assert coupling_amplitudes(p, cap)[0, 2] == pytest.approx(expected, rel=1e-12)


def test_rates_vanish_at_zero_frequency(nominal):
    _, _, cm = nominal
    assert np.all(cm.sqrt_rates(0.0) == 0)
    assert np.all(cm.sqrt_rates(1.0) >= 0)


def test_dark_state_linewidth(nominal):
    _, s, cm = nominal
    gamma = decay_rates(s, cm)
    assert to_mhz(gamma[1]) == pytest.approx(76.0, rel=0.30)


def test_nominal_unitarity(nominal_curve):
    S = nominal_curve.S
    assert np.abs(np.abs(S[:, 0, 0]) ** 2 + np.abs(S[:, 1, 0]) ** 2 - 1).max() < 1e-8
    assert unitarity_error(S) < 1e-8
    for f in (nominal_curve.F_R, nominal_curve.F_L):
        assert f.min() >= 0 and f.max() <= 1


def test_opposite_chirality(nominal, nominal_curve):
    _, s, _ = nominal
    f = nominal_curve.freq_GHz
    near1 = np.abs(f - s.omega_0n[0]) < 0.1
    near2 = np.abs(f - s.omega_0n[1]) < 0.1
    assert nominal_curve.F_L[near1].max() > nominal_curve.F_R[near1].max()
    assert nominal_curve.F_R[near2].max() > nominal_curve.F_L[near2].max()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), kept=st.integers(1, 5), d=st.floats(0.0, 40.0))
def test_random_models_are_unitary(seed, kept, d):
    rng = np.random.default_rng(seed)
    gaps = np.sort(rng.uniform(4.0, 7.0, kept))
    eta = rng.normal(size=(4, kept)) + 1j * rng.normal(size=(4, kept))
    s = synthetic(gaps, eta)
    cm = model(rng.uniform(0.001, 0.05, (2, 4)), d)
    grid = TWO_PI * np.linspace(3.9, 7.1, 101)
    curve = fidelity_curve(s, cm, grid)
    assert unitarity_error(curve.S) < 1e-8


def test_reciprocity_without_flux():
    p = resolve_design_frequency(DeviceParams(phi_ext=0.0))
    s = solve_spectrum(p)
    curve = fidelity_curve(s, coupling_model(p), frequency_grid(s.omega_0n[:2], 0.3, 401))
    assert np.abs(curve.F_R - curve.F_L).max() < 1e-8


def test_flux_inversion_swaps_chirality(nominal):
    p, s, cm = nominal
    pm = p.replace(phi_ext=-p.phi_ext)
    grid = frequency_grid(s.omega_0n[:2], 0.3, 401)
    plus = fidelity_curve(s, cm, grid)
    minus = fidelity_curve(solve_spectrum(pm), coupling_model(pm), grid)
    assert np.abs(plus.F_R - minus.F_L).max() < 1e-8
    assert np.abs(plus.F_L - minus.F_R).max() < 1e-8


def test_directionality_amplitudes(nominal, nominal_curve):
    _, s, cm = nominal
    w = nominal_curve.omega[17]
    kd = cm.phase(w)
    assert np.allclose(nominal_curve.lambda_plus[17], s.eta[0] + np.exp(1j * kd) * s.eta[1])
    assert np.allclose(nominal_curve.lambda_minus[17], s.eta[0] + np.exp(-1j * kd) * s.eta[1])


def test_singular_kernel():
    s = synthetic([5.0], np.ones((4, 1)))
    with pytest.raises(SingularKernel):
        s_matrix(s, model(np.zeros((2, 4)), 5.0), TWO_PI * 5.0)


def test_unsorted_grid_rejected(nominal):
    _, s, cm = nominal
    with pytest.raises(ValueError):
        fidelity_curve(s, cm, [33.0, 32.0])


def test_constant_curve_has_no_bandwidth():
    grid = np.linspace(30, 32, 101)
    curve = callable_curve(lambda w: (np.full_like(w, 0.5), np.full_like(w, 0.5)), grid)
    assert bandwidth(curve) == 0.0


@pytest.mark.parametrize("width_MHz", [5.0, 25.0, 80.0])
def test_lorentzian_squared_bandwidth(width_MHz):
    w0 = TWO_PI * 5.0
    width = TWO_PI * width_MHz * 1e-3

    def profile(w):
        f = 1.0 / (1.0 + (2 * (w - w0) / width) ** 2) ** 2
        return f, f

    curve = callable_curve(profile, frequency_grid([5.0], 0.5, 2001))
    expected = width * math.sqrt(1 / math.sqrt(0.9) - 1)
    assert bandwidth(curve, 0.9) == pytest.approx(expected, rel=1e-3)
    w_peak, f_peak = peak(curve)
    assert w_peak == pytest.approx(w0, abs=1e-6) and f_peak == pytest.approx(1.0, abs=1e-12)


def test_bandwidth_uses_region_around_peak():
    grid = np.linspace(0.0, 10.0, 1001)

    def two_bumps(w):
        f = 0.95 * np.exp(-((w - 3) ** 2) / 0.02) + 0.99 * np.exp(-((w - 7) ** 2) / 0.5)
        return f, f

    curve = callable_curve(two_bumps, grid)
    expected = 2 * math.sqrt(0.5 * math.log(0.99 / 0.9))
    assert bandwidth(curve, 0.9) == pytest.approx(expected, rel=1e-4)


def test_frequency_grid_union():
    g = frequency_grid([5.0, 5.2], 0.5, 11)
    assert np.all(np.diff(g) > 0)
    assert g[0] == pytest.approx(TWO_PI * 4.5) and g[-1] == pytest.approx(TWO_PI * 5.7)


def test_curve_csv(nominal, nominal_curve):
    lines = nominal_curve.to_csv().splitlines()
    assert lines[0] == "omega_GHz,ReS++,ImS++,ReS+-,ImS+-,ReS-+,ImS-+,ReS--,ImS--,F_R,F_L"
    assert len(lines) == nominal_curve.omega.size + 1
    assert len(nominal_curve.points()) == nominal_curve.omega.size
