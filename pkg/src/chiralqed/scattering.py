"""Single-photon scattering off the interface and circulator figures of merit.

Probe frequencies are angular frequencies in rad/ns. Couplings are stored as
square roots of rates, ``sqrt(kappa/v_g)``, in sqrt(rad/ns), so that the
self-energy is a plain sum of products.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import constants
from scipy.optimize import minimize_scalar

from .circuit import (FEMTO, CapacitanceMatrix, DeviceParams, build_capacitance_matrix, waveguide_dispersion,
                      wavenumber)
from .errors import SingularKernel
from .hilbert import TruncationScheme
from .spectrum import CHANNELS, SpectralData, solve_spectrum

TWO_PI = 2.0 * math.pi
KERNEL_COND_LIMIT = 1e14
BISECT_TOL_GHZ = 1e-6


@dataclass(frozen=True)
class CouplingModel:
    """Waveguide couplings of each subsystem at the two contacts ``l`` (x = 0) and ``r`` (x = d).

    ``amplitude[xi, i] * sqrt(omega)`` is ``sqrt(kappa_{xi,i}(omega) / v_g)`` in
    sqrt(rad/ns) for a probe at ``omega`` rad/ns; rows are ``(l, r)`` and
    columns follow ``CHANNELS``.
    """

    amplitude: np.ndarray
    separation: float
    params: DeviceParams

    @property
    def positions(self) -> np.ndarray:
        return np.array([0.0, self.separation])

    def sqrt_rates(self, omega: float | np.ndarray) -> np.ndarray:
        """``sqrt(kappa/v_g)`` at angular frequency ``omega``; shape ``(..., 2, 4)``."""
        w = np.asarray(omega, dtype=float)
        return self.amplitude * np.sqrt(w)[..., None, None]

    def wavenumber(self, omega: float | np.ndarray) -> float | np.ndarray:
        return wavenumber(omega, self.params)

    def phase(self, omega: float | np.ndarray) -> float | np.ndarray:
        """Propagation phase ``k(omega) * d`` between the contacts."""
        return self.wavenumber(omega) * self.separation


def coupling_amplitudes(p: DeviceParams, cap: CapacitanceMatrix) -> np.ndarray:
    """``2e c_dz C_inv[xi, i] sqrt(Z0 / 2 hbar)`` converted to sqrt(rad/ns) per sqrt(rad/ns).

    Multiplying by ``sqrt(omega)`` (rad/ns) gives ``sqrt(kappa/v_g)`` in
    sqrt(rad/ns). Subsystems absent from ``cap`` get zero columns.
    """
    out = np.zeros((2, len(CHANNELS)))
    for r, node in enumerate(("l", "r")):
        for c, ch in enumerate(CHANNELS):
            if cap.has(ch):
                out[r, c] = 2.0 * constants.e * p.c_dz * FEMTO * cap.inv(node, ch)
    # omega in rad/ns brings sqrt(1e9) and the 1/s -> 1/ns rate change sqrt(1e-9); they cancel.
    return out * math.sqrt(p.Z0 / (2.0 * constants.hbar))


def contact_separation(p: DeviceParams) -> float:
    """Separation ``d`` in unit cells from ``k0d_design`` at the design frequency."""
    if p.design_frequency is None:
        raise ValueError("design_frequency is unresolved; see resolve_design_frequency")
    return p.k0d_design / wavenumber(TWO_PI * p.design_frequency, p)


def operating_level(bare_core: bool) -> int:
    """Index (1-based) of the level the device is designed around: the dark state, or the core level."""
    return 1 if bare_core else 2


def resolve_design_frequency(p: DeviceParams, t: TruncationScheme | None = None,
                             bare_core: bool = False) -> DeviceParams:
    """Return ``p`` with ``design_frequency`` set to its operating-level gap if it was unset."""
    if p.design_frequency is not None:
        return p
    s = solve_spectrum(p, t or TruncationScheme(), bare_core=bare_core)
    return p.replace(design_frequency=float(s.omega_0n[operating_level(bare_core) - 1]))


def coupling_model(p: DeviceParams, bare_core: bool = False, cap: CapacitanceMatrix | None = None) -> CouplingModel:
    cap = cap or build_capacitance_matrix(p, bare_core=bare_core)
    return CouplingModel(amplitude=coupling_amplitudes(p, cap), separation=contact_separation(p), params=p)


@dataclass(frozen=True)
class ScatteringPoint:
    """S-matrix ordered ``(+k, -k)`` and circulator fidelities at one probe frequency."""

    omega: float
    S: np.ndarray
    F_R: float
    F_L: float


def circulator_fidelity(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(F_R, F_L)`` from ``S`` of shape ``(..., 2, 2)``."""
    spp = S[..., 0, 0]
    smm = S[..., 1, 1]
    f_r = np.abs(1 - spp) ** 2 * np.abs(1 + smm) ** 2 / 16.0
    f_l = np.abs(1 + spp) ** 2 * np.abs(1 - smm) ** 2 / 16.0
    return f_r, f_l


def _channel_sums(s: SpectralData, cm: CouplingModel, omega: np.ndarray) -> np.ndarray:
    """``u[..., xi, n] = sum_i sqrt(kappa_{xi,i}/v_g) conj(eta[i, n])``."""
    return cm.sqrt_rates(omega) @ s.eta.conj()


def alpha_vector(s: SpectralData, cm: CouplingModel, k: float, omega: float | None = None) -> np.ndarray:
    """``alpha_m(k) = sum_{xi,i} exp(i k x_xi) sqrt(kappa_{xi,i}) conj(eta[i, m])``.

    ``k`` is the signed wavenumber; the coupling strength is taken at
    ``omega`` (defaults to the dispersion at ``|k|``).
    """
    if omega is None:
        omega = _dispersion(abs(k), cm)
    u = _channel_sums(s, cm, np.asarray(omega))
    return np.exp(1j * k * cm.positions) @ u


def _dispersion(k: float, cm: CouplingModel) -> float:
    return float(waveguide_dispersion(k, cm.params))


def self_energy(s: SpectralData, cm: CouplingModel, k0: float, omega: float | None = None) -> np.ndarray:
    """``Sigma_nm = sum_{xi,xi'} u[xi, n] exp(i k0 |x_xi - x_xi'|) conj(u[xi', m])``.

    Decay rates are ``gamma_0n = 2 Re Sigma_nn`` (rad/ns).
    """
    if k0 <= 0:
        raise ValueError("k0 must be positive")
    if omega is None:
        omega = _dispersion(k0, cm)
    u = _channel_sums(s, cm, np.asarray(omega))
    x = cm.positions
    ph = np.exp(1j * k0 * np.abs(x[:, None] - x[None, :]))
    return np.einsum("xn,xy,ym->nm", u, ph, u.conj())


def decay_rates(s: SpectralData, cm: CouplingModel, omega: float | None = None) -> np.ndarray:
    """``gamma_0n = 2 Re Sigma_nn`` in rad/ns, each evaluated at its own level unless ``omega`` is given."""
    out = np.empty(s.e_n.size)
    for n, w in enumerate(s.gaps):
        w_eval = w if omega is None else omega
        sig = self_energy(s, cm, float(cm.wavenumber(w_eval)), w_eval)
        out[n] = 2.0 * sig[n, n].real
    return out


def _s_batch(s: SpectralData, cm: CouplingModel, omega: np.ndarray) -> np.ndarray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    k = np.asarray(cm.wavenumber(omega))
    u = _channel_sums(s, cm, omega)  # (N, 2, K)
    x = cm.positions
    ph = np.exp(1j * k[:, None, None] * np.abs(x[:, None] - x[None, :])[None])
    sigma = np.einsum("wxn,wxy,wym->wnm", u, ph, u.conj())
    kernel = (omega[:, None] - s.gaps[None, :])[..., None] * np.eye(s.gaps.size) + 1j * sigma
    # Row equilibration: a nearly uncoupled level sitting on the grid is a
    # removable pole, only dependent rows make the kernel truly singular.
    scale = np.abs(kernel).max(axis=2)
    if np.any(scale == 0):
        raise SingularKernel("scattering kernel has a zero row")
    balanced = kernel / scale[..., None]
    cond = np.linalg.cond(balanced)
    if np.any(~np.isfinite(cond)) or np.any(cond > KERNEL_COND_LIMIT):
        raise SingularKernel("scattering kernel is numerically singular")
    R = np.linalg.inv(balanced) / scale[:, None, :]
    fwd = np.exp(1j * k[:, None] * x[None, :])  # exp(+ikx)
    ap = np.einsum("wx,wxn->wn", fwd, u)
    am = np.einsum("wx,wxn->wn", fwd.conj(), u)
    quad = lambda l, r: np.einsum("wn,wnm,wm->w", l.conj(), R, r)
    S = np.empty((omega.size, 2, 2), dtype=complex)
    S[:, 0, 0] = 1 - 1j * quad(ap, ap)
    S[:, 0, 1] = -1j * quad(ap, am)
    S[:, 1, 0] = -1j * quad(am, ap)
    S[:, 1, 1] = 1 - 1j * quad(am, am)
    return S


def s_matrix(s: SpectralData, cm: CouplingModel, omega: float) -> ScatteringPoint:
    """Scattering matrix and fidelities at probe frequency ``omega`` (rad/ns).

    ``S[0, 0] = 1 - i alpha(k)^+ K alpha(k)`` with the kernel
    ``K = [(omega - omega_0n) + i Sigma(k)]^-1``; the other entries follow with
    ``alpha(-k)`` on either side.
    """
    S = _s_batch(s, cm, np.array([omega]))[0]
    f_r, f_l = circulator_fidelity(S)
    return ScatteringPoint(omega=float(omega), S=S, F_R=float(f_r), F_L=float(f_l))


@dataclass
class FidelityCurve:
    """Fidelities over a sorted probe grid (rad/ns).

    ``evaluate`` maps an array of frequencies to ``(F_R, F_L)`` and is used to
    refine peaks and threshold crossings between grid points. ``lambda_plus``
    and ``lambda_minus`` are ``eta_a + exp(+-i k d) eta_b`` per frequency and state.
    """

    omega: np.ndarray
    F_R: np.ndarray
    F_L: np.ndarray
    S: np.ndarray | None = None
    lambda_plus: np.ndarray | None = None
    lambda_minus: np.ndarray | None = None
    evaluate: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = field(default=None, repr=False)

    @property
    def freq_GHz(self) -> np.ndarray:
        return self.omega / TWO_PI

    def fidelity(self, which: str) -> np.ndarray:
        return _pick(self.F_R, self.F_L, which)

    def points(self) -> list[ScatteringPoint]:
        if self.S is None:
            raise ValueError("curve was built without S-matrices")
        return [ScatteringPoint(float(w), S, float(r), float(l))
                for w, S, r, l in zip(self.omega, self.S, self.F_R, self.F_L)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega_GHz", "ReS++", "ImS++", "ReS+-", "ImS+-", "ReS-+", "ImS-+", "ReS--", "ImS--",
                    "F_R", "F_L"])
        for i, om in enumerate(self.omega):
            S = self.S[i]
            row = [f"{om / TWO_PI:.9f}"]
            for a, b in ((0, 0), (0, 1), (1, 0), (1, 1)):
                row += [f"{S[a, b].real:.12e}", f"{S[a, b].imag:.12e}"]
            w.writerow(row + [f"{self.F_R[i]:.12e}", f"{self.F_L[i]:.12e}"])
        return buf.getvalue()


def _pick(f_r, f_l, which: str):
    if which == "R":
        return f_r
    if which == "L":
        return f_l
    raise ValueError("which must be 'R' or 'L'")


def fidelity_curve(s: SpectralData, cm: CouplingModel, omega_grid) -> FidelityCurve:
    """Evaluate the S-matrix over a sorted grid of probe frequencies (rad/ns)."""
    omega = np.asarray(omega_grid, dtype=float)
    if omega.ndim != 1 or omega.size == 0:
        raise ValueError("omega_grid must be a nonempty 1-D array")
    if np.any(np.diff(omega) < 0):
        raise ValueError("omega_grid must be sorted")
    S = _s_batch(s, cm, omega)
    f_r, f_l = circulator_fidelity(S)
    kd = np.asarray(cm.phase(omega))
    eta_a, eta_b = s.eta[0], s.eta[1]
    lam_p = eta_a[None, :] + np.exp(1j * kd)[:, None] * eta_b[None, :]
    lam_m = eta_a[None, :] + np.exp(-1j * kd)[:, None] * eta_b[None, :]

    def evaluate(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return circulator_fidelity(_s_batch(s, cm, np.atleast_1d(w)))

    return FidelityCurve(omega=omega, F_R=f_r, F_L=f_l, S=S, lambda_plus=lam_p, lambda_minus=lam_m,
                         evaluate=evaluate)


def frequency_grid(centers_GHz, half_width_GHz: float = 0.5, points: int = 2001) -> np.ndarray:
    """Union of uniform windows ``center +- half_width`` (GHz), returned sorted in rad/ns."""
    parts = [np.linspace(c - half_width_GHz, c + half_width_GHz, points) for c in np.atleast_1d(centers_GHz)]
    grid = np.unique(np.concatenate(parts))
    grid = grid[grid > 0]
    return TWO_PI * grid


def _eval_one(curve: FidelityCurve, which: str, w: float) -> float:
    f_r, f_l = curve.evaluate(np.array([w]))
    return float(_pick(f_r, f_l, which)[0])


def peak(curve: FidelityCurve, which: str = "R") -> tuple[float, float]:
    """Refined global maximum ``(omega, F)`` of ``F_which``.

    The grid maximum brackets a bounded Brent search between its neighbours.
    """
    f = curve.fidelity(which)
    i = int(np.argmax(f))
    best_w, best_f = float(curve.omega[i]), float(f[i])
    if curve.evaluate is None or curve.omega.size < 3:
        return best_w, best_f
    lo = curve.omega[max(i - 1, 0)]
    hi = curve.omega[min(i + 1, curve.omega.size - 1)]
    if hi <= lo:
        return best_w, best_f
    res = minimize_scalar(lambda w: -_eval_one(curve, which, w), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-9})
    if -res.fun > best_f:
        return float(res.x), float(-res.fun)
    return best_w, best_f


def _crossing(curve: FidelityCurve, which: str, threshold: float, inside: float, outside: float) -> float:
    """Bisection for the threshold crossing between an inside and an outside frequency."""
    a, b = inside, outside
    tol = TWO_PI * BISECT_TOL_GHZ
    while abs(b - a) > tol:
        mid = 0.5 * (a + b)
        if _eval_one(curve, which, mid) > threshold:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def bandwidth(curve: FidelityCurve, threshold: float = 0.9, which: str = "R") -> float:
    """Width (rad/ns) of the contiguous region around the global peak where ``F > threshold``.

    Crossings are refined by bisection to 1e-3 MHz when the curve can be
    re-evaluated, otherwise by linear interpolation. A region that reaches
    the grid edge is cut there.
    """
    f = curve.fidelity(which)
    w = curve.omega
    if f.size == 0 or np.max(f) <= threshold:
        return 0.0
    i = int(np.argmax(f))
    lo = i
    while lo > 0 and f[lo - 1] > threshold:
        lo -= 1
    hi = i
    while hi < f.size - 1 and f[hi + 1] > threshold:
        hi += 1

    def edge(inside: int, outside: int) -> float:
        if curve.evaluate is not None:
            return _crossing(curve, which, threshold, w[inside], w[outside])
        t = (f[inside] - threshold) / (f[inside] - f[outside])
        return w[inside] + t * (w[outside] - w[inside])

    left = w[0] if lo == 0 else edge(lo, lo - 1)
    right = w[-1] if hi == f.size - 1 else edge(hi, hi + 1)
    return float(right - left)


def to_mhz(omega_width: float) -> float:
    """Convert an angular width in rad/ns to MHz."""
    return omega_width / TWO_PI * 1e3


def callable_curve(func: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], omega_grid) -> FidelityCurve:
    """Curve from any function returning ``(F_R, F_L)`` arrays; used for closed-form profiles."""
    omega = np.asarray(omega_grid, dtype=float)
    f_r, f_l = func(omega)
    return FidelityCurve(omega=omega, F_R=np.asarray(f_r, float), F_L=np.asarray(f_l, float), evaluate=func)
