"""Closed-form two-point emitter with inherent loss.

A single excited state ``(|1_A> + e^{i phi}|1_B>)/sqrt(2)`` couples to the
waveguide at two points a phase ``k0d`` apart. Frequencies share whatever
unit ``omega_e`` and ``Gamma`` are given in.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GiantAtomParams:
    """Emitter energy, waveguide decay ``Gamma``, inherent loss ``gamma_in`` and the two phases."""

    omega_e: float = 0.0
    Gamma: float = 1.0
    gamma_in: float = 0.0
    phi: float = 0.5 * math.pi
    k0d: float = 0.5 * math.pi

    def __post_init__(self) -> None:
        if not self.Gamma > 0:
            raise ValueError("Gamma must be positive")
        if self.gamma_in < 0:
            raise ValueError("gamma_in must be non-negative")
        object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))
        object.__setattr__(self, "k0d", float(np.mod(self.k0d, TWO_PI)))

    @property
    def epsilon(self) -> float:
        return self.gamma_in / self.Gamma

    @classmethod
    def from_epsilon(cls, epsilon: float, k0d: float, Gamma: float = 1.0, omega_e: float = 0.0,
                     phi: float | None = None) -> GiantAtomParams:
        """Parameters with ``gamma_in = epsilon * Gamma``; ``phi`` defaults to ``pi - k0d``."""
        return cls(omega_e=omega_e, Gamma=Gamma, gamma_in=epsilon * Gamma,
                   phi=right_phase(k0d) if phi is None else phi, k0d=k0d)


def right_phase(k0d: float) -> float:
    """Phase ``pi - k0d`` that removes reflection and routes photons to the right."""
    return math.pi - k0d


def left_phase(k0d: float) -> float:
    return math.pi + k0d


def resonant_probe(gp: GiantAtomParams) -> float:
    """Probe frequency ``v_g k0`` that satisfies ``omega_e = v_g k0 + (Gamma/4) sin(2 k0d)``."""
    return gp.omega_e - 0.25 * gp.Gamma * math.sin(2.0 * gp.k0d)


def analytic_s_matrix(gp: GiantAtomParams, omega: float) -> np.ndarray:
    """2x2 S-matrix ordered ``(+k0, -k0)`` at probe frequency ``omega = v_g k0``."""
    kd, phi = gp.k0d, gp.phi
    denom = omega - gp.omega_e + 0.5j * gp.gamma_in + 0.5j * gp.Gamma * (1 + np.exp(1j * kd) * math.cos(phi))
    pref = -0.5j * gp.Gamma / denom
    off = math.cos(kd) + math.cos(phi)
    M = np.array([[1 + math.cos(kd - phi), np.exp(-1j * kd) * off],
                  [np.exp(1j * kd) * off, 1 + math.cos(kd + phi)]])
    return np.eye(2) + pref * M


def analytic_fidelity(gp: GiantAtomParams) -> float:
    """``F_R`` on resonance with the right-routing phase, from the S-matrix itself.

    Resonance and ``phi = pi - k0d`` are imposed on a copy of ``gp``; the
    result equals ``(sin^2 k0d / (epsilon + sin^2 k0d))^2``.
    """
    on = GiantAtomParams(omega_e=gp.omega_e, Gamma=gp.Gamma, gamma_in=gp.gamma_in,
                         phi=right_phase(gp.k0d), k0d=gp.k0d)
    S = analytic_s_matrix(on, resonant_probe(on))
    return float(abs(1 - S[0, 0]) ** 2 * abs(1 + S[1, 1]) ** 2 / 16.0)


def closed_form_fidelity(epsilon: float | np.ndarray, k0d: float | np.ndarray) -> float | np.ndarray:
    """``(sin^2 k0d / (epsilon + sin^2 k0d))^2``."""
    s2 = np.sin(k0d) ** 2
    return (s2 / (epsilon + s2)) ** 2


def fidelity_table(epsilons, k0ds) -> str:
    """CSV of ``F_R`` over an ``(epsilon, k0d)`` grid."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "k0d_over_pi", "F_R", "first_order_F_R"])
    for e in epsilons:
        for kd in k0ds:
            f = analytic_fidelity(GiantAtomParams.from_epsilon(float(e), float(kd)))
            w.writerow([f"{e:.8e}", f"{kd / math.pi:.8f}", f"{f:.12e}",
                        f"{1 - 2 * e / math.sin(kd) ** 2:.12e}"])
    return buf.getvalue()
