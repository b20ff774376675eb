"""Device parameters, capacitance matrix, unit conversion and fabrication sampling.

Capacitances are given in fF and Josephson energies in h*GHz, as in the
device tables. The capacitance matrix itself is held in farads.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np
from scipy import constants

from .errors import ConfigError, IllConditioned, NotPositiveDefinite, OutOfBand

FEMTO = 1e-15

#: Node order of the full capacitance matrix.
NODES = ("l", "A", "a", "r", "B", "b")
#: Node order when the CPBs couple straight to the waveguide.
BARE_CORE_NODES = ("l", "a", "r", "b")

CAPACITANCE_FIELDS = (
    "c_dz", "C_q_a", "C_q_b", "C_sigma_a", "C_sigma_b", "C_ab",
    "C_c_A", "C_c_B", "C_t_A", "C_t_B",
)
CPB_JOSEPHSON_FIELDS = ("E_J_a", "E_J_b", "E_J_ab")
TRANSMON_JOSEPHSON_FIELDS = ("E_Jt_A", "E_Jt_B")


@dataclass(frozen=True)
class DeviceParams:
    """Every circuit constant of the chiral interface.

    Defaults are the headline device (capacitances 50/1/1/1/100/30 fF,
    E_J = 5.5, E_J,ab = 5, E_Jt = 13 h*GHz, k0*d = phi_ext = pi/2).

    ``design_frequency`` (h*GHz) fixes the physical separation of the two
    waveguide contacts: ``d = k0d_design / k(design_frequency)``. When left
    as ``None`` it is resolved from the device's own operating level.
    """

    c_dz: float = 50.0
    k0d_design: float = 0.5 * math.pi
    C_q_a: float = 1.0
    C_q_b: float = 1.0
    C_sigma_a: float = 1.0
    C_sigma_b: float = 1.0
    C_ab: float = 1.0
    E_J_a: float = 5.5
    E_J_b: float = 5.5
    E_J_ab: float = 5.0
    phi_ext: float = 0.5 * math.pi
    n_g_a: float = 0.6
    n_g_b: float = 0.6
    C_c_A: float = 100.0
    C_c_B: float = 100.0
    C_t_A: float = 30.0
    C_t_B: float = 30.0
    E_Jt_A: float = 13.0
    E_Jt_B: float = 13.0
    Z0: float = 50.0
    v_g: float = 1.2e8
    design_frequency: float | None = None

    def __post_init__(self) -> None:
        for name in CAPACITANCE_FIELDS:
            if not getattr(self, name) > 0:
                raise ConfigError(f"capacitance {name} must be strictly positive, got {getattr(self, name)}",
                                  key=name)
        for name in CPB_JOSEPHSON_FIELDS + TRANSMON_JOSEPHSON_FIELDS:
            if not getattr(self, name) > 0:
                raise ConfigError(f"Josephson energy {name} must be strictly positive, got {getattr(self, name)}",
                                  key=name)
        if not 0 < self.k0d_design < math.pi:
            raise ConfigError(f"k0d_design must lie in (0, pi), got {self.k0d_design}", key="k0d_design")
        if not (self.Z0 > 0 and self.v_g > 0):
            raise ConfigError("Z0 and v_g must be positive")
        if self.design_frequency is not None and not self.design_frequency > 0:
            raise ConfigError("design_frequency must be positive when given")

    def replace(self, **changes: Any) -> DeviceParams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DeviceParams:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown device keys: {', '.join(unknown)}", key=unknown[0])
        return cls(**data)


@dataclass(frozen=True)
class ToleranceSpec:
    """Relative half-widths of the uniform fabrication spread."""

    cap_rel_halfwidth: float = 0.01
    ej_rel_halfwidth: float = 0.10
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("cap_rel_halfwidth", "ej_rel_halfwidth"):
            value = getattr(self, name)
            if not 0 <= value < 0.5:
                raise ConfigError(f"{name} must lie in [0, 0.5), got {value}", key=name)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ToleranceSpec:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {', '.join(unknown)}", key=unknown[0])
        return cls(**data)


@dataclass(frozen=True)
class CapacitanceMatrix:
    """Symmetric positive-definite node capacitance matrix and its inverse.

    ``C`` is in farads, ``C_inv`` in 1/farads. ``nodes`` labels rows.
    """

    C: np.ndarray
    C_inv: np.ndarray
    nodes: tuple[str, ...] = field(default=NODES)

    def index(self, node: str) -> int:
        return self.nodes.index(node)

    def inv(self, i: str, j: str) -> float:
        """Element of the inverse matrix between two named nodes (1/F)."""
        return float(self.C_inv[self.index(i), self.index(j)])

    def has(self, node: str) -> bool:
        return node in self.nodes


def build_capacitance_matrix(p: DeviceParams, bare_core: bool = False) -> CapacitanceMatrix:
    """Assemble and invert the node capacitance matrix.

    The waveguide cell node carries its own ground capacitance ``c_dz`` plus
    the coupling capacitor attached to it. Transmon totals are
    ``C_c + C_t + C_q``; CPB totals are ``C_sigma + C_q + C_ab``.

    With ``bare_core`` the transmons are removed and each CPB couples to its
    waveguide cell through ``C_q``; nodes are then ``(l, a, r, b)``.
    """
    cpb_a = p.C_sigma_a + p.C_q_a + p.C_ab
    cpb_b = p.C_sigma_b + p.C_q_b + p.C_ab
    if bare_core:
        nodes = BARE_CORE_NODES
        C = np.array([
            [p.c_dz + p.C_q_a, -p.C_q_a, 0.0, 0.0],
            [-p.C_q_a, cpb_a, 0.0, -p.C_ab],
            [0.0, 0.0, p.c_dz + p.C_q_b, -p.C_q_b],
            [0.0, -p.C_ab, -p.C_q_b, cpb_b],
        ])
    else:
        nodes = NODES
        tA = p.C_c_A + p.C_t_A + p.C_q_a
        tB = p.C_c_B + p.C_t_B + p.C_q_b
        C = np.array([
            [p.c_dz + p.C_c_A, -p.C_c_A, 0.0, 0.0, 0.0, 0.0],
            [-p.C_c_A, tA, -p.C_q_a, 0.0, 0.0, 0.0],
            [0.0, -p.C_q_a, cpb_a, 0.0, 0.0, -p.C_ab],
            [0.0, 0.0, 0.0, p.c_dz + p.C_c_B, -p.C_c_B, 0.0],
            [0.0, 0.0, 0.0, -p.C_c_B, tB, -p.C_q_b],
            [0.0, 0.0, -p.C_ab, 0.0, -p.C_q_b, cpb_b],
        ])
    return capacitance_from_matrix(C * FEMTO, nodes)


def capacitance_from_matrix(C: np.ndarray, nodes: tuple[str, ...] = NODES) -> CapacitanceMatrix:
    """Validate a symmetric capacitance matrix (farads) and store its inverse."""
    C = np.asarray(C, dtype=float)
    eig = np.linalg.eigvalsh(C)
    if eig[0] <= 0:
        raise NotPositiveDefinite(f"capacitance matrix has eigenvalue {eig[0]:.3e} F")
    cond = eig[-1] / eig[0]
    if cond > 1e12:
        raise IllConditioned(f"capacitance matrix condition number {cond:.3e} exceeds 1e12")
    C_inv = np.linalg.inv(C)
    C_inv = 0.5 * (C_inv + C_inv.T)
    return CapacitanceMatrix(C=C, C_inv=C_inv, nodes=tuple(nodes))


def charging_prefactor() -> float:
    """Return 2e^2/h in GHz * F, so that ``charging_prefactor() * C_inv`` is in h*GHz."""
    return 2.0 * constants.e**2 / constants.h / 1e9


def sample_fabrication(p: DeviceParams, t: ToleranceSpec, n: int) -> list[DeviceParams]:
    """Draw ``n`` fabrication variants of ``p``.

    Each capacitance is scaled by U[1 - cap, 1 + cap] and each CPB Josephson
    energy by U[1 - ej, 1 + ej]; transmon Josephson energies stay nominal.
    Sample ``i`` uses its own child stream of ``SeedSequence(t.seed)``, so a
    sample does not depend on how many others are drawn.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    children = np.random.SeedSequence(t.seed).spawn(n)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        cap = rng.uniform(1 - t.cap_rel_halfwidth, 1 + t.cap_rel_halfwidth, len(CAPACITANCE_FIELDS))
        ej = rng.uniform(1 - t.ej_rel_halfwidth, 1 + t.ej_rel_halfwidth, len(CPB_JOSEPHSON_FIELDS))
        changes = {name: getattr(p, name) * float(s) for name, s in zip(CAPACITANCE_FIELDS, cap)}
        changes.update({name: getattr(p, name) * float(s) for name, s in zip(CPB_JOSEPHSON_FIELDS, ej)})
        out.append(p.replace(**changes))
    return out


def cell_length(p: DeviceParams) -> float:
    """Unit-cell length delta_z in metres, from c_dz = c * delta_z and c = 1/(Z0 v_g)."""
    c_per_m = 1.0 / (p.Z0 * p.v_g)
    return p.c_dz * FEMTO / c_per_m


def band_edge(p: DeviceParams) -> float:
    """Largest angular frequency of the discrete waveguide, rad/ns."""
    return 2.0 * p.v_g / cell_length(p) * 1e-9


def waveguide_dispersion(k: float | np.ndarray, p: DeviceParams) -> float | np.ndarray:
    """Angular frequency (rad/ns) of the dimensionless wavenumber ``k`` in [-pi, pi]."""
    k = np.asarray(k, dtype=float)
    if np.any(np.abs(k) > math.pi + 1e-12):
        raise OutOfBand("wavenumber outside the first Brillouin zone")
    w = band_edge(p) * np.abs(np.sin(k / 2.0))
    return float(w) if w.ndim == 0 else w


def wavenumber(omega: float | np.ndarray, p: DeviceParams) -> float | np.ndarray:
    """Positive dimensionless wavenumber at angular frequency ``omega`` (rad/ns)."""
    x = np.asarray(omega, dtype=float) / band_edge(p)
    if np.any(x > 1.0) or np.any(x < 0.0):
        raise OutOfBand("probe frequency outside the waveguide band")
    k = 2.0 * np.arcsin(x)
    return float(k) if k.ndim == 0 else k
