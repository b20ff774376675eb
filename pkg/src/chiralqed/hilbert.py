"""Truncated product Hilbert space and operator matrices.

Subsystem order is ``A, B, a, b``: two transmons in their kept bare
eigenbases followed by the two CPBs in a raw charge window. Operators are
stored as ``scipy.sparse`` CSR matrices; the full Hamiltonian at default
truncation has about 1.7 % nonzero entries.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any

import numpy as np
import scipy.sparse as sp

from .circuit import CapacitanceMatrix, DeviceParams, build_capacitance_matrix, charging_prefactor
from .errors import ConfigError, CutoffTooSmall

CUTOFF_CHECK_STEP = 5
CUTOFF_CHECK_TOL = 1e-6


@dataclass(frozen=True)
class TruncationScheme:
    """Charge windows and kept-level counts of the finite Hilbert space."""

    transmon_charge_cutoff: int = 30
    transmon_levels: int = 4
    cpb_charge_min: int = -3
    cpb_charge_max: int = 4
    kept_excited: int = 4

    def __post_init__(self) -> None:
        if self.transmon_levels < 2:
            raise ConfigError("transmon_levels must be >= 2", key="transmon_levels")
        if self.cpb_charge_max < self.cpb_charge_min:
            raise ConfigError("CPB charge window is empty", key="cpb_charge_max")
        if self.kept_excited < 1:
            raise ConfigError("kept_excited must be >= 1", key="kept_excited")
        if 2 * self.transmon_charge_cutoff + 1 < self.transmon_levels:
            raise ConfigError("transmon charge cutoff too small for the kept levels",
                              key="transmon_charge_cutoff")

    @classmethod
    def from_dims(cls, transmon_dim: int, cpb_dim: int, **kw: Any) -> TruncationScheme:
        """Scheme with ``transmon_dim`` kept levels and a CPB window of ``cpb_dim`` charges.

        The window is ``-(cpb_dim//2 - 1) .. cpb_dim//2`` for even sizes, so
        dim 8 gives -3..4, dim 10 gives -4..5 and dim 12 gives -5..6.
        """
        if cpb_dim < 1:
            raise ConfigError("cpb_dim must be >= 1")
        hi = cpb_dim // 2
        lo = hi - cpb_dim + 1
        return cls(transmon_levels=transmon_dim, cpb_charge_min=lo, cpb_charge_max=hi, **kw)

    @property
    def cpb_dim(self) -> int:
        return self.cpb_charge_max - self.cpb_charge_min + 1

    @property
    def cpb_charges(self) -> np.ndarray:
        return np.arange(self.cpb_charge_min, self.cpb_charge_max + 1, dtype=float)

    def label(self) -> str:
        return f"{self.transmon_levels}^2/{self.cpb_dim}^2"

    def replace(self, **changes: Any) -> TruncationScheme:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TruncationScheme:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown truncation keys: {', '.join(unknown)}", key=unknown[0])
        return cls(**data)


@dataclass(frozen=True)
class OperatorSet:
    """Operators lifted to the truncated product space.

    ``n``, ``cos`` and ``exp_i_phi`` map subsystem labels to sparse matrices.
    ``transmon_energies`` holds the kept bare transmon eigenvalues (h*GHz) and
    ``transmon_n`` the kept-basis charge matrices before lifting. In bare-core
    mode the transmon entries are absent and the space is ``a (x) b`` only.
    """

    cap: CapacitanceMatrix
    truncation: TruncationScheme
    bare_core: bool
    dims: tuple[int, ...]
    n: dict[str, sp.csr_matrix]
    cos: dict[str, sp.csr_matrix]
    exp_i_phi: dict[str, sp.csr_matrix]
    transmon_energies: dict[str, np.ndarray]
    transmon_n: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def subsystems(self) -> tuple[str, ...]:
        return ("a", "b") if self.bare_core else ("A", "B", "a", "b")


def transmon_eigensystem(ec4: float, ej: float, cutoff: int, levels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lowest ``levels`` eigenpairs of ``ec4*n^2 - ej*cos(phi)`` on charges -cutoff..cutoff.

    Returns energies, eigenvectors (columns) and the charge grid. The sign of
    every eigenvector is fixed so that its largest-magnitude entry is positive.
    """
    n = np.arange(-cutoff, cutoff + 1, dtype=float)
    dim = n.size
    H = np.diag(ec4 * n**2) - 0.5 * ej * (np.eye(dim, k=1) + np.eye(dim, k=-1))
    w, v = np.linalg.eigh(H)
    w, v = w[:levels], v[:, :levels]
    lead = v[np.argmax(np.abs(v), axis=0), np.arange(levels)]
    v = v * np.sign(lead)
    return w, v, n


def bare_transmon_basis(p: DeviceParams, t: TruncationScheme, which: str,
                        cap: CapacitanceMatrix | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Kept eigenpairs of one bare transmon in its charge basis.

    The charging term uses the inverse-matrix element ``C_inv[A, A]`` rather
    than ``1/C_sigma``; the transmon offset charge is omitted. Raises
    :class:`CutoffTooSmall` when enlarging the cutoff by 5 charges shifts any
    kept level by more than 1e-6 h*GHz.
    """
    if which not in ("A", "B"):
        raise ValueError("which must be 'A' or 'B'")
    cap = cap or build_capacitance_matrix(p)
    ec4 = charging_prefactor() * cap.inv(which, which)
    ej = p.E_Jt_A if which == "A" else p.E_Jt_B
    w, v, _ = transmon_eigensystem(ec4, ej, t.transmon_charge_cutoff, t.transmon_levels)
    w_big, _, _ = transmon_eigensystem(ec4, ej, t.transmon_charge_cutoff + CUTOFF_CHECK_STEP, t.transmon_levels)
    shift = float(np.max(np.abs(w_big - w)))
    if shift > CUTOFF_CHECK_TOL:
        raise CutoffTooSmall(f"transmon {which} levels move by {shift:.2e} GHz when the cutoff grows")
    return w, v


def charge_shift(dim: int) -> sp.csr_matrix:
    """Charge-raising operator ``e^{i phi}`` on a window: ``<m+1|S|m> = 1``."""
    return sp.eye(dim, k=-1, format="csr")


def _kron_all(mats: list) -> sp.csr_matrix:
    out = sp.csr_matrix(mats[0])
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def build_operator_set(p: DeviceParams, t: TruncationScheme, bare_core: bool = False) -> OperatorSet:
    """Lift every subsystem operator to the product space ``A (x) B (x) a (x) b``."""
    cap = build_capacitance_matrix(p, bare_core=bare_core)
    d = t.cpb_dim
    m = sp.diags(t.cpb_charges, format="csr")
    shift = charge_shift(d)
    cos_cpb = ((shift + shift.T) * 0.5).tocsr()

    local: dict[str, dict[str, Any]] = {
        "a": {"n": m, "cos": cos_cpb, "exp": shift},
        "b": {"n": m, "cos": cos_cpb, "exp": shift},
    }
    energies: dict[str, np.ndarray] = {}
    t_n: dict[str, np.ndarray] = {}
    if bare_core:
        order = ("a", "b")
    else:
        order = ("A", "B", "a", "b")
        for which in ("A", "B"):
            w, v = bare_transmon_basis(p, t, which, cap)
            charges = np.arange(-t.transmon_charge_cutoff, t.transmon_charge_cutoff + 1, dtype=float)
            n_kept = v.T @ (charges[:, None] * v)
            shift_t = np.eye(charges.size, k=-1)
            cos_kept = v.T @ (0.5 * (shift_t + shift_t.T)) @ v
            energies[which] = w
            t_n[which] = n_kept
            local[which] = {"n": sp.csr_matrix(n_kept), "cos": sp.csr_matrix(cos_kept), "exp": None}
    dims = tuple(t.transmon_levels if s in ("A", "B") else d for s in order)
    eyes = [sp.identity(k, format="csr") for k in dims]

    def lift(label: str, op) -> sp.csr_matrix:
        mats = list(eyes)
        mats[order.index(label)] = op
        return _kron_all(mats)

    n_ops = {s: lift(s, local[s]["n"]) for s in order}
    cos_ops = {s: lift(s, local[s]["cos"]) for s in order}
    exp_ops = {s: lift(s, local[s]["exp"]) for s in ("a", "b")}
    return OperatorSet(cap=cap, truncation=t, bare_core=bare_core, dims=dims, n=n_ops, cos=cos_ops,
                       exp_i_phi=exp_ops, transmon_energies=energies, transmon_n=t_n)
