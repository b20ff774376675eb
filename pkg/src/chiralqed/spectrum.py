"""System Hamiltonian, diagonalization, channel matrix elements and diagnostics.

Energies inside :class:`SpectralData` are angular frequencies in rad/ns;
``omega_0n`` repeats the gaps in h*GHz for reporting.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .circuit import DeviceParams, charging_prefactor
from .errors import DegenerateGround, NotHermitian, NumericalError
from .hilbert import OperatorSet, TruncationScheme, build_operator_set, charge_shift

TWO_PI = 2.0 * math.pi
CHANNELS = ("a", "b", "A", "B")
DEGENERACY_TOL = 1e-6
HERMITIAN_TOL = 1e-10
DENSE_LIMIT = 400
FD_STEP = 1e-4
PHASE_TIE_TOL = 1e-8


@dataclass(frozen=True)
class SpectralData:
    """Kept part of the spectrum with the channel elements ``eta[i, n] = <g|n_i|phi_n>``.

    Rows of ``eta`` follow ``CHANNELS``. ``vectors`` holds the kept excited
    eigenvectors (columns) and ``ground`` the ground state; both are kept in
    memory only.
    """

    e_ground: float
    e_n: np.ndarray
    omega_0n: np.ndarray
    eta: np.ndarray
    cpb_weight: np.ndarray
    ground: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    @property
    def gaps(self) -> np.ndarray:
        """Excitation energies from the ground state, rad/ns."""
        return self.e_n - self.e_ground

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["state", "omega_0n_GHz"]
        for c in CHANNELS:
            header += [f"abs_eta_{c}", f"arg_eta_{c}"]
        w.writerow(header + ["cpb_weight"])
        for n in range(self.e_n.size):
            row = [n + 1, f"{self.omega_0n[n]:.10f}"]
            for i in range(len(CHANNELS)):
                row += [f"{abs(self.eta[i, n]):.10e}", f"{np.angle(self.eta[i, n]):.10f}"]
            w.writerow(row + [f"{self.cpb_weight[n]:.10e}"])
        return buf.getvalue()


def bicpb_core_hamiltonian(ci_aa: float, ci_bb: float, ci_ab: float, ej_a: float, ej_b: float,
                           ej_ab: float, phi_ext: float, ng_a: float, ng_b: float,
                           charges: np.ndarray) -> sp.csr_matrix:
    """Two Josephson-coupled CPBs on the charge window ``charges`` (order ``a (x) b``).

    ``ci_*`` are charging coefficients ``2e^2 C_inv`` in h*GHz. The cross
    junction is ``-ej_ab * Re[e^{i phi_a} e^{-i phi_b} e^{-i phi_ext}]``.
    """
    d = charges.size
    eye = sp.identity(d, format="csr")
    qa = sp.diags(charges - ng_a, format="csr")
    qb = sp.diags(charges - ng_b, format="csr")
    shift = charge_shift(d)
    cos = (shift + shift.T) * 0.5
    kr = lambda x, y: sp.kron(x, y, format="csr")
    H = ci_aa * kr(qa @ qa, eye) + ci_bb * kr(eye, qb @ qb) + 2.0 * ci_ab * kr(qa, qb)
    H = H - ej_a * kr(cos, eye) - ej_b * kr(eye, cos)
    X = kr(shift, shift.T) * np.exp(-1j * phi_ext)
    H = H - 0.5 * ej_ab * (X + X.conj().T)
    return H.tocsr()


def assemble_h_sys(p: DeviceParams, ops: OperatorSet) -> sp.csr_matrix:
    """Build the system Hamiltonian in h*GHz as a sparse matrix.

    Terms: CPB charging with the inverse capacitance block of ``a, b``; CPB
    and cross-junction Josephson energies; bare transmon energies in their
    kept eigenbasis; transmon-transmon charge coupling; CPB-transmon charge
    coupling ``2 * 2e^2 C_inv[i, j] n_j (n_i - n_g,i)``.
    """
    ci = charging_prefactor() * ops.cap.C_inv
    cap = ops.cap
    k = lambda u, v: ci[cap.index(u), cap.index(v)]
    dim = ops.dim
    eye = sp.identity(dim, format="csr")
    qa = ops.n["a"] - p.n_g_a * eye
    qb = ops.n["b"] - p.n_g_b * eye
    H = k("a", "a") * (qa @ qa) + k("b", "b") * (qb @ qb) + 2.0 * k("a", "b") * (qa @ qb)
    H = H - p.E_J_a * ops.cos["a"] - p.E_J_b * ops.cos["b"]
    X = (ops.exp_i_phi["a"] @ ops.exp_i_phi["b"].conj().T) * np.exp(-1j * p.phi_ext)
    H = H - 0.5 * p.E_J_ab * (X + X.conj().T)
    if not ops.bare_core:
        t = ops.truncation.transmon_levels
        eye_t = np.eye(t)
        bare = np.kron(np.diag(ops.transmon_energies["A"]), eye_t) + np.kron(eye_t, np.diag(ops.transmon_energies["B"]))
        lift = sp.kron(sp.csr_matrix(bare), sp.identity(ops.truncation.cpb_dim**2), format="csr")
        H = H + lift + 2.0 * k("A", "B") * (ops.n["A"] @ ops.n["B"])
        for i, q in (("a", qa), ("b", qb)):
            for j in ("A", "B"):
                H = H + 2.0 * k(i, j) * (ops.n[j] @ q)
    H = sp.csr_matrix(H, dtype=complex)
    check_hermitian(H)
    return H


def check_hermitian(H) -> float:
    """Return the relative Hermiticity residual; raise :class:`NotHermitian` above 1e-10."""
    if sp.issparse(H):
        diff = abs(H - H.conj().T).sum(axis=1).max()
        norm = abs(H).sum(axis=1).max()
    else:
        diff = np.abs(H - H.conj().T).sum(axis=1).max()
        norm = np.abs(H).sum(axis=1).max()
    rel = float(diff) / float(norm) if norm > 0 else 0.0
    if rel > HERMITIAN_TOL:
        raise NotHermitian(f"Hamiltonian Hermiticity residual {rel:.2e}")
    return rel


def lowest_eigenpairs(H, k: int, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``k`` eigenpairs (ascending) of a Hermitian matrix.

    ``method`` is ``"dense"``, ``"sparse"`` or ``"auto"`` (sparse Lanczos above
    400 dimensions). The Lanczos start vector is fixed so results are
    reproducible bit for bit.
    """
    dim = H.shape[0]
    if method == "auto":
        method = "dense" if dim <= DENSE_LIMIT or k >= dim - 1 else "sparse"
    if method == "dense":
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
        w, v = np.linalg.eigh(Hd)
        return w[:k], v[:, :k]
    rng = np.random.default_rng(20211)
    v0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    try:
        w, v = spl.eigsh(sp.csc_matrix(H), k=k, which="SA", tol=1e-13, v0=v0, maxiter=20 * dim)
    except spl.ArpackNoConvergence as exc:
        raise NumericalError("Lanczos eigensolver did not converge") from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate every column so its largest-magnitude entry is real positive.

    Mirror-symmetric devices give exact magnitude ties; the first entry within
    a relative ``PHASE_TIE_TOL`` of the maximum is used so the choice does not
    depend on solver rounding.
    """
    mag = np.abs(v)
    idx = np.argmax(mag >= mag.max(axis=0) * (1.0 - PHASE_TIE_TOL), axis=0)
    lead = v[idx, np.arange(v.shape[1])]
    return v * (np.abs(lead) / lead)


def _core_matrix(vec: np.ndarray, ops: OperatorSet) -> np.ndarray:
    core = ops.truncation.cpb_dim**2
    return vec.reshape(-1, core)


def diagonalize(H, ops: OperatorSet, method: str = "auto") -> SpectralData:
    """Diagonalize ``H`` (h*GHz) and extract the kept spectrum and channel elements.

    ``cpb_weight[n]`` is the population of state ``n`` outside
    ``(any transmon state) (x) |c>``, where ``|c>`` is the dominant core
    configuration of the ground state (leading eigenvector of its reduced core
    density matrix).
    """
    kept = ops.truncation.kept_excited
    w, v = lowest_eigenpairs(H, kept + 1, method)
    if w.size < kept + 1:
        raise NumericalError("Hilbert space smaller than the number of kept states")
    if (w[1] - w[0]) * TWO_PI < DEGENERACY_TOL:
        raise DegenerateGround(f"ground state gap {w[1] - w[0]:.3e} GHz is degenerate")
    v = _fix_phase(v)
    g = v[:, 0]
    ex = v[:, 1:]
    eta = np.zeros((len(CHANNELS), kept), dtype=complex)
    for r, c in enumerate(CHANNELS):
        if c in ops.n:
            eta[r] = g.conj() @ (ops.n[c] @ ex)
    G = _core_matrix(g, ops)
    rho = G.T @ G.conj()
    _, cv = np.linalg.eigh(rho)
    c_dom = cv[:, -1]
    weights = np.empty(kept)
    for n in range(kept):
        M = _core_matrix(ex[:, n], ops)
        weights[n] = max(0.0, 1.0 - float(np.linalg.norm(M @ c_dom.conj()) ** 2))
    return SpectralData(
        e_ground=float(w[0] * TWO_PI),
        e_n=w[1:] * TWO_PI,
        omega_0n=w[1:] - w[0],
        eta=eta,
        cpb_weight=weights,
        ground=g,
        vectors=ex,
    )


def solve_spectrum(p: DeviceParams, t: TruncationScheme | None = None, bare_core: bool = False,
                   method: str = "auto") -> SpectralData:
    """Build operators, assemble and diagonalize in one call."""
    t = t or TruncationScheme()
    ops = build_operator_set(p, t, bare_core=bare_core)
    return diagonalize(assemble_h_sys(p, ops), ops, method)


def offset_charge_scan(p: DeviceParams, ng_values, t: TruncationScheme | None = None,
                       bare_core: bool = False) -> np.ndarray:
    """Gaps ``omega_0n`` (h*GHz) with ``n_g,a = n_g,b = ng`` for each entry; shape (len, kept)."""
    t = t or TruncationScheme()
    return np.array([solve_spectrum(p.replace(n_g_a=float(g), n_g_b=float(g)), t, bare_core).omega_0n
                     for g in ng_values])


def sweet_spot(p: DeviceParams, t: TruncationScheme | None = None, bare_core: bool = True,
               bracket: tuple[float, float] = (0.5, 1.0), points: int = 99) -> float:
    """Offset ``n_g = n_g,a = n_g,b`` inside ``bracket`` where ``omega_01`` has a local minimum.

    The symmetric point 0.5 is excluded. A coarse scan brackets the first
    interior minimum, which is then refined with bounded Brent search.
    """
    from scipy.optimize import minimize_scalar

    t = t or TruncationScheme(kept_excited=1)
    lo, hi = bracket
    margin = 0.01 * (hi - lo)
    ng = np.linspace(lo + margin, hi - margin, points)
    w01 = offset_charge_scan(p, ng, t, bare_core)[:, 0]
    dw = np.diff(w01)
    flips = np.nonzero((dw[:-1] < 0) & (dw[1:] > 0))[0]
    if flips.size == 0:
        raise NumericalError("no interior minimum of omega_01 in the offset-charge bracket")
    i = int(flips[0]) + 1

    def f(g: float) -> float:
        return solve_spectrum(p.replace(n_g_a=g, n_g_b=g), t, bare_core).omega_0n[0]

    res = minimize_scalar(f, bounds=(ng[i - 1], ng[i + 1]), method="bounded", options={"xatol": 1e-7})
    return float(res.x)


@dataclass(frozen=True)
class DarkStateReport:
    """Core weights of states 1..3, dark-state overlap of state 2 and offset-charge slopes.

    ``slopes[j, n]`` is ``d omega_0(n+1) / d n_g`` in h*GHz per Cooper pair,
    with ``j = 0`` for ``n_g,a`` and ``j = 1`` for ``n_g,b``.
    """

    cpb_weight: np.ndarray
    dark_overlap: float
    slopes: np.ndarray


def dark_state_vector(p: DeviceParams, ops: OperatorSet) -> np.ndarray:
    """Product-space vector of ``eta_b |1_A> - eta_a |1_B>`` (normalized).

    ``eta_a, eta_b`` are ``<e|n_a,b|g>`` of the isolated core and ``|1_A>``
    is the first transmon-A excitation with transmon B and the core in their
    ground states.
    """
    if ops.bare_core:
        raise ValueError("dark state needs the transmons")
    ci = charging_prefactor() * ops.cap.C_inv
    cap = ops.cap
    k = lambda u, v: ci[cap.index(u), cap.index(v)]
    t = ops.truncation
    Hc = bicpb_core_hamiltonian(k("a", "a"), k("b", "b"), k("a", "b"), p.E_J_a, p.E_J_b, p.E_J_ab,
                                p.phi_ext, p.n_g_a, p.n_g_b, t.cpb_charges)
    _, cv = np.linalg.eigh(Hc.toarray())
    cv = _fix_phase(cv[:, :2])
    g_c, e_c = cv[:, 0], cv[:, 1]
    eye = np.eye(t.cpb_dim)
    m = np.diag(t.cpb_charges)
    eta_a = e_c.conj() @ np.kron(m, eye) @ g_c
    eta_b = e_c.conj() @ np.kron(eye, m) @ g_c
    nt = t.transmon_levels
    one_a = np.kron(np.kron(np.eye(nt)[1], np.eye(nt)[0]), g_c)
    one_b = np.kron(np.kron(np.eye(nt)[0], np.eye(nt)[1]), g_c)
    psi = eta_b * one_a - eta_a * one_b
    return psi / np.linalg.norm(psi)


def dark_state_diagnostics(p: DeviceParams, t: TruncationScheme | None = None,
                           step: float = FD_STEP) -> DarkStateReport:
    """Dark-state picture of the lowest three excited states.

    Slopes use central differences of step ``step`` in each offset charge.
    """
    t = t or TruncationScheme()
    if t.kept_excited < 3:
        raise ValueError("dark-state diagnostics need kept_excited >= 3")
    ops = build_operator_set(p, t)
    s = diagonalize(assemble_h_sys(p, ops), ops)
    psi = dark_state_vector(p, ops)
    overlap = float(abs(psi.conj() @ s.vectors[:, 1]))
    slopes = np.empty((2, t.kept_excited))
    for j, name in enumerate(("n_g_a", "n_g_b")):
        hi = solve_spectrum(p.replace(**{name: getattr(p, name) + step}), t).omega_0n
        lo = solve_spectrum(p.replace(**{name: getattr(p, name) - step}), t).omega_0n
        slopes[j] = (hi - lo) / (2 * step)
    return DarkStateReport(cpb_weight=s.cpb_weight[:3].copy(), dark_overlap=overlap, slopes=slopes)


def ring_equivalence_map(ng_a: float, ng_b: float) -> tuple[float, float]:
    """Offsets of the equivalent bi-CPB given the reduced ring offsets ``n'_g,a, n'_g,b``."""
    return (4.0 / 3.0) * ng_a - (2.0 / 3.0) * ng_b, (4.0 / 3.0) * ng_b - (2.0 / 3.0) * ng_a


def ring_reduced_offsets(ng: tuple[float, float, float], total_charge: int) -> tuple[float, float]:
    """Reduced offsets ``n'_g = (n_g,i - n_g,c + N0)/2`` of a three-island ring."""
    ga, gb, gc = ng
    return 0.5 * (ga - gc + total_charge), 0.5 * (gb - gc + total_charge)


def ring_hamiltonian(E_C: float, E_J: float, flux: float, ng: tuple[float, float, float],
                     total_charge: int, charges: np.ndarray) -> np.ndarray:
    """Three-island Josephson ring at fixed total charge, dense, on ``(n_a, n_b)`` pairs.

    Island ``c`` carries ``N0 - n_a - n_b``. Each island has charging energy
    ``2 E_C (n_i - n_g,i)^2``; the three identical junctions each carry a
    third of the flux.
    """
    ga, gb, gc = ng
    na, nb = np.meshgrid(charges, charges, indexing="ij")
    na, nb = na.ravel(), nb.ravel()
    nc = total_charge - na - nb
    H = np.diag(2.0 * E_C * ((na - ga) ** 2 + (nb - gb) ** 2 + (nc - gc) ** 2)).astype(complex)
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(na, nb))}
    ph = np.exp(-1j * flux / 3.0)
    # Each junction moves one pair from island x to island y.
    for i, (a, b) in enumerate(zip(na.astype(int), nb.astype(int))):
        for (da, db) in ((1, 0), (0, -1), (-1, 1)):
            j = index.get((a + da, b + db))
            if j is not None:
                H[j, i] += -0.5 * E_J * ph
                H[i, j] += -0.5 * E_J * np.conj(ph)
    return H


def mapped_bicpb_hamiltonian(E_C: float, E_J: float, flux: float, ng: tuple[float, float, float],
                             total_charge: int, charges: np.ndarray) -> np.ndarray:
    """Bi-CPB Hamiltonian equivalent to :func:`ring_hamiltonian`, constant offset included.

    Charging ``4 E_C [(n_a - n~_a)^2 + (n_b - n~_b)^2 + (n_a - n~_a)(n_b - n~_b)]``
    with ``n~`` from :func:`ring_equivalence_map`; all three Josephson
    energies equal ``E_J`` and the bi-CPB flux is ``-flux``.
    """
    A = 4.0 * E_C
    pa, pb = ring_reduced_offsets(ng, total_charge)
    ta, tb = ring_equivalence_map(pa, pb)
    H = bicpb_core_hamiltonian(A, A, 0.5 * A, E_J, E_J, E_J, -flux, ta, tb, charges).toarray()
    ga, gb, gc = ng
    offset = 2.0 * E_C * (ga**2 + gb**2 + (total_charge - gc) ** 2) - A * (ta**2 + tb**2 + ta * tb)
    return H + offset * np.eye(H.shape[0])


def ring_check(E_C: float, E_J: float, flux: float, ng: tuple[float, float, float], total_charge: int,
               charges: np.ndarray, levels: int = 5) -> float:
    """Largest mismatch of the lowest ``levels`` energies of ring and mapped bi-CPB, relative to the largest of them."""
    w_ring = np.linalg.eigvalsh(ring_hamiltonian(E_C, E_J, flux, ng, total_charge, charges))[:levels]
    w_map = np.linalg.eigvalsh(mapped_bicpb_hamiltonian(E_C, E_J, flux, ng, total_charge, charges))[:levels]
    return float(np.max(np.abs(w_ring - w_map)) / np.max(np.abs(w_ring)))
