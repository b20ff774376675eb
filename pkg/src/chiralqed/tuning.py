"""Knob optimization, fabrication Monte Carlo, offset/flux landscapes and E_Jt sweeps."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .circuit import DeviceParams, ToleranceSpec, sample_fabrication
from .errors import BudgetExhausted, ChiralQEDError, ConfigError
from .hilbert import TruncationScheme
from .scattering import (
    bandwidth, coupling_model, fidelity_curve, frequency_grid, peak, resolve_design_frequency, to_mhz,
)
from .spectrum import solve_spectrum

TWO_PI = 2.0 * math.pi
KNOB_NAMES = ("n_g_a", "n_g_b", "phi_ext", "E_Jt")


@dataclass(frozen=True)
class KnobSpace:
    """Bounds of the in-situ tuning knobs.

    ``E_Jt`` (both transmons together) joins the search only when
    ``tune_ejt`` is set.
    """

    n_g_a: tuple[float, float] = (0.5, 1.0)
    n_g_b: tuple[float, float] = (0.5, 1.0)
    phi_ext: tuple[float, float] = (0.0, math.pi)
    E_Jt: tuple[float, float] = (6.0, 22.0)
    tune_ejt: bool = False

    def __post_init__(self) -> None:
        for name in KNOB_NAMES:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"knob bounds for {name} are empty: ({lo}, {hi})", key=name)
        object.__setattr__(self, "n_g_a", tuple(map(float, self.n_g_a)))
        object.__setattr__(self, "n_g_b", tuple(map(float, self.n_g_b)))
        object.__setattr__(self, "phi_ext", tuple(map(float, self.phi_ext)))
        object.__setattr__(self, "E_Jt", tuple(map(float, self.E_Jt)))

    @property
    def names(self) -> tuple[str, ...]:
        return KNOB_NAMES if self.tune_ejt else KNOB_NAMES[:3]

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return [getattr(self, n) for n in self.names]

    def read(self, p: DeviceParams) -> np.ndarray:
        return np.array([knob_value(p, n) for n in self.names])

    def apply(self, p: DeviceParams, x: Sequence[float]) -> DeviceParams:
        return set_knobs(p, dict(zip(self.names, map(float, x))))

    def clip(self, x: np.ndarray) -> np.ndarray:
        b = np.array(self.bounds)
        return np.clip(x, b[:, 0], b[:, 1])

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for n in KNOB_NAMES:
            d[n] = list(d[n])
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> KnobSpace:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown knob keys: {', '.join(unknown)}", key=unknown[0])
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


def knob_value(p: DeviceParams, name: str) -> float:
    return p.E_Jt_A if name == "E_Jt" else getattr(p, name)


def set_knobs(p: DeviceParams, knobs: dict[str, float]) -> DeviceParams:
    changes = dict(knobs)
    if "E_Jt" in changes:
        ejt = changes.pop("E_Jt")
        changes.update(E_Jt_A=ejt, E_Jt_B=ejt)
    return p.replace(**changes)


@dataclass(frozen=True)
class ScanSettings:
    """Probe grid: windows of ``+-half_width_GHz`` with ``points`` samples around every kept level.

    ``half_width_GHz = None`` picks 0.5 GHz for the full device and 20 MHz
    for the bare core, whose resonances are far narrower.
    """

    half_width_GHz: float | None = None
    points: int = 2001
    threshold: float = 0.9

    def __post_init__(self) -> None:
        if (self.half_width_GHz is not None and self.half_width_GHz <= 0) or self.points < 3:
            raise ConfigError("scan needs a positive half width and at least 3 points")
        if not 0 < self.threshold < 1:
            raise ConfigError("scan threshold must lie in (0, 1)")

    def half_width(self, bare_core: bool = False) -> float:
        if self.half_width_GHz is not None:
            return self.half_width_GHz
        return 0.02 if bare_core else 0.5

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScanSettings:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scan keys: {', '.join(unknown)}", key=unknown[0])
        return cls(**data)


@dataclass(frozen=True)
class PeakMetrics:
    peak_fidelity: float
    peak_frequency_GHz: float
    bandwidth_MHz: float


def evaluate_peak(p: DeviceParams, target: str = "R", t: TruncationScheme | None = None,
                  scan: ScanSettings | None = None, bare_core: bool = False,
                  with_bandwidth: bool = True) -> PeakMetrics:
    """Refined ``max_omega F_target`` and its bandwidth for a device with resolved design frequency."""
    t = t or TruncationScheme()
    scan = scan or ScanSettings()
    s = solve_spectrum(p, t, bare_core=bare_core)
    cm = coupling_model(p, bare_core=bare_core)
    curve = fidelity_curve(s, cm, frequency_grid(s.omega_0n, scan.half_width(bare_core), scan.points))
    w, f = peak(curve, target)
    bw = to_mhz(bandwidth(curve, scan.threshold, target)) if with_bandwidth else float("nan")
    return PeakMetrics(peak_fidelity=f, peak_frequency_GHz=w / TWO_PI, bandwidth_MHz=bw)


@dataclass
class StudyResult:
    """Outcome of one optimization, sample or sweep point.

    ``initial_peak_fidelity`` is the value before any knob adaptation (Monte
    Carlo grey points); ``peak_fidelity`` is the final value.
    """

    label: str
    knobs: dict[str, float]
    peak_fidelity: float
    peak_frequency_GHz: float
    bandwidth_MHz: float
    evaluations: int = 0
    iterations: int = 0
    initial_peak_fidelity: float | None = None
    adapted: bool = False
    converged: bool = True
    error: str | None = None
    params: DeviceParams | None = field(default=None, repr=False)


RESULT_COLUMNS = ("label", "n_g_a", "n_g_b", "phi_ext_over_pi", "E_Jt", "initial_peak_fidelity", "peak_fidelity",
                  "peak_frequency_GHz", "bandwidth_MHz", "adapted", "evaluations", "iterations", "converged",
                  "error")


def results_to_csv(results: Iterable[StudyResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    fmt = lambda v: "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.10f}"
    for r in results:
        k = r.knobs
        w.writerow([r.label, fmt(k.get("n_g_a")), fmt(k.get("n_g_b")),
                    fmt(k["phi_ext"] / math.pi if "phi_ext" in k else None), fmt(k.get("E_Jt")),
                    fmt(r.initial_peak_fidelity), fmt(r.peak_fidelity), fmt(r.peak_frequency_GHz),
                    fmt(r.bandwidth_MHz), int(r.adapted), r.evaluations, r.iterations, int(r.converged),
                    r.error or ""])
    return buf.getvalue()


class _Budget(Exception):
    pass


def optimize_knobs(p: DeviceParams, space: KnobSpace | None = None, target: str = "R",
                   t: TruncationScheme | None = None, scan: ScanSettings | None = None,
                   budget: int = 400, restarts: int = 3, seed: int = 0, tol: float = 1e-4,
                   stop_at: float | None = None, bare_core: bool = False, label: str = "optimize") -> StudyResult:
    """Bounded Nelder-Mead maximization of ``max_omega F_target`` over the knobs.

    The first simplex starts at the knobs of ``p``; ``restarts`` further
    runs start from Latin-hypercube points. A run stops when the objective
    spread of its simplex falls below ``tol``. All runs share ``budget``
    spectral solves, and the search ends early once ``stop_at`` is reached.
    The separation ``d`` is frozen at the design frequency of ``p``.

    Raises :class:`BudgetExhausted` (carrying the best result) only when the
    budget runs out before any run has converged and ``stop_at`` was not met.
    """
    space = space or KnobSpace()
    t = t or TruncationScheme()
    scan = scan or ScanSettings()
    p = resolve_design_frequency(p, t, bare_core)
    best = {"f": -1.0, "x": space.clip(space.read(p))}
    state = {"evals": 0, "iters": 0}

    def objective(x: np.ndarray) -> float:
        if state["evals"] >= budget:
            raise _Budget
        x = space.clip(np.asarray(x, float))
        state["evals"] += 1
        try:
            f = evaluate_peak(space.apply(p, x), target, t, scan, bare_core, with_bandwidth=False).peak_fidelity
        except ChiralQEDError:
            f = 0.0
        if f > best["f"]:
            best["f"], best["x"] = f, x.copy()
        if stop_at is not None and best["f"] >= stop_at:
            raise _Budget
        return -f

    starts = [best["x"].copy()]
    if restarts > 0:
        sampler = qmc.LatinHypercube(d=len(space.names), seed=np.random.default_rng(seed))
        b = np.array(space.bounds)
        starts += list(qmc.scale(sampler.random(restarts), b[:, 0], b[:, 1]))
    b = np.array(space.bounds)
    step = 0.05 * (b[:, 1] - b[:, 0])
    any_converged = False
    exhausted = False
    for x0 in starts:
        simplex = [x0] + [space.clip(x0 + np.where(np.arange(len(x0)) == j, step[j], 0.0))
                          if x0[j] + step[j] <= b[j, 1] else
                          space.clip(x0 - np.where(np.arange(len(x0)) == j, step[j], 0.0))
                          for j in range(len(x0))]
        try:
            res = minimize(objective, x0, method="Nelder-Mead", bounds=space.bounds,
                           options={"initial_simplex": np.array(simplex), "fatol": tol, "xatol": 1e-4,
                                    "maxfev": budget})
            state["iters"] += int(res.nit)
            any_converged = any_converged or bool(res.success)
        except _Budget:
            exhausted = state["evals"] >= budget
            if not exhausted:
                any_converged = True
            break
    x = best["x"]
    final = space.apply(p, x)
    metrics = evaluate_peak(final, target, t, scan, bare_core)
    result = StudyResult(label=label, knobs=dict(zip(space.names, map(float, x))),
                         peak_fidelity=max(metrics.peak_fidelity, best["f"]),
                         peak_frequency_GHz=metrics.peak_frequency_GHz, bandwidth_MHz=metrics.bandwidth_MHz,
                         evaluations=state["evals"], iterations=state["iters"], converged=any_converged,
                         params=final)
    if exhausted and not any_converged:
        raise BudgetExhausted(f"evaluation budget {budget} exhausted", result)
    return result


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def parallel_map(func: Callable, items: Sequence, jobs: int | None = None) -> list:
    """Ordered map over ``items``; runs in worker processes when ``jobs > 1``."""
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(func, items))


def _knobs_of(p: DeviceParams) -> dict[str, float]:
    return {"n_g_a": p.n_g_a, "n_g_b": p.n_g_b, "phi_ext": p.phi_ext, "E_Jt": p.E_Jt_A}


def _mc_task(args) -> StudyResult:
    (i, sample, adapt, space, target, t, scan, threshold, budget, seed, stop_at) = args
    label = f"sample_{i:04d}"
    try:
        m = evaluate_peak(sample, target, t, scan)
    except ChiralQEDError as exc:
        return StudyResult(label=label, knobs=_knobs_of(sample), peak_fidelity=float("nan"),
                           peak_frequency_GHz=float("nan"), bandwidth_MHz=float("nan"),
                           converged=False, error=f"{type(exc).__name__}: {exc}", params=sample)
    result = StudyResult(label=label, knobs=_knobs_of(sample), peak_fidelity=m.peak_fidelity,
                         peak_frequency_GHz=m.peak_frequency_GHz, bandwidth_MHz=m.bandwidth_MHz,
                         initial_peak_fidelity=m.peak_fidelity, params=sample)
    if adapt and m.peak_fidelity < threshold:
        try:
            opt = optimize_knobs(sample, space, target, t, scan, budget=budget, seed=seed + i,
                                 stop_at=stop_at, label=label)
        except BudgetExhausted as exc:
            opt = exc.result
            opt.converged = False
        except ChiralQEDError as exc:
            result.error = f"{type(exc).__name__}: {exc}"
            return result
        opt.initial_peak_fidelity = m.peak_fidelity
        opt.adapted = True
        opt.knobs = {**_knobs_of(sample), **opt.knobs}
        return opt
    return result


def monte_carlo_study(p: DeviceParams, tol: ToleranceSpec | None = None, n: int = 150, adapt: bool = False,
                      space: KnobSpace | None = None, target: str = "R", t: TruncationScheme | None = None,
                      scan: ScanSettings | None = None, threshold: float = 0.99, budget: int = 400,
                      stop_at: float | None = 0.999, jobs: int | None = 1) -> list[StudyResult]:
    """Peak fidelity of ``n`` fabrication samples at the knobs of ``p``.

    With ``adapt`` every sample below ``threshold`` is re-optimized (search
    stops once ``stop_at`` is reached). The contact separation stays at the
    nominal device's value. Per-sample failures are recorded in ``error``.
    """
    tol = tol or ToleranceSpec()
    t = t or TruncationScheme()
    scan = scan or ScanSettings()
    space = space or KnobSpace()
    p = resolve_design_frequency(p, t)
    samples = sample_fabrication(p, tol, n)
    tasks = [(i, s, adapt, space, target, t, scan, threshold, budget, tol.seed, stop_at)
             for i, s in enumerate(samples)]
    return parallel_map(_mc_task, tasks, jobs)


@dataclass
class LandscapeMap:
    """Peak fidelity and bandwidth over ``n_g`` (rows, ``n_g,a = n_g,b``) and ``phi_ext`` (columns)."""

    n_g: np.ndarray
    phi_ext: np.ndarray
    peak_fidelity: np.ndarray
    bandwidth_MHz: np.ndarray
    peak_frequency_GHz: np.ndarray
    target: str = "R"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_g", "phi_ext_over_pi", "peakF", "bandwidth_MHz", "peak_frequency_GHz"])
        for i, g in enumerate(self.n_g):
            for j, ph in enumerate(self.phi_ext):
                w.writerow([f"{g:.10f}", f"{ph / math.pi:.10f}", f"{self.peak_fidelity[i, j]:.10e}",
                            f"{self.bandwidth_MHz[i, j]:.10e}", f"{self.peak_frequency_GHz[i, j]:.10f}"])
        return buf.getvalue()


def _landscape_task(args) -> tuple[float, float, float]:
    p, target, t, scan, bare_core = args
    try:
        m = evaluate_peak(p, target, t, scan, bare_core)
    except ChiralQEDError:
        return float("nan"), float("nan"), float("nan")
    return m.peak_fidelity, m.bandwidth_MHz, m.peak_frequency_GHz


def landscape_scan(p: DeviceParams, ng_values: Sequence[float], phi_values: Sequence[float], target: str = "R",
                   t: TruncationScheme | None = None, scan: ScanSettings | None = None,
                   bare_core: bool = False, jobs: int | None = 1) -> LandscapeMap:
    """Dense map of peak fidelity and bandwidth with ``d`` frozen at the design of ``p``."""
    t = t or TruncationScheme()
    scan = scan or ScanSettings()
    p = resolve_design_frequency(p, t, bare_core)
    ng = np.asarray(ng_values, float)
    phi = np.asarray(phi_values, float)
    tasks = [(p.replace(n_g_a=float(g), n_g_b=float(g), phi_ext=float(f)), target, t, scan, bare_core)
             for g in ng for f in phi]
    out = np.array(parallel_map(_landscape_task, tasks, jobs)).reshape(ng.size, phi.size, 3)
    return LandscapeMap(n_g=ng, phi_ext=phi, peak_fidelity=out[..., 0], bandwidth_MHz=out[..., 1],
                        peak_frequency_GHz=out[..., 2], target=target)


def _sweep_task(args) -> StudyResult:
    i, p, ejt, space, target, t, scan, budget, seed, stop_at = args
    label = f"ejt_{i:04d}"
    q = p.replace(E_Jt_A=float(ejt), E_Jt_B=float(ejt))
    try:
        r = optimize_knobs(q, space, target, t, scan, budget=budget, seed=seed + i, stop_at=stop_at, label=label)
    except BudgetExhausted as exc:
        r = exc.result
        r.converged = False
    except ChiralQEDError as exc:
        return StudyResult(label=label, knobs={"E_Jt": float(ejt)}, peak_fidelity=float("nan"),
                           peak_frequency_GHz=float("nan"), bandwidth_MHz=float("nan"), converged=False,
                           error=f"{type(exc).__name__}: {exc}")
    r.knobs["E_Jt"] = float(ejt)
    return r


def frequency_tunability_sweep(p: DeviceParams, ejt_values: Sequence[float], space: KnobSpace | None = None,
                               target: str = "R", t: TruncationScheme | None = None,
                               scan: ScanSettings | None = None, budget: int = 400, seed: int = 0,
                               stop_at: float | None = 0.999, jobs: int | None = 1) -> list[StudyResult]:
    """Optimize ``(n_g, phi_ext)`` at each transmon Josephson energy.

    ``d`` stays at the nominal device's value, so only ``E_Jt`` and the knobs
    change between points.
    """
    space = space or KnobSpace()
    t = t or TruncationScheme()
    lo, hi = space.E_Jt
    ejt = np.asarray(ejt_values, float)
    if np.any(ejt < lo) or np.any(ejt > hi):
        raise ConfigError(f"E_Jt values must lie in [{lo}, {hi}]")
    p = resolve_design_frequency(p, t)
    sub = dataclasses.replace(space, tune_ejt=False)
    tasks = [(i, p, e, sub, target, t, scan, budget, seed, stop_at) for i, e in enumerate(ejt)]
    return parallel_map(_sweep_task, tasks, jobs)
