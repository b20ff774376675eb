"""Command-line front end: config loading, subcommands and CSV artifacts.

Every subcommand writes ``<command>_<hash>.csv`` and a matching
``<command>_<hash>.manifest.json`` into the output directory. The hash
covers the command, the fully resolved config and the relevant flags, so
identical inputs always map to byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .analytic import GiantAtomParams, analytic_fidelity, fidelity_table
from .circuit import DeviceParams, ToleranceSpec
from .errors import BudgetExhausted, ChiralQEDError, ConfigError, NumericalError
from .hilbert import TruncationScheme
from .scattering import (
    bandwidth, coupling_model, fidelity_curve, frequency_grid, operating_level, peak, resolve_design_frequency,
    to_mhz,
)
from .spectrum import CHANNELS, ring_check, solve_spectrum, sweet_spot
from .tuning import (
    KnobSpace, ScanSettings, StudyResult, default_jobs, frequency_tunability_sweep, landscape_scan,
    monte_carlo_study, optimize_knobs, results_to_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
COMMANDS = ("spectrum", "scatter", "optimize", "montecarlo", "sweep", "landscape", "analytic", "ringcheck")


@dataclass(frozen=True)
class StudySettings:
    """Sizes and budgets of the batch studies."""

    n_samples: int = 150
    budget: int = 400
    restarts: int = 3
    stop_at: float = 0.999
    success_threshold: float = 0.99
    ejt_min: float = 6.0
    ejt_max: float = 22.0
    ejt_points: int = 100
    landscape_ng: tuple[float, float, int] = (0.5, 1.0, 21)
    landscape_phi: tuple[float, float, int] = (0.0, math.pi, 21)
    truncations: tuple[tuple[int, int], ...] = ((3, 10), (4, 8), (4, 10), (5, 12))
    epsilons: tuple[float, ...] = (0.0, 0.001, 0.0046, 0.01, 0.05)
    k0d_values: tuple[float, ...] = (0.25 * math.pi, 0.4 * math.pi, 0.5 * math.pi)
    ring_settings: int = 10
    bare_core_sweet_spot: bool = True

    def __post_init__(self) -> None:
        if self.n_samples < 1 or self.budget < 1 or self.ejt_points < 1 or self.ring_settings < 1:
            raise ConfigError("study counts must be positive")
        if self.restarts < 0:
            raise ConfigError("restarts must be >= 0", key="restarts")
        for name in ("landscape_ng", "landscape_phi"):
            lo, hi, n = getattr(self, name)
            if not (lo <= hi and int(n) >= 1):
                raise ConfigError(f"{name} must be [min, max, points] with min <= max", key=name)
        if not self.truncations:
            raise ConfigError("truncation list is empty", key="truncations")
        object.__setattr__(self, "landscape_ng", (float(self.landscape_ng[0]), float(self.landscape_ng[1]),
                                                  int(self.landscape_ng[2])))
        object.__setattr__(self, "landscape_phi", (float(self.landscape_phi[0]), float(self.landscape_phi[1]),
                                                   int(self.landscape_phi[2])))
        object.__setattr__(self, "truncations", tuple((int(a), int(b)) for a, b in self.truncations))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "k0d_values", tuple(float(k) for k in self.k0d_values))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> StudySettings:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown study keys: {', '.join(unknown)}", key=unknown[0])
        return cls(**data)


SECTIONS = {
    "device": DeviceParams,
    "truncation": TruncationScheme,
    "knobs": KnobSpace,
    "tolerances": ToleranceSpec,
    "scan": ScanSettings,
    "study": StudySettings,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; defaults reproduce the headline device."""

    device: DeviceParams = field(default_factory=DeviceParams)
    truncation: TruncationScheme = field(default_factory=TruncationScheme)
    knobs: KnobSpace = field(default_factory=KnobSpace)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    scan: ScanSettings = field(default_factory=ScanSettings)
    study: StudySettings = field(default_factory=StudySettings)
    output_dir: str = "results"
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {name: getattr(self, name).to_dict() for name in SECTIONS}
        out["output_dir"] = self.output_dir
        out["seed"] = self.seed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        allowed = set(SECTIONS) | {"output_dir", "seed"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", key=unknown[0])
        kw: dict[str, Any] = {}
        for name, typ in SECTIONS.items():
            if name in data:
                section = data[name]
                if not isinstance(section, dict):
                    raise ConfigError(f"section {name} must be an object", key=name)
                try:
                    kw[name] = typ.from_dict(section)
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid {name} section: {exc}", key=_first_bad_key(section)) from exc
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer", key="seed")
        out_dir = data.get("output_dir", "results")
        if not isinstance(out_dir, str):
            raise ConfigError("output_dir must be a string", key="output_dir")
        return cls(output_dir=out_dir, seed=seed, **kw)


def _first_bad_key(section: dict[str, Any]) -> str | None:
    for k, v in section.items():
        if isinstance(v, str):
            return k
    return None


def _line_of(text: str, key: str | None) -> int | None:
    if key is None:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path: str | Path | None) -> RunConfig:
    """Parse a JSON config; errors name the file and line where possible."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return RunConfig.from_dict(data)
    except ConfigError as exc:
        line = _line_of(text, exc.key)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {exc}", key=exc.key) from exc


def config_hash(command: str, cfg: RunConfig, extra: dict[str, Any]) -> str:
    payload = json.dumps({"command": command, "config": cfg.to_dict(), "flags": extra}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def write_artifacts(command: str, cfg: RunConfig, extra: dict[str, Any], csv_text: str,
                    failures: list[str] | None = None, summary: dict[str, Any] | None = None) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(command, cfg, extra)
    csv_path = out / f"{command}_{h}.csv"
    csv_path.write_text(csv_text, encoding="utf-8", newline="")
    manifest = {
        "command": command,
        "artifact": csv_path.name,
        "config": cfg.to_dict(),
        "flags": extra,
        "seed": cfg.seed,
        "code_version": __version__,
        "failures": failures or [],
        "summary": summary or {},
    }
    (out / f"{command}_{h}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                      encoding="utf-8")
    return csv_path


def _device(cfg: RunConfig, bare_core: bool) -> DeviceParams:
    p = cfg.device
    if bare_core and cfg.study.bare_core_sweet_spot:
        g = sweet_spot(p, cfg.truncation.replace(kept_excited=1), bare_core=True)
        p = p.replace(n_g_a=g, n_g_b=g)
    return resolve_design_frequency(p, cfg.truncation, bare_core)


def _fmt(v: float) -> str:
    return f"{v:.10f}"


def cmd_spectrum(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    p = _device(cfg, args.bare_core)
    schemes = [cfg.truncation]
    if args.truncations is not None:
        schemes = [TruncationScheme.from_dims(a, b, kept_excited=max(cfg.truncation.kept_excited, 5),
                                              transmon_charge_cutoff=cfg.truncation.transmon_charge_cutoff)
                   for a, b in args.truncations]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["truncation", "state", "omega_0n_GHz"]
    for c in CHANNELS:
        header += [f"abs_eta_{c}", f"arg_eta_{c}"]
    w.writerow(header + ["cpb_weight"])
    for t in schemes:
        s = solve_spectrum(p, t, bare_core=args.bare_core)
        for n in range(s.e_n.size):
            row = [t.label(), n + 1, _fmt(s.omega_0n[n])]
            for i in range(len(CHANNELS)):
                row += [f"{abs(s.eta[i, n]):.10e}", _fmt(float(np.angle(s.eta[i, n])))]
            w.writerow(row + [f"{s.cpb_weight[n]:.10e}"])
    return buf.getvalue(), [], {"schemes": [t.label() for t in schemes]}


def cmd_scatter(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    p = _device(cfg, args.bare_core)
    scan = cfg.scan
    s = solve_spectrum(p, cfg.truncation, bare_core=args.bare_core)
    cm = coupling_model(p, bare_core=args.bare_core)
    curve = fidelity_curve(s, cm, frequency_grid(s.omega_0n, scan.half_width(args.bare_core), scan.points))
    level = s.omega_0n[operating_level(args.bare_core) - 1]
    w_peak, f_peak = peak(curve, args.target)
    text = curve.to_csv().splitlines()
    rows = [text[0] + ",detuning_level_MHz,detuning_peak_MHz"]
    for line, om in zip(text[1:], curve.omega):
        f = om / (2 * math.pi)
        rows.append(f"{line},{(f - level) * 1e3:.6f},{(om - w_peak) / (2 * math.pi) * 1e3:.6f}")
    bw = to_mhz(bandwidth(curve, scan.threshold, args.target))
    summary = {"peak_fidelity": f_peak, "peak_frequency_GHz": w_peak / (2 * math.pi), "bandwidth_MHz": bw,
               "n_g_a": p.n_g_a, "n_g_b": p.n_g_b, "omega_0n_GHz": [float(x) for x in s.omega_0n]}
    return "\n".join(rows) + "\n", [], summary


def _optimize(cfg: RunConfig, p: DeviceParams, target: str, bare_core: bool = False) -> StudyResult:
    st = cfg.study
    try:
        return optimize_knobs(p, cfg.knobs, target, cfg.truncation, cfg.scan, budget=st.budget,
                              restarts=st.restarts, seed=cfg.seed, bare_core=bare_core)
    except BudgetExhausted as exc:
        return exc.result


def cmd_optimize(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    p = _device(cfg, args.bare_core)
    r = _optimize(cfg, p, args.target, args.bare_core)
    return results_to_csv([r]), [], {"peak_fidelity": r.peak_fidelity, "bandwidth_MHz": r.bandwidth_MHz}


def _failures(results: list[StudyResult]) -> list[str]:
    return [f"{r.label}: {r.error}" for r in results if r.error]


def cmd_montecarlo(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    p = _device(cfg, False)
    nominal = _optimize(cfg, p, args.target)
    st = cfg.study
    results = monte_carlo_study(nominal.params, cfg.tolerances, st.n_samples, args.adapt, cfg.knobs, args.target,
                                cfg.truncation, cfg.scan, st.success_threshold, st.budget, st.stop_at, args.jobs)
    ok = [r for r in results if r.error is None]
    summary = {
        "nominal_knobs": nominal.knobs,
        "nominal_peak_fidelity": nominal.peak_fidelity,
        "fraction_initial_above": float(np.mean([r.initial_peak_fidelity >= st.success_threshold for r in ok]))
        if ok else 0.0,
        "fraction_final_above": float(np.mean([r.peak_fidelity >= st.success_threshold for r in ok])) if ok else 0.0,
    }
    return results_to_csv(results), _failures(results), summary


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    st = cfg.study
    p = _device(cfg, False)
    ejt = np.linspace(st.ejt_min, st.ejt_max, st.ejt_points)
    results = frequency_tunability_sweep(p, ejt, cfg.knobs, args.target, cfg.truncation, cfg.scan, st.budget,
                                         cfg.seed, st.stop_at, args.jobs)
    freqs = [r.peak_frequency_GHz for r in results if r.error is None]
    summary = {"frequency_span_GHz": float(max(freqs) - min(freqs)) if freqs else 0.0,
               "fraction_above": float(np.mean([r.peak_fidelity >= st.success_threshold for r in results]))}
    return results_to_csv(results), _failures(results), summary


def cmd_landscape(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    st = cfg.study
    p = _device(cfg, args.bare_core)
    ng = np.linspace(*st.landscape_ng[:2], st.landscape_ng[2])
    phi = np.linspace(*st.landscape_phi[:2], st.landscape_phi[2])
    m = landscape_scan(p, ng, phi, args.target, cfg.truncation, cfg.scan, args.bare_core,
                       args.jobs)
    failures = [f"n_g={ng[i]:.6f} phi={phi[j]:.6f}" for i, j in zip(*np.nonzero(np.isnan(m.peak_fidelity)))]
    return m.to_csv(), failures, {"max_peak_fidelity": float(np.nanmax(m.peak_fidelity))}


def cmd_analytic(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    st = cfg.study
    text = fidelity_table(st.epsilons, st.k0d_values)
    summary = {"F_R_eps_0.0046_quarter_wave": analytic_fidelity(GiantAtomParams.from_epsilon(0.0046, math.pi / 2))}
    return text, [], summary


def cmd_ringcheck(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, list[str], dict[str, Any]]:
    rng = np.random.default_rng(cfg.seed)
    charges = np.arange(-4, 6, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "E_C", "E_J", "flux", "n_g_a", "n_g_b", "n_g_c", "N0", "relative_mismatch"])
    worst = 0.0
    for i in range(cfg.study.ring_settings):
        ec = float(rng.uniform(0.5, 2.0))
        ej = float(rng.uniform(0.5, 3.0))
        flux = float(rng.uniform(0, 2 * math.pi))
        ng = tuple(float(x) for x in rng.uniform(-1, 1, 3))
        n0 = int(rng.integers(-1, 2))
        err = ring_check(ec, ej, flux, ng, n0, charges)
        worst = max(worst, err)
        w.writerow([i, _fmt(ec), _fmt(ej), _fmt(flux), *(_fmt(x) for x in ng), n0, f"{err:.3e}"])
    if worst > 1e-9:
        raise NumericalError(f"ring and mapped bi-CPB spectra differ by {worst:.3e}")
    return buf.getvalue(), [], {"max_relative_mismatch": worst}


HANDLERS = {
    "spectrum": cmd_spectrum,
    "scatter": cmd_scatter,
    "optimize": cmd_optimize,
    "montecarlo": cmd_montecarlo,
    "sweep": cmd_sweep,
    "landscape": cmd_landscape,
    "analytic": cmd_analytic,
    "ringcheck": cmd_ringcheck,
}


def _truncation_list(text: str) -> list[tuple[int, int]]:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("truncation list is empty")
    out = []
    for item in items:
        m = re.fullmatch(r"\s*(\d+)x(\d+)\s*", item)
        if not m:
            raise argparse.ArgumentTypeError(f"bad truncation {item!r}; use TRANSMONxCPB, e.g. 4x8")
        out.append((int(m.group(1)), int(m.group(2))))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chiralqed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", help="JSON run configuration")
        sp_.add_argument("--jobs", type=int, default=None, help="worker processes (default: available CPUs)")
        sp_.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp_.add_argument("--out", default=None, help="output directory (overrides config)")
        sp_.add_argument("--bare-core", action="store_true", help="couple the CPB core straight to the waveguide")
        sp_.add_argument("--adapt", action="store_true", help="re-optimize Monte Carlo samples below threshold")
        sp_.add_argument("--target", choices=("R", "L"), default=None, help="routing direction to optimize")
        if name == "spectrum":
            sp_.add_argument("--truncations", type=_truncation_list, default=None,
                             help="comma list of TRANSMONxCPB dimensions, e.g. 3x10,4x8,4x10,5x12")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    changes: dict[str, Any] = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        changes["seed"] = args.seed
        changes["tolerances"] = dataclasses.replace(cfg.tolerances, seed=args.seed)
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.jobs is not None and args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.target is None:
        args.target = "L" if args.bare_core else "R"
    try:
        cfg = resolve_config(args)
        if args.jobs is None:
            args.jobs = default_jobs()
        flags = {"bare_core": args.bare_core, "adapt": args.adapt, "target": args.target}
        if args.command == "spectrum" and args.truncations is not None:
            flags["truncations"] = [list(t) for t in args.truncations]
        text, failures, summary = HANDLERS[args.command](cfg, args)
        path = write_artifacts(args.command, cfg, flags, text, failures, summary)
    except ConfigError as exc:
        print(f"chiralqed: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChiralQEDError as exc:
        print(f"chiralqed: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
