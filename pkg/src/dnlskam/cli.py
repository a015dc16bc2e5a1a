"""Experiment configuration, the staged pipeline, regression goldens and the
command-line entry point."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checks
from .action_frequency import CROSS_KERNEL, CROSS_NOMINAL, FrequencyMap, frequency_table_csv
from .dnls_model import LatticeHamiltonian, build_hamiltonian
from .dnls_sim import build_initial_data, extract_frequencies, integrate
from .errors import ConfigurationError, DnlsKamError, DomainError
from .ft_algebra import FTSeries, ModeLattice, PAIR_RULE, validate_pair
from .kam_engine import KamSchedule, build_dnls_problem, iterate
from .normal_form import homological_residual, normal_form_4
from .resonance_measure import DiophantineParams, histogram_json, measure_scan

OUTPUT_ENV = "DNLSKAM_OUTPUT"
CROSS = {"nominal": CROSS_NOMINAL, "kernel": CROSS_KERNEL}


# configuration --------------------------------------------------------------

@dataclass
class DiophantineSection:
    gamma: float = 1e-4
    tau: float = 5.0
    K_max: int = 20
    J_max: int = 60


@dataclass
class KamSection:
    nu_max: int = 4
    s0: float = 32.0
    r0: float = 0.1
    order_cap: int = 3


@dataclass
class MeasureSection:
    gammas: list = field(default_factory=lambda: [1e-4, 2e-4, 4e-4, 8e-4])
    sample_count: int = 10_000
    c: float = 1.0
    epsilon: float = 1e-3
    cross: str = "nominal"
    box: list = field(default_factory=lambda: [[1e-3, 1.0], [1e-3, 1.0]])


@dataclass
class SimSection:
    xi: list = field(default_factory=lambda: [1e-3, 1e-3])
    order: int = 1
    grid: int = 64
    dt: float = 0.002
    T: float = 500.0
    watch: list = field(default_factory=lambda: [1, 5])
    scheme: str = "integrating_factor_rk4"


@dataclass
class ChecksSection:
    bracket_pairs: int = 200
    bracket_j_max: int = 8
    divisor_limit: int = 50
    birkhoff_j_max: int | None = None
    homological_samples: int = 20
    plane_wave_T: float = 200.0
    plane_wave_grid: int = 256
    two_frequency: bool = False
    two_frequency_T: float = 400.0
    two_frequency_scales: list = field(default_factory=lambda: [2.5e-4, 5e-4, 1e-3])


_SECTIONS = {"diophantine": DiophantineSection, "kam": KamSection, "measure": MeasureSection,
             "sim": SimSection, "checks": ChecksSection}


@dataclass
class ExperimentConfig:
    """One experiment: every stage reads its parameters from here."""

    seed: int
    pair: tuple = (1, 5)
    j_max: int = 8
    degree_cap: int = 6
    fourier_cap: int = 8
    epsilon: float = 1e-3
    xi: tuple = (0.3, 0.2)
    xi_grid: list = field(default_factory=lambda: [[0.1, 0.1], [0.3, 0.2], [0.5, 0.5]])
    diophantine: DiophantineSection = field(default_factory=DiophantineSection)
    kam: KamSection = field(default_factory=KamSection)
    measure: MeasureSection = field(default_factory=MeasureSection)
    sim: SimSection = field(default_factory=SimSection)
    checks: ChecksSection = field(default_factory=ChecksSection)
    output: str = "runs/default"

    def __post_init__(self):
        try:
            self.pair = validate_pair(self.pair)
        except DomainError as exc:
            raise ConfigurationError(f"{exc} (pair must satisfy {PAIR_RULE})") from exc
        for name in ("j_max", "degree_cap", "fourier_cap"):
            if int(getattr(self, name)) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.diophantine.tau < 5:
            raise ConfigurationError("tau must be at least 5")
        if not 0 < self.epsilon <= 1:
            raise ConfigurationError("epsilon must lie in (0, 1]")
        if self.measure.cross not in CROSS:
            raise ConfigurationError(f"measure.cross must be one of {sorted(CROSS)}")
        if self.kam.nu_max < 0:
            raise ConfigurationError("kam.nu_max must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "seed" not in data:
            raise ConfigurationError("config needs a 'seed' (runs are only reproducible with a fixed seed)")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys {unknown}")
        for name, kind in _SECTIONS.items():
            sec = data.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigurationError(f"config section {name!r} must be an object")
            fields = {f.name for f in dataclasses.fields(kind)}
            bad = sorted(set(sec) - fields)
            if bad:
                raise ConfigurationError(f"unknown keys {bad} in section {name!r}")
            data[name] = kind(**sec)
        data["pair"] = tuple(data.get("pair", (1, 5)))
        data["xi"] = tuple(data.get("xi", (0.3, 0.2)))
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pair"] = list(self.pair)
        d["xi"] = list(self.xi)
        return d

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output)


# serialization --------------------------------------------------------------

def clean(obj):
    """JSON-ready copy: numpy scalars to Python, tuples to lists, non-finite
    floats to strings, dict keys to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [clean(obj.real), clean(obj.imag)]
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# pipeline -------------------------------------------------------------------

@dataclass
class ExperimentReport:
    summary: dict
    timings: dict
    directory: Path

    @property
    def exit_code(self) -> int:
        return exit_code(self.summary)


def exit_code(summary: dict) -> int:
    if any(s["status"] == "error" for s in summary["stages"].values()):
        return 1
    return 0 if summary["passed"] else 2


class _Run:
    def __init__(self, directory: Path):
        self.dir = directory
        self.stages = {}
        self.metrics = {}
        self.timings = {}

    def write(self, rel: str, text: str) -> str:
        path = self.dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return rel

    def stage(self, name: str, fn):
        t0 = time.perf_counter()
        files = []
        try:
            fn(files)
            self.stages[name] = {"status": "ok", "files": sorted(files)}
        except Exception as exc:  # every failure is recorded against its stage
            kind = type(exc).__name__
            self.stages[name] = {"status": "error", "error": f"{kind}: {exc}", "files": sorted(files)}
            self.write(f"errors/{name}.txt", traceback.format_exc())
        self.timings[name] = time.perf_counter() - t0

    def metric(self, m: checks.Metric):
        self.metrics[m.name] = m.to_dict()
        self.timings[f"metric:{m.name}"] = m.seconds


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def mode_csv(times, series) -> str:
    return _csv(((t, v.real, v.imag) for t, v in zip(times, series)), ["t", "re", "im"])


def _stage_model(cfg: ExperimentConfig, run: _Run, files):
    lattice = ModeLattice(cfg.j_max, cfg.pair)
    H = build_hamiltonian(lattice, cfg.degree_cap, cfg.fourier_cap)
    files.append(run.write("model/Lambda.json", H.Lambda.to_json()))
    files.append(run.write("model/G.json", H.G.to_json()))
    c = cfg.checks
    run.metric(checks.bracket_structure(c.bracket_pairs, c.bracket_j_max, 4, cfg.seed, cfg.pair))
    run.metric(checks.divisor_scan(c.divisor_limit, cfg.pair))


def _stage_normal_form(cfg: ExperimentConfig, run: _Run, files):
    lattice = ModeLattice(cfg.j_max, cfg.pair)
    H = build_hamiltonian(lattice, cfg.degree_cap, cfg.fourier_cap)
    bf = normal_form_4(H, cfg.pair)
    bf.save(run.dir / "normal_form")
    files.append("normal_form/manifest.json")
    run.metric(checks.birkhoff_identity(cfg.checks.birkhoff_j_max or cfg.j_max, cfg.pair))


def _stage_frequencies(cfg: ExperimentConfig, run: _Run, files):
    fmap = FrequencyMap(cfg.pair[0], cfg.pair[1], cfg.measure.c, cfg.epsilon, CROSS[cfg.measure.cross])
    modes = [j for j in range(-cfg.j_max, cfg.j_max + 1) if j not in (0,) + tuple(cfg.pair)]
    files.append(run.write("frequencies/table.csv", frequency_table_csv(fmap, cfg.xi_grid, modes)))


def _stage_homological(cfg: ExperimentConfig, run: _Run, files):
    d = cfg.diophantine
    run.metric(checks.homological_residual_check(cfg.checks.homological_samples, cfg.j_max, cfg.epsilon,
                                                 d.gamma, cfg.seed, cfg.pair))


def _kam_lines(records) -> str:
    keys = ("nu", "s", "r", "sigma", "gamma", "eps_measured", "eps_schedule", "omega", "excluded")
    return "".join(json.dumps(clean({k: getattr(r, k) for k in keys}), sort_keys=True) + "\n" for r in records)


def _stage_kam(cfg: ExperimentConfig, run: _Run, files):
    k = cfg.kam
    if k.nu_max < 2:
        prob = build_dnls_problem(cfg.pair, cfg.j_max, cfg.xi, cfg.epsilon, cfg.degree_cap, cfg.fourier_cap)
        d = cfg.diophantine
        res = iterate(prob.state, DiophantineParams(1.0, d.tau, d.K_max, d.J_max), k.nu_max, KamSchedule(k.s0, k.r0),
                      k.order_cap)
        files.append(run.write("kam/steps.jsonl", _kam_lines(res.records)))
        run.metric(checks.skipped("kam_contraction", f"nu_max={k.nu_max} < 2 gives no ratio to compare"))
        return
    m = checks.kam_contraction(k.nu_max, cfg.j_max, cfg.epsilon, cfg.xi, k.s0, k.r0, k.order_cap, cfg.pair)
    files.append(run.write("kam/steps.jsonl", _kam_lines(m.artifact.records)))
    m.details.pop("records", None)
    run.metric(m)


def _stage_measure(cfg: ExperimentConfig, run: _Run, files):
    ms = cfg.measure
    if len(ms.gammas) < 2:
        run.metric(checks.skipped("measure_law", "fewer than two gamma values"))
        return
    d = cfg.diophantine
    m = checks.measure_law(tuple(ms.gammas), ms.sample_count, cfg.seed, ms.epsilon, ms.c, CROSS[ms.cross],
                           tuple(map(tuple, ms.box)), d.K_max, d.J_max, pair=cfg.pair)
    scan = m.artifact
    files.append(run.write("measure/scan.csv", _csv(((r["gamma"], r["estimate"], r["ci"]) for r in scan["rows"]),
                                                    ["gamma", "estimate", "ci95"])))
    files.append(run.write("measure/histogram.json", histogram_json(scan) + "\n"))
    run.metric(m)


def _stage_simulation(cfg: ExperimentConfig, run: _Run, files):
    s = cfg.sim
    t0 = time.perf_counter()
    u0 = build_initial_data(s.xi, cfg.pair, s.order, s.grid)
    traj = integrate(u0, s.dt, s.T, s.scheme, watch=tuple(s.watch), sample_every=max(1, round(0.05 / s.dt)),
                     excited=tuple(cfg.pair))
    for n in s.watch:
        files.append(run.write(f"sim/mode_{n}.csv", mode_csv(traj.times, traj.modes[n])))
    est = extract_frequencies(traj, s.watch) if len(traj.times) >= 16 else {}
    frac = float(np.max(traj.energy_outside / traj.mass))
    summary = {"xi": s.xi, "order": s.order, "T": s.T, "dt": s.dt, "grid": s.grid, "mass_drift": traj.mass_drift,
               "energy_outside": frac,
               "frequencies": {str(n): abs(e.frequency) for n, e in est.items()},
               "notes": {str(n): e.notes for n, e in est.items()}}
    files.append(run.write("sim/summary.json", dumps(summary)))
    ok = frac <= 1e-4 and traj.mass_drift <= 1e-8
    run.metric(checks.Metric("stability", frac, 1e-4, ok, {"mass_drift": traj.mass_drift, "T": s.T},
                             time.perf_counter() - t0))
    c = cfg.checks
    run.metric(checks.plane_wave(T=c.plane_wave_T, grid=c.plane_wave_grid))


def _stage_two_frequency(cfg: ExperimentConfig, run: _Run, files):
    c = cfg.checks
    if not c.two_frequency:
        run.metric(checks.skipped("two_frequency", "disabled in config"))
        return
    run.metric(checks.two_frequency(tuple(c.two_frequency_scales), cfg.pair, 1, cfg.sim.dt, c.two_frequency_T,
                                    cfg.sim.grid))


STAGES = (
    ("model", _stage_model),
    ("normal_form", _stage_normal_form),
    ("frequencies", _stage_frequencies),
    ("homological", _stage_homological),
    ("kam", _stage_kam),
    ("measure", _stage_measure),
    ("simulation", _stage_simulation),
    ("two_frequency", _stage_two_frequency),
)


def run_pipeline(cfg: ExperimentConfig, directory=None) -> ExperimentReport:
    """Run every stage, write their files and ``summary.json``.

    A failing stage is recorded with its error and the remaining stages
    still run; metrics a stage did not produce are reported as ``null``.
    Wall-clock times go to ``timings.json`` so the summary is reproducible.
    """
    out = Path(directory) if directory is not None else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(out)
    run.write("config.json", dumps(cfg.to_dict()))
    for name, fn in STAGES:
        run.stage(name, lambda files, fn=fn: fn(cfg, run, files))
    metrics = {}
    for name in checks.ACCEPTANCE_NAMES:
        metrics[name] = run.metrics.get(name, {"value": None, "threshold": None, "pass": None,
                                               "details": {"skipped": "stage did not produce it"}})
    verdicts = [m["pass"] for m in metrics.values() if m["pass"] is not None]
    summary = {"seed": cfg.seed, "pair": list(cfg.pair), "stages": run.stages, "metrics": metrics,
               "passed": bool(verdicts) and all(verdicts)}
    summary = clean(summary)
    run.write("summary.json", dumps(summary))
    run.write("timings.json", dumps(run.timings))
    return ExperimentReport(summary, run.timings, out)


# goldens --------------------------------------------------------------------

@dataclass
class DiffReport:
    passed: bool
    skipped: bool = False
    differences: list = field(default_factory=list)
    message: str = ""

    def text(self) -> str:
        if self.skipped:
            return f"SKIP {self.message}"
        head = "PASS" if self.passed else "FAIL"
        return "\n".join([f"{head} {self.message}".rstrip()] + [f"  {d}" for d in self.differences])


def flatten(obj, prefix="") -> dict:
    """Dotted paths to leaves in canonical (sorted) order."""
    out = {}
    if isinstance(obj, dict):
        for k in sorted(obj):
            out.update(flatten(obj[k], f"{prefix}.{k}" if prefix else str(k)))
    elif isinstance(obj, list):
        if not obj:
            out[prefix] = []
        for i, v in enumerate(obj):
            out.update(flatten(v, f"{prefix}[{i}]"))
    else:
        out[prefix] = obj
    return out


def _tolerance(manifest: dict, path: str) -> tuple[float, float]:
    best = manifest.get("default", {})
    # longest matching prefix wins
    for pre in sorted(manifest.get("fields", {}), key=len):
        if path == pre or path.startswith(pre + ".") or path.startswith(pre + "["):
            best = manifest["fields"][pre]
    return float(best.get("abs", 0.0)), float(best.get("rel", 0.0))


def golden_check(report, goldens_dir, ignore=("details",)) -> DiffReport:
    """Compare a summary with ``goldens_dir/summary.json``.

    Tolerances come from ``goldens_dir/manifest.json``:
    ``{"default": {"abs": a, "rel": r}, "fields": {"metrics.x.value": {...}}}``.
    Paths containing an ``ignore`` component are not compared; a path present
    in the golden but missing from the report is a structural failure.
    """
    goldens_dir = Path(goldens_dir)
    if isinstance(report, (str, Path)):
        report = json.loads(Path(report).read_text())
    golden_path = goldens_dir / "summary.json"
    if not golden_path.exists():
        return DiffReport(True, True, [], f"no golden at {golden_path}; record one with "
                                          f"'dnlskam golden check --report SUMMARY --goldens {goldens_dir} --update'")
    golden = json.loads(golden_path.read_text())
    mpath = goldens_dir / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    skip = set(ignore) | set(manifest.get("ignore", []))

    def keep(path):
        return not any(part.split("[")[0] in skip for part in path.split("."))

    got = {p: v for p, v in flatten(clean(report)).items() if keep(p)}
    want = {p: v for p, v in flatten(golden).items() if keep(p)}
    diffs = []
    for p in sorted(set(want) - set(got)):
        diffs.append(f"structural: {p} missing from report")
    for p in sorted(set(got) - set(want)):
        diffs.append(f"structural: {p} not in golden")
    for p in sorted(set(want) & set(got)):
        a, b = got[p], want[p]
        num = (isinstance(a, (int, float)) and isinstance(b, (int, float))
               and not isinstance(a, bool) and not isinstance(b, bool))
        if num:
            at, rt = _tolerance(manifest, p)
            if abs(a - b) > at + rt * abs(b):
                diffs.append(f"value: {p} = {a!r}, golden {b!r} (abs {at}, rel {rt})")
        elif a != b:
            diffs.append(f"value: {p} = {a!r}, golden {b!r}")
    return DiffReport(not diffs, False, diffs, f"{len(want)} fields compared")


def write_golden(report, goldens_dir, manifest: dict | None = None) -> Path:
    goldens_dir = Path(goldens_dir)
    goldens_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, (str, Path)):
        report = json.loads(Path(report).read_text())
    (goldens_dir / "summary.json").write_text(dumps(report))
    mpath = goldens_dir / "manifest.json"
    if not mpath.exists():
        mpath.write_text(dumps(manifest or {"default": {"abs": 1e-12, "rel": 1e-8}, "fields": {}}))
    return goldens_dir


# command line ---------------------------------------------------------------

def _pair(text: str) -> tuple[int, int]:
    try:
        return validate_pair(int(v) for v in text.split(","))
    except (DomainError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"{exc} (pair must satisfy {PAIR_RULE})")


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v]


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v]


def _span(text: str) -> np.ndarray:
    """``a:b:n`` (n points) or a single value."""
    parts = text.split(":")
    if len(parts) == 1:
        return np.array([float(parts[0])])
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected a:b:n")
    return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))


def _out(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_model_build(args) -> int:
    lattice = ModeLattice(args.j_max, args.pair)
    H = build_hamiltonian(lattice, args.degree_cap, args.fourier_cap)
    out = _out(args.out)
    (out / "Lambda.json").write_text(H.Lambda.to_json())
    (out / "G.json").write_text(H.G.to_json())
    print(json.dumps({"Lambda_terms": len(H.Lambda), "G_terms": len(H.G), "out": str(out)}, sort_keys=True))
    return 0


def cmd_nf_run(args) -> int:
    if args.model:
        src = Path(args.model)
        Lam = FTSeries.from_json((src / "Lambda.json").read_text())
        G = FTSeries.from_json((src / "G.json").read_text())
        H = LatticeHamiltonian(Lam.lattice, Lam, G)
        pair = Lam.lattice.pair
    else:
        H = build_hamiltonian(ModeLattice(args.j_max, args.pair), args.degree_cap, args.fourier_cap)
        pair = args.pair
    bf = normal_form_4(H, pair, args.order_cap)
    bf.save(_out(args.out))
    print(dumps({"G_bar_terms": len(bf.G_bar), "G_hat_terms": len(bf.G_hat), "K_terms": len(bf.K),
                 "residual": homological_residual(H, bf), "overflow": bf.overflow_count}), end="")
    return 0


def cmd_freq_table(args) -> int:
    fmap = FrequencyMap(args.pair[0], args.pair[1], args.c, args.epsilon, CROSS[args.cross])
    pts = [(a, b) for a in _span(args.xi1) for b in _span(args.xi2)]
    modes = args.modes or [j for j in range(-8, 9) if j not in (0,) + tuple(args.pair)]
    text = frequency_table_csv(fmap, pts, modes)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_measure_scan(args) -> int:
    fmap = FrequencyMap(args.pair[0], args.pair[1], args.c, args.epsilon, CROSS[args.cross])
    box = ((args.box[0], args.box[1]), (args.box[2], args.box[3]))
    scan = measure_scan(box, fmap, args.gammas, args.tau, args.K_max, args.J_max, args.samples, args.seed)
    rows = _csv(((r["gamma"], r["estimate"], r["ci"]) for r in scan["rows"]), ["gamma", "estimate", "ci95"])
    if args.out:
        out = _out(args.out)
        (out / "scan.csv").write_text(rows)
        (out / "histogram.json").write_text(histogram_json(scan) + "\n")
    sys.stdout.write(rows)
    return 0


def cmd_kam_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    k = cfg.kam
    prob = build_dnls_problem(cfg.pair, cfg.j_max, cfg.xi, cfg.epsilon, cfg.degree_cap, cfg.fourier_cap)
    d = cfg.diophantine
    res = iterate(prob.state, DiophantineParams(1.0, d.tau, d.K_max, d.J_max), k.nu_max, KamSchedule(k.s0, k.r0),
                  k.order_cap)
    lines = _kam_lines(res.records)
    sys.stdout.write(lines)
    if args.out:
        out = _out(args.out)
        (out / "steps.jsonl").write_text(lines)
        rep = res.report()
        (out / "report.json").write_text(dumps(rep))
    return 0 if res.excluded_at is None else 2


def cmd_sim_run(args) -> int:
    u0 = build_initial_data((args.xi1, args.xi2), args.pair, args.order, args.grid)
    watch = args.watch or list(args.pair)
    traj = integrate(u0, args.dt, args.T, args.scheme, watch=tuple(watch),
                     sample_every=max(1, round(args.sample_dt / args.dt)), excited=tuple(args.pair))
    out = _out(args.out)
    for n in watch:
        (out / f"mode_{n}.csv").write_text(mode_csv(traj.times, traj.modes[n]))
    est = extract_frequencies(traj, watch) if len(traj.times) >= 16 else {}
    summary = {"xi": [args.xi1, args.xi2], "pair": list(args.pair), "order": args.order, "dt": args.dt, "T": args.T,
               "grid": args.grid, "mass_drift": traj.mass_drift,
               "energy_outside": float(np.max(traj.energy_outside / traj.mass)),
               "frequencies": {str(n): abs(e.frequency) for n, e in est.items()},
               "notes": {str(n): e.notes for n, e in est.items()}}
    (out / "summary.json").write_text(dumps(summary))
    sys.stdout.write(dumps(summary))
    return 0


def cmd_pipeline_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    rep = run_pipeline(cfg, args.out)
    for name, m in rep.summary["metrics"].items():
        state = {True: "PASS", False: "FAIL", None: "SKIP"}[m["pass"]]
        print(f"{state} {name}: value={m['value']!r}")
    for name, st in rep.summary["stages"].items():
        if st["status"] == "error":
            print(f"ERROR stage {name}: {st['error']}")
    print(f"summary: {rep.directory / 'summary.json'}")
    return rep.exit_code


def cmd_golden_check(args) -> int:
    if args.update:
        write_golden(args.report, args.goldens)
        print(f"golden written to {args.goldens}")
        return 0
    diff = golden_check(args.report, args.goldens)
    print(diff.text())
    return 0 if diff.passed else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnlskam", description="Quasi-periodic solutions of the derivative NLS: "
                                "normal forms, KAM iteration, resonance measure and simulation.")
    top = p.add_subparsers(dest="group", required=True)

    def group(name, help_text):
        g = top.add_parser(name, help=help_text)
        return g.add_subparsers(dest="command", required=True)

    def lattice_args(q):
        q.add_argument("--pair", type=_pair, default=(1, 5), help="tangential pair n1,n2")
        q.add_argument("--j-max", dest="j_max", type=int, default=8)
        q.add_argument("--degree-cap", dest="degree_cap", type=int, default=6)
        q.add_argument("--fourier-cap", dest="fourier_cap", type=int, default=8)

    def fmap_args(q):
        q.add_argument("--pair", type=_pair, default=(1, 5))
        q.add_argument("--c", type=float, default=0.0, help="conserved mass")
        q.add_argument("--epsilon", type=float, default=1.0)
        q.add_argument("--cross", choices=sorted(CROSS), default="nominal")

    q = group("model", "lattice Hamiltonian").add_parser("build", help="write Lambda and G as JSON")
    lattice_args(q)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_model_build)

    q = group("nf", "order-four normal form").add_parser("run", help="Birkhoff normal form")
    lattice_args(q)
    q.add_argument("--model", help="directory written by 'model build'")
    q.add_argument("--order-cap", dest="order_cap", type=int, default=3)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_nf_run)

    q = group("freq", "frequency maps").add_parser("table", help="CSV of omega and Omega_j over a xi grid")
    fmap_args(q)
    q.add_argument("--xi1", default="0.1:0.5:3", help="a:b:n or a value")
    q.add_argument("--xi2", default="0.1:0.5:3")
    q.add_argument("--modes", type=_ints)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_freq_table)

    q = group("measure", "excluded-set measure").add_parser("scan", help="Monte-Carlo excluded fraction")
    fmap_args(q)
    q.add_argument("--gammas", type=_floats, default=[1e-4, 2e-4, 4e-4, 8e-4])
    q.add_argument("--tau", type=float, default=5.0)
    q.add_argument("--K-max", dest="K_max", type=int, default=20)
    q.add_argument("--J-max", dest="J_max", type=int, default=60)
    q.add_argument("--samples", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--box", type=float, nargs=4, default=[1e-3, 1.0, 1e-3, 1.0], metavar=("A1", "B1", "A2", "B2"))
    q.add_argument("--out")
    q.set_defaults(fn=cmd_measure_scan)

    q = group("kam", "KAM iteration").add_parser("run", help="iterate and print one JSON line per step")
    q.add_argument("--config", required=True)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_kam_run)

    q = group("sim", "pseudo-spectral simulation").add_parser("run", help="integrate torus initial data")
    q.add_argument("--pair", type=_pair, default=(1, 5))
    q.add_argument("--xi1", type=float, default=1e-3)
    q.add_argument("--xi2", type=float, default=1e-3)
    q.add_argument("--order", type=int, choices=(0, 1), default=1)
    q.add_argument("--dt", type=float, default=0.002)
    q.add_argument("--T", type=float, default=100.0)
    q.add_argument("--grid", type=int, default=64)
    q.add_argument("--watch", type=_ints)
    q.add_argument("--scheme", default="integrating_factor_rk4")
    q.add_argument("--sample-dt", dest="sample_dt", type=float, default=0.05)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_sim_run)

    q = group("pipeline", "all stages").add_parser("run", help="run every stage from one config")
    q.add_argument("--config", required=True)
    q.add_argument("--out", help=f"output directory (overrides the config and ${OUTPUT_ENV})")
    q.set_defaults(fn=cmd_pipeline_run)

    q = group("golden", "regression goldens").add_parser("check", help="compare a summary with a golden")
    q.add_argument("--report", required=True, help="summary.json of a pipeline run")
    q.add_argument("--goldens", required=True)
    q.add_argument("--update", action="store_true", help="write the report as the new golden")
    q.set_defaults(fn=cmd_golden_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DnlsKamError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
