"""Experiment grids over (sweep value, learner, method, seed) with PEHE reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .architecture import ARCHITECTURE_VERSION
from .htce_blocks import Ablation
from .learners import VARIANTS, TrainConfig, train_baseline, train_htce
from .simbench import FIXED_TARGET_SIZES, SimConfig, simulate

logger = logging.getLogger(__name__)

SWEEPS = ("benchmark", "ablation", "alpha_sweep", "ntarget_sweep", "kappa_sweep")
METHODS = ("target", "shared", "no_po_sharing", "no_orth_z", "no_orth_po", "htce")
ABLATION_METHODS = ("no_po_sharing", "no_orth_z", "no_orth_po")

RECORD_COLUMNS = ["sweep", "sweep_value", "learner", "method", "seed", "pehe", "wallclock_s"]
AGGREGATE_COLUMNS = ["sweep", "sweep_value", "learner", "method", "n_runs", "mean_pehe", "std_error"]

DEFAULT_SWEEP_VALUES = {
    "benchmark": [None],
    "ablation": [None],
    "alpha_sweep": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    "ntarget_sweep": list(FIXED_TARGET_SIZES),
    "kappa_sweep": [[kr, kt] for kr in (0.0, 2.0, 10.0) for kt in (0.0, 2.0, 5.0, 10.0)],
}
DEFAULT_METHODS = {
    "benchmark": ["target", "shared", "htce"],
    "ablation": ["no_po_sharing", "no_orth_z", "no_orth_po", "htce"],
    "alpha_sweep": ["target", "shared", "htce"],
    "ntarget_sweep": ["target", "htce"],
    "kappa_sweep": ["target", "htce"],
}


def pehe(tau_hat: np.ndarray, tau_true: np.ndarray) -> float:
    """Root mean squared error between estimated and true CATE."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64).reshape(-1)
    tau_true = np.asarray(tau_true, dtype=np.float64).reshape(-1)
    if tau_hat.shape != tau_true.shape:
        raise ValueError(f"length mismatch: {tau_hat.shape} vs {tau_true.shape}")
    if tau_hat.size == 0:
        raise ValueError("pehe of an empty vector")
    return float(np.sqrt(np.mean((tau_hat - tau_true) ** 2)))


def stable_seed(*parts) -> int:
    """Seed derived from a hash of ``parts``; stable across processes and runs."""
    text = json.dumps([str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") & 0x7FFF_FFFF


def format_sweep_value(sweep: str, value) -> str:
    if value is None:
        return "default"
    if sweep == "kappa_sweep":
        kr, kt = value
        return f"{float(kr):g}:{float(kt):g}"
    if sweep == "ntarget_sweep":
        return str(int(value))
    return f"{float(value):g}"


@dataclass
class ExperimentSpec:
    sweep: str = "benchmark"
    learners: list[str] = field(default_factory=lambda: list(VARIANTS))
    methods: list[str] | None = None
    sim: dict = field(default_factory=dict)
    sweep_values: list | None = None
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    train: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.methods is None:
            self.methods = list(DEFAULT_METHODS.get(self.sweep, ["htce"]))
        if self.sweep_values is None:
            self.sweep_values = list(DEFAULT_SWEEP_VALUES.get(self.sweep, [None]))
        self.validate()

    def validate(self) -> None:
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep {self.sweep!r}")
        if not self.learners or not self.seeds:
            raise ValueError("learners and seeds must be nonempty")
        bad = [l for l in self.learners if l not in VARIANTS]
        if bad:
            raise ValueError(f"unknown learners {bad}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        for v in self.sweep_values:
            self.sim_config(v, self.seeds[0])  # raises on out-of-range values
        unknown = set(self.train) - {f.name for f in fields(TrainConfig)} | ({"seed"} & set(self.train))
        if unknown:
            raise ValueError(f"unsupported train overrides: {sorted(unknown)}")

    def sim_config(self, value, seed: int) -> SimConfig:
        """Simulation config of one (sweep value, seed) cell."""
        d = dict(self.sim)
        if self.sweep == "alpha_sweep":
            if not 0.0 <= float(value) <= 1.0:
                raise ValueError(f"alpha {value} outside [0, 1]")
            d["alpha"] = float(value)
        elif self.sweep == "ntarget_sweep":
            if int(value) < 20:
                raise ValueError(f"n_target {value} too small")
            d["n_target"] = int(value)
        elif self.sweep == "kappa_sweep":
            kr, kt = value
            if kr < 0 or kt < 0:
                raise ValueError("kappa values must be non-negative")
            d["kappa_source"], d["kappa_target"] = float(kr), float(kt)
        elif value is not None:
            raise ValueError(f"sweep {self.sweep!r} takes no sweep values")
        # same draw of partition/coefficients/covariates for every sweep value of a seed
        d.setdefault("seed", 0)
        d["seed"] = stable_seed("data", self.seed, d["seed"], seed)
        return SimConfig.from_dict(d)

    def cells(self) -> list[dict]:
        out = []
        for value in self.sweep_values:
            label = format_sweep_value(self.sweep, value)
            for seed in self.seeds:
                for learner in self.learners:
                    for method in self.methods:
                        out.append(dict(sweep=self.sweep, sweep_value=label, raw_value=value,
                                        learner=learner, method=method, seed=seed))
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ExperimentSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Record:
    sweep: str
    sweep_value: str
    learner: str
    method: str
    seed: int
    pehe: float
    wallclock_s: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class Aggregate:
    sweep: str
    sweep_value: str
    learner: str
    method: str
    n_runs: int
    mean_pehe: float
    std_error: float


@dataclass
class EvalReport:
    spec: dict
    records: list[Record]

    @property
    def aggregates(self) -> list[Aggregate]:
        return aggregate(self.records)

    @property
    def failures(self) -> list[Record]:
        return [r for r in self.records if r.failed]

    def values(self, learner: str, method: str, sweep_value: str = "default") -> list[float]:
        return [
            r.pehe for r in self.records
            if r.learner == learner and r.method == method and r.sweep_value == sweep_value and not r.failed
        ]

    def cell(self, learner: str, method: str, sweep_value: str = "default") -> Aggregate:
        for a in self.aggregates:
            if (a.learner, a.method, a.sweep_value) == (learner, method, sweep_value):
                return a
        raise KeyError((learner, method, sweep_value))


def mean_and_stderr(values: Iterable[float]) -> tuple[float, float]:
    """Mean and sample-std / sqrt(n) standard error (0 for a single value)."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def aggregate(records: Iterable[Record]) -> list[Aggregate]:
    groups: dict[tuple, list[float]] = {}
    for r in records:
        key = (r.sweep, r.sweep_value, r.learner, r.method)
        groups.setdefault(key, [])
        if not r.failed:
            groups[key].append(r.pehe)
    out = []
    for key, vals in groups.items():
        mean, se = mean_and_stderr(vals)
        out.append(Aggregate(*key, n_runs=len(vals), mean_pehe=mean, std_error=se))
    return out


# ---------------------------------------------------------------- running


def _train_config(spec: ExperimentSpec, cell: dict) -> TrainConfig:
    seed = stable_seed("train", spec.seed, cell["sweep_value"], cell["learner"], cell["method"], cell["seed"])
    return TrainConfig(**spec.train, seed=seed)


def run_cell(spec: ExperimentSpec, cell: dict) -> Record:
    """Simulate the cell's data, train one learner/method and score it."""
    start = time.perf_counter()
    try:
        data = simulate(spec.sim_config(cell["raw_value"], cell["seed"]))
        cfg = _train_config(spec, cell)
        learner, method = cell["learner"], cell["method"]
        arch = spec.arch or None
        if method == "target":
            model = train_baseline(data.target, learner, "target", cfg, arch=arch and arch.get("baseline"))
        elif method == "shared":
            model = train_baseline(data.target, learner, "shared", cfg, source=data.source,
                                   arch=arch and arch.get("baseline"))
        else:
            ablation = Ablation() if method == "htce" else Ablation.named(method)
            model = train_htce(learner, data.source, data.target, cfg, ablation=ablation,
                               arch=arch and arch.get("htce"))
        test = data.target.test
        value = pehe(model.predict_cate(test.x), test.tau)
        error = ""
    except Exception as exc:  # failure policy: record and keep going
        where = ",".join(f"{k}={cell[k]}" for k in ("sweep", "sweep_value", "learner", "method", "seed"))
        logger.warning("cell %s failed: %s", where, exc)
        value, error = math.nan, f"[{where}] {type(exc).__name__}: {exc}"
    return Record(cell["sweep"], cell["sweep_value"], cell["learner"], cell["method"], int(cell["seed"]),
                  value, round(time.perf_counter() - start, 3), error)


def code_fingerprint() -> str:
    """Hash of the modules that determine a cell's result; cached cells go stale when they change."""
    h = hashlib.sha256()
    for name in ("architecture", "htce_blocks", "learners", "nn_core", "simbench"):
        path = Path(__file__).with_name(f"{name}.py")
        h.update(name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _cell_key(spec: ExperimentSpec, cell: dict) -> str:
    payload = {
        "arch_version": ARCHITECTURE_VERSION,
        "code": code_fingerprint(),
        "sim": spec.sim_config(cell["raw_value"], cell["seed"]).to_dict(),
        "train": asdict(_train_config(spec, cell)),
        "arch": spec.arch,
        **{k: cell[k] for k in ("sweep_value", "learner", "method", "seed")},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


def _cached_run(args) -> Record:
    spec, cell, cache_dir = args
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{_cell_key(spec, cell)}.json"
        if path.exists():
            # keyed on the effective configuration, so cells are shared across sweeps
            rec = Record(**json.loads(path.read_text()))
            rec.sweep, rec.sweep_value = cell["sweep"], cell["sweep_value"]
            return rec
    rec = run_cell(spec, cell)
    if path is not None and not rec.failed:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(rec)))
        tmp.replace(path)
    return rec


def max_workers() -> int:
    env = os.environ.get("HTCE_BENCH_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("HTCE_BENCH_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def run_experiment(
    spec: ExperimentSpec,
    cache_dir: str | Path | None = None,
    workers: int | None = None,
    progress: Callable[[int, int, Record], None] | None = None,
) -> EvalReport:
    """Run every cell of ``spec``; failed cells are recorded, not raised.

    ``cache_dir`` stores one JSON file per finished cell so an interrupted grid
    resumes where it stopped.  Cells run in up to ``workers`` processes
    (default: ``HTCE_BENCH_THREADS`` or the CPU count).
    """
    spec.validate()
    cells = spec.cells()
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
    workers = min(workers or max_workers(), len(cells))
    jobs = [(spec, c, cache_dir) for c in cells]
    records: list[Record] = []
    if workers <= 1:
        results = map(_cached_run, jobs)
        for i, rec in enumerate(results):
            records.append(rec)
            if progress:
                progress(i + 1, len(cells), rec)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rec in enumerate(pool.map(_cached_run, jobs)):
                records.append(rec)
                if progress:
                    progress(i + 1, len(cells), rec)
    return EvalReport(spec.to_dict(), records)


# ---------------------------------------------------------------- reports


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_report(report: EvalReport, fmt: str, path: str | Path, aggregate_path: str | Path | None = None) -> Path:
    """Write records (and optionally aggregates) as CSV or JSON.

    Failed cells keep their row with ``pehe`` = nan; the JSON form also
    carries the error message.
    """
    if not report.records:
        raise ValueError("report has no records")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for r in report.records:
                writer.writerow([r.sweep, r.sweep_value, r.learner, r.method, r.seed, _fmt(r.pehe), _fmt(r.wallclock_s)])
        if aggregate_path is not None:
            with open(aggregate_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(AGGREGATE_COLUMNS)
                for a in report.aggregates:
                    writer.writerow([a.sweep, a.sweep_value, a.learner, a.method, a.n_runs,
                                     _fmt(a.mean_pehe), _fmt(a.std_error)])
    elif fmt == "json":
        payload = {
            "spec": report.spec,
            "records": [asdict(r) for r in report.records],
            "aggregates": [asdict(a) for a in report.aggregates],
        }
        path.write_text(json.dumps(payload, indent=2, allow_nan=True))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_records_csv(path: str | Path) -> list[Record]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        return [
            Record(row["sweep"], row["sweep_value"], row["learner"], row["method"], int(row["seed"]),
                   float(row["pehe"]), float(row["wallclock_s"]),
                   "" if math.isfinite(float(row["pehe"])) else "failed")
            for row in reader
        ]


def read_report_json(path: str | Path) -> EvalReport:
    payload = json.loads(Path(path).read_text())
    return EvalReport(payload["spec"], [Record(**r) for r in payload["records"]])


def write_run_outputs(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.csv",
        "aggregates": out / "aggregates.csv",
        "json": out / "report.json",
    }
    emit_report(report, "csv", paths["records"], paths["aggregates"])
    emit_report(report, "json", paths["json"])
    return paths


def table(report: EvalReport, sweep_value: str = "default") -> str:
    """Plain-text grid: rows are methods, columns are learners, cells mean ± s.e."""
    learners = [l for l in VARIANTS if l in report.spec["learners"]]
    methods = [m for m in METHODS if m in report.spec["methods"]]
    aggs = {(a.learner, a.method): a for a in report.aggregates if a.sweep_value == sweep_value}
    lines = ["method".ljust(16) + "".join(l.ljust(18) for l in learners)]
    for m in methods:
        row = m.ljust(16)
        for l in learners:
            a = aggs.get((l, m))
            row += (f"{a.mean_pehe:.3f} ± {a.std_error:.3f}" if a and a.n_runs else "n/a").ljust(18)
        lines.append(row)
    return "\n".join(lines)
