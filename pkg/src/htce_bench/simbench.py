"""Semi-synthetic source/target benchmark with known potential outcomes.

Covariates come either from a synthetic generator or from a CSV file.  The
full feature set is split into shared, source-private and target-private
blocks; each domain sees ``[shared | own private]`` in that column order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal

import numpy as np

from .nn_core import sigmoid

Domain = Literal["source", "target"]
DOMAINS: tuple[str, str] = ("source", "target")

SPLIT_FRACTIONS = (0.56, 0.24, 0.20)
FIXED_TARGET_SIZES = (100, 200, 300, 500, 1000, 2000, 4000)


@dataclass(frozen=True)
class FeaturePartition:
    """Column indices (into the full feature set) of each feature block."""

    shared: tuple[int, ...]
    private_source: tuple[int, ...]
    private_target: tuple[int, ...]

    def __post_init__(self) -> None:
        for name in ("shared", "private_source", "private_target"):
            cols = getattr(self, name)
            object.__setattr__(self, name, tuple(int(c) for c in cols))
            if len(getattr(self, name)) < 1:
                raise ValueError(f"partition block {name!r} is empty")
        for cols in (self.source_columns, self.target_columns):
            if len(set(cols)) != len(cols):
                raise ValueError("shared and private columns overlap")

    @classmethod
    def from_sizes(cls, d_shared: int, d_private_source: int, d_private_target: int) -> "FeaturePartition":
        """Contiguous layout: shared, then source-private, then target-private."""
        a, b = d_shared, d_shared + d_private_source
        return cls(
            tuple(range(a)),
            tuple(range(a, b)),
            tuple(range(b, b + d_private_target)),
        )

    @property
    def d_shared(self) -> int:
        return len(self.shared)

    @property
    def d_private_source(self) -> int:
        return len(self.private_source)

    @property
    def d_private_target(self) -> int:
        return len(self.private_target)

    def d_private(self, domain: str) -> int:
        return self.d_private_source if domain == "source" else self.d_private_target

    def d_domain(self, domain: str) -> int:
        return self.d_shared + self.d_private(domain)

    @property
    def source_columns(self) -> tuple[int, ...]:
        return self.shared + self.private_source

    @property
    def target_columns(self) -> tuple[int, ...]:
        return self.shared + self.private_target

    def columns(self, domain: str) -> tuple[int, ...]:
        if domain == "source":
            return self.source_columns
        if domain == "target":
            return self.target_columns
        raise ValueError(f"unknown domain {domain!r}")

    def shared_slice(self) -> slice:
        """Shared block inside a domain feature vector."""
        return slice(0, self.d_shared)

    def private_slice(self, domain: str) -> slice:
        return slice(self.d_shared, self.d_domain(domain))

    @property
    def n_columns(self) -> int:
        return max(self.shared + self.private_source + self.private_target) + 1


@dataclass
class SimConfig:
    alpha: float = 0.5
    beta: float = 0.5
    kappa_source: float = 1.0
    kappa_target: float = 1.0
    n_source: int = 3000
    n_target: int = 300
    d_full: int = 30
    partition: FeaturePartition | None = None
    noise_std: float = 0.1
    coefficient_param_a: float = -10.0
    coefficient_param_b: float = 10.0
    coefficient_law: str = "normal"
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.partition, dict):
            self.partition = FeaturePartition(**self.partition)
        self.validate()

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.kappa_source < 0 or self.kappa_target < 0:
            raise ValueError("kappa must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.n_target < 20:
            raise ValueError("n_target must be at least 20 to survive the 56/24/20 split")
        if self.n_source < 1:
            raise ValueError("n_source must be positive")
        if self.coefficient_law not in ("normal", "uniform"):
            raise ValueError(f"unknown coefficient law {self.coefficient_law!r}")
        if self.partition is not None and self.partition.n_columns > self.d_full:
            raise ValueError("partition references columns beyond d_full")

    def kappa(self, domain: str) -> float:
        return self.kappa_source if domain == "source" else self.kappa_target

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.partition is not None:
            d["partition"] = {k: list(v) for k, v in d["partition"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class CoefficientSet:
    shared: np.ndarray  # (2, D_S), row w
    private_source: np.ndarray  # (2, D_pR)
    private_target: np.ndarray  # (2, D_pT)
    all_source: np.ndarray  # (D_R,)
    all_target: np.ndarray  # (D_T,)

    def private(self, domain: str) -> np.ndarray:
        return self.private_source if domain == "source" else self.private_target

    def all(self, domain: str) -> np.ndarray:
        return self.all_source if domain == "source" else self.all_target


@dataclass
class Dataset:
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray
    pi: np.ndarray
    domain: str = "target"
    d_shared: int | None = None  # width of the leading shared block of x

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.x[idx], self.w[idx], self.y[idx], self.mu0[idx], self.mu1[idx],
            self.tau[idx], self.pi[idx], self.domain, self.d_shared,
        )

    @classmethod
    def concat(cls, parts: list["Dataset"]) -> "Dataset":
        return cls(
            *(np.concatenate([getattr(p, f) for p in parts]) for f in ("x", "w", "y", "mu0", "mu1", "tau", "pi")),
            domain=parts[0].domain,
            d_shared=parts[0].d_shared,
        )


@dataclass
class SplitDataset:
    train: Dataset
    validation: Dataset
    test: Dataset

    @property
    def domain(self) -> str:
        return self.train.domain

    def full(self) -> Dataset:
        return Dataset.concat([self.train, self.validation, self.test])


@dataclass
class BenchmarkData:
    """One simulated source/target pair plus everything needed to reproduce it."""

    config: SimConfig
    partition: FeaturePartition
    coefficients: CoefficientSet
    source: Dataset
    target: SplitDataset
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------- sampling


def sample_partition(d_full: int, rng: np.random.Generator) -> FeaturePartition:
    """Draw block sizes from U{5..floor(d_full/3)} and disjoint random columns."""
    if d_full < 15:
        raise ValueError("d_full must be at least 15 (three blocks of at least 5 features)")
    hi = d_full // 3
    d_s, d_pr, d_pt = (int(v) for v in rng.integers(5, hi + 1, size=3))
    perm = rng.permutation(d_full)
    return FeaturePartition(
        tuple(sorted(perm[:d_s])),
        tuple(sorted(perm[d_s:d_s + d_pr])),
        tuple(sorted(perm[d_s + d_pr:d_s + d_pr + d_pt])),
    )


def sample_domain_sizes(n_full: int, rng: np.random.Generator, n_target: int | None = None) -> tuple[int, int]:
    """N_T ~ U{100..500} (unless fixed), N_R ~ U{1000..n_full - N_T}."""
    if n_full < 1500:
        raise ValueError("n_full must be at least 1500")
    if n_target is None:
        n_target = int(rng.integers(100, 501))
    elif n_target not in FIXED_TARGET_SIZES:
        raise ValueError(f"fixed n_target must be one of {FIXED_TARGET_SIZES}")
    if n_full - n_target < 1000:
        raise ValueError("n_full too small for the requested target size")
    n_source = int(rng.integers(1000, n_full - n_target + 1))
    return n_target, n_source


def minmax_scale(x: np.ndarray) -> np.ndarray:
    """Scale each column into [0, 1]; constant columns become 0.5."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    const = span == 0
    out = (x - lo) / np.where(const, 1.0, span)
    out[:, const] = 0.5
    return out


def generate_covariates(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    return minmax_scale(rng.standard_normal((n, d)))


def load_covariates_csv(path: str | Path, schema: dict | str | Path | None = None) -> tuple[np.ndarray, FeaturePartition | None, list[str]]:
    """Read a numeric CSV with a header row, min-max scaling every column.

    ``schema`` (a dict or a JSON file path) lists ``shared``, ``private_source``
    and ``private_target`` column names; when given, the returned partition
    indexes into the CSV's columns.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    x = minmax_scale(np.array(rows))
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: non-finite values")

    partition = None
    if schema is not None:
        if not isinstance(schema, dict):
            schema = json.loads(Path(schema).read_text())
        index = {name: i for i, name in enumerate(header)}
        blocks = []
        for key in ("shared", "private_source", "private_target"):
            names = schema.get(key)
            if not names:
                raise ValueError(f"schema is missing a non-empty {key!r} list")
            missing = [n for n in names if n not in index]
            if missing:
                raise ValueError(f"schema columns not in CSV: {missing}")
            blocks.append(tuple(index[n] for n in names))
        partition = FeaturePartition(*blocks)
    return x, partition, header


def draw_coefficients(partition: FeaturePartition, config: SimConfig, rng: np.random.Generator) -> CoefficientSet:
    a, b = config.coefficient_param_a, config.coefficient_param_b
    if config.coefficient_law == "normal":
        draw = lambda *shape: rng.normal(a, b, size=shape)  # noqa: E731
    else:
        draw = lambda *shape: rng.uniform(a, b, size=shape)  # noqa: E731
    return CoefficientSet(
        shared=draw(2, partition.d_shared),
        private_source=draw(2, partition.d_private_source),
        private_target=draw(2, partition.d_private_target),
        all_source=draw(partition.d_domain("source")),
        all_target=draw(partition.d_domain("target")),
    )


def potential_outcome_means(
    x_domain: np.ndarray, partition: FeaturePartition, coeffs: CoefficientSet, config: SimConfig, domain: str
) -> tuple[np.ndarray, np.ndarray]:
    d = partition.d_domain(domain)
    if x_domain.ndim != 2 or x_domain.shape[1] != d:
        raise ValueError(f"{domain} covariates must have {d} columns, got {x_domain.shape}")
    xs = x_domain[:, partition.shared_slice()]
    xp = x_domain[:, partition.private_slice(domain)]
    # the last term carries no treatment index, so it is common to both arms
    common = (x_domain @ coeffs.all(domain)) / d
    mus = []
    for w in (0, 1):
        shared_term = (xs @ coeffs.shared[w]) / partition.d_shared
        private_term = (xp @ coeffs.private(domain)[w]) / partition.d_private(domain)
        mus.append(
            config.alpha * shared_term
            + (1.0 - config.alpha) * (config.beta * private_term + (1.0 - config.beta) * common)
        )
    return mus[0], mus[1]


def simulate_outcomes(
    x_domain: np.ndarray,
    partition: FeaturePartition,
    coeffs: CoefficientSet,
    config: SimConfig,
    domain: str,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Noiseless means and noisy potential outcomes; one noise draw per unit."""
    mu0, mu1 = potential_outcome_means(x_domain, partition, coeffs, config, domain)
    eps = rng.normal(0.0, config.noise_std, size=len(mu0)) if config.noise_std > 0 else np.zeros(len(mu0))
    return mu0, mu1, mu0 + eps, mu1 + eps


def assign_treatments(
    mu0: np.ndarray, mu1: np.ndarray, kappa: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    if mu0.shape != mu1.shape:
        raise ValueError("mu0 and mu1 differ in shape")
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    pi = sigmoid(kappa * (mu1 - mu0))
    w = (rng.random(len(pi)) < pi).astype(np.int64)
    return w, pi


def split_sizes(n: int) -> tuple[int, int, int]:
    if n < 20:
        raise ValueError("need at least 20 rows for a 56/24/20 split")
    n_val = math.floor(n * SPLIT_FRACTIONS[1])
    n_test = math.floor(n * SPLIT_FRACTIONS[2])
    return n - n_val - n_test, n_val, n_test


def split_dataset(ds: Dataset, rng: np.random.Generator) -> SplitDataset:
    n_train, n_val, _ = split_sizes(len(ds))
    perm = rng.permutation(len(ds))
    return SplitDataset(
        ds.subset(np.sort(perm[:n_train])),
        ds.subset(np.sort(perm[n_train:n_train + n_val])),
        ds.subset(np.sort(perm[n_train + n_val:])),
    )


def make_domain_dataset(
    x_domain: np.ndarray,
    partition: FeaturePartition,
    coeffs: CoefficientSet,
    config: SimConfig,
    domain: str,
    rng: np.random.Generator,
) -> Dataset:
    mu0, mu1, y0, y1 = simulate_outcomes(x_domain, partition, coeffs, config, domain, rng)
    w, pi = assign_treatments(mu0, mu1, config.kappa(domain), rng)
    y = np.where(w == 1, y1, y0)
    return Dataset(x_domain, w, y, mu0, mu1, mu1 - mu0, pi, domain, partition.d_shared)


def simulate(config: SimConfig, covariates: np.ndarray | None = None) -> BenchmarkData:
    """Build one source/target benchmark instance, fully determined by ``config``.

    Without ``covariates`` the full feature pool is synthetic with
    ``n_source + n_target`` rows.  Source and target rows are disjoint.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    if covariates is None:
        full = generate_covariates(config.n_source + config.n_target, config.d_full, rng)
    else:
        full = np.asarray(covariates, dtype=np.float64)
        if full.shape[0] < config.n_source + config.n_target:
            raise ValueError("not enough covariate rows for the requested domain sizes")
    partition = config.partition or sample_partition(full.shape[1], rng)
    if partition.n_columns > full.shape[1]:
        raise ValueError("partition references columns beyond the covariate matrix")
    coeffs = draw_coefficients(partition, config, rng)

    rows = rng.permutation(full.shape[0])
    src_rows = np.sort(rows[: config.n_source])
    tgt_rows = np.sort(rows[config.n_source: config.n_source + config.n_target])
    x_src = full[np.ix_(src_rows, partition.source_columns)]
    x_tgt = full[np.ix_(tgt_rows, partition.target_columns)]

    source = make_domain_dataset(x_src, partition, coeffs, config, "source", rng)
    target = make_domain_dataset(x_tgt, partition, coeffs, config, "target", rng)
    return BenchmarkData(config, partition, coeffs, source, split_dataset(target, rng))


def benchmark_to_csv(data: BenchmarkData, path: str | Path) -> int:
    """Write both domains to one CSV; cells of the other domain's private block stay empty."""
    part = data.partition
    names = (
        [f"s{i}" for i in range(part.d_shared)]
        + [f"pr{i}" for i in range(part.d_private_source)]
        + [f"pt{i}" for i in range(part.d_private_target)]
    )
    parts = [("source", "train", data.source)] + [
        ("target", split, getattr(data.target, split)) for split in ("train", "validation", "test")
    ]
    n_rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "split", *names, "w", "y", "mu0", "mu1", "tau", "pi"])
        for domain, split, ds in parts:
            for i in range(len(ds)):
                xs = [repr(float(v)) for v in ds.x[i]]
                shared, private = xs[: part.d_shared], xs[part.d_shared:]
                if domain == "source":
                    cells = shared + private + [""] * part.d_private_target
                else:
                    cells = shared + [""] * part.d_private_source + private
                writer.writerow(
                    [domain, split, *cells, int(ds.w[i])]
                    + [repr(float(getattr(ds, f)[i])) for f in ("y", "mu0", "mu1", "tau", "pi")]
                )
                n_rows += 1
    return n_rows
