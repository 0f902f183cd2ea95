"""Monte Carlo bias and coverage study for tau^2 estimators of the LOR.

Data follow the fixed-intercept binomial random-effects model: for each of
K studies theta_i ~ N(theta, tau2), p_iT = expit(logit(p_C) + theta_i),
X_iC ~ Bin(n_iC, p_C) and X_iT ~ Bin(n_iT, p_iT).  Double-zero and double-n
studies are dropped and replicates left with fewer than 3 studies are
discarded.

Every (method, adjustment policy) pair is evaluated on the same replicate
data.  Random streams are derived from the master seed and the scenario's
fields, so a cell's results do not depend on which other cells run or in
which order.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit, logit

from . import estimators as est_mod
from . import intervals as int_mod
from .effects import AdjustmentPolicy
from .qstat import MetaSample

log = logging.getLogger(__name__)

# unequal study-size sets for K = 5, keyed by their mean
UNEQUAL_SIZES = {
    30: (12, 16, 18, 20, 84),
    60: (24, 32, 36, 40, 168),
    100: (64, 72, 76, 80, 208),
    160: (124, 132, 136, 140, 268),
}
EQUAL_SIZES = (20, 40, 100, 250)
K_LEVELS = (5, 10, 30)
P_C_LEVELS = (0.1, 0.2, 0.5)
THETA_LEVELS = (0.0, 0.1, 0.5, 1.0, 1.5, 2.0)
TAU2_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))

MIN_STUDIES = 3

# methods reported only on always-adjusted tables unless asked otherwise
ALWAYS_ONLY = frozenset({"ssu-model", "ssu-naive", "smu-model", "smu-naive",
                         "fpu-model", "fpu-naive"})
# intervals whose adjustment is fixed to "always"
FIXED_ALWAYS = frozenset({"fpu-model", "fpu-naive"})

CSV_HEADER = ("k", "sizes_label", "p_c", "theta", "tau2", "method", "policy", "bias",
              "median_bias", "coverage", "miss_left", "miss_right", "effective_reps")


class ConfigError(ValueError):
    """Invalid scenario or grid configuration."""


def parse_sizes(label: str | int) -> str:
    """Normalise a size label: ``20``/``n20`` (equal) or ``nbar30`` (unequal set)."""
    text = str(label).strip().lower()
    if text.startswith("nbar"):
        n = int(text[4:])
        if n not in UNEQUAL_SIZES:
            raise ConfigError(f"no unequal size set with mean {n}; choose from {sorted(UNEQUAL_SIZES)}")
        return f"nbar{n}"
    if text.startswith("n"):
        text = text[1:]
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"bad study-size label {label!r}") from None
    if n < 2:
        raise ConfigError(f"study size must be at least 2, got {n}")
    return f"n{n}"


@dataclass(frozen=True)
class ScenarioConfig:
    k: int
    sizes: str
    p_c: float
    theta: float
    tau2: float
    reps: int = 1000
    seed: int = 1
    f: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "sizes", parse_sizes(self.sizes))
        if self.k < MIN_STUDIES:
            raise ConfigError(f"k must be at least {MIN_STUDIES}, got {self.k}")
        if not 0 < self.p_c < 1:
            raise ConfigError(f"p_c must lie in (0, 1), got {self.p_c}")
        if not (math.isfinite(self.tau2) and self.tau2 >= 0):
            raise ConfigError(f"tau2 must be finite and >= 0, got {self.tau2}")
        if not math.isfinite(self.theta):
            raise ConfigError("theta must be finite")
        if not 0 < self.f < 1:
            raise ConfigError(f"f must lie in (0, 1), got {self.f}")
        if self.reps < 1:
            raise ConfigError("reps must be positive")
        if self.sizes.startswith("nbar") and self.k % 5:
            raise ConfigError("unequal size sets need k to be a multiple of 5")
        n_c = self.study_sizes() * self.f
        if np.any(n_c != np.round(n_c)) or np.any(n_c < 1) or np.any(n_c > self.study_sizes() - 1):
            raise ConfigError(f"arm sizes n*f are not positive integers for sizes={self.sizes}, f={self.f}")

    def study_sizes(self) -> np.ndarray:
        if self.sizes.startswith("nbar"):
            return np.tile(np.array(UNEQUAL_SIZES[int(self.sizes[4:])], dtype=float), self.k // 5)
        return np.full(self.k, float(self.sizes[1:]))

    def arm_sizes(self) -> tuple[np.ndarray, np.ndarray]:
        """(n_T, n_C) per study."""
        n = self.study_sizes()
        n_c = np.round(n * self.f)
        return n - n_c, n_c

    @property
    def cell_key(self) -> tuple:
        return (self.k, self.sizes, float(self.p_c), float(self.theta), float(self.tau2))

    def seed_sequence(self) -> np.random.SeedSequence:
        """Stream for this cell: derived from the master seed and the scenario fields."""
        text = "|".join(repr(v) for v in self.cell_key) + f"|f={self.f!r}"
        digest = int.from_bytes(hashlib.sha256(text.encode()).digest()[:16], "little")
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=(digest,))


@dataclass(frozen=True, eq=False)
class Replicate:
    """Counts of the studies that survived the discarding rules."""

    x_t: np.ndarray
    n_t: np.ndarray
    x_c: np.ndarray
    n_c: np.ndarray
    dropped: int = 0

    @property
    def k(self) -> int:
        return self.x_t.size

    def sample(self, policy: AdjustmentPolicy | str) -> MetaSample:
        return MetaSample.from_counts(self.x_t, self.n_t, self.x_c, self.n_c, policy)


def draw_true_effects(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """theta_i ~ N(theta, tau2); exactly theta when tau2 = 0."""
    return cfg.theta + math.sqrt(cfg.tau2) * rng.standard_normal(cfg.k)


def treatment_probs(cfg: ScenarioConfig, theta_i: np.ndarray) -> np.ndarray:
    return expit(logit(cfg.p_c) + theta_i)


def generate_replicate(cfg: ScenarioConfig, rng: np.random.Generator) -> Replicate | None:
    """One simulated meta-analysis, or ``None`` if fewer than 3 studies survive."""
    n_t, n_c = cfg.arm_sizes()
    p_t = treatment_probs(cfg, draw_true_effects(cfg, rng))
    x_c = rng.binomial(n_c.astype(np.int64), cfg.p_c).astype(float)
    x_t = rng.binomial(n_t.astype(np.int64), p_t).astype(float)
    keep = ~(((x_t == 0) & (x_c == 0)) | ((x_t == n_t) & (x_c == n_c)))
    if keep.sum() < MIN_STUDIES:
        return None
    return Replicate(x_t[keep], n_t[keep], x_c[keep], n_c[keep], dropped=int((~keep).sum()))


@dataclass(frozen=True)
class MethodSpec:
    """A method identifier evaluated under one adjustment policy."""

    name: str
    policy: AdjustmentPolicy
    kind: str  # "point" or "interval"


def resolve_methods(estimators: Iterable[str] = (), intervals: Iterable[str] = (),
                    policy_matrix: dict[str, Sequence[str]] | None = None) -> list[MethodSpec]:
    """Expand method identifiers into (method, policy) pairs.

    A trailing ``-only`` or ``-always`` pins the policy; otherwise the
    ``policy_matrix`` entry (or the default: always for SSU/SMU/FPU, both
    policies for the rest) is used.
    """
    policy_matrix = policy_matrix or {}
    out: list[MethodSpec] = []
    for kind, names, table, registered in (
            ("point", estimators, est_mod.ESTIMATORS, est_mod.is_registered),
            ("interval", intervals, int_mod.INTERVALS, int_mod.is_registered)):
        for raw in names:
            name, policies = raw.strip(), None
            for pol in AdjustmentPolicy:
                if name.endswith("-" + pol.value):
                    name, policies = name[: -len(pol.value) - 1], [pol]
            if name not in table:
                raise ConfigError(f"unknown {kind} method {raw!r}; choose from {', '.join(table)}")
            if name == "kd" and not registered("kd"):
                raise ConfigError(f"method 'kd' ({kind}) has no registered implementation")
            if policies is None:
                default = ("always",) if name in ALWAYS_ONLY else ("only", "always")
                policies = [AdjustmentPolicy.parse(p) for p in policy_matrix.get(name, default)]
            if kind == "interval" and name in FIXED_ALWAYS and any(p is not AdjustmentPolicy.ALWAYS for p in policies):
                raise ConfigError(f"{name} is defined on always-adjusted tables only")
            for pol in policies:
                spec = MethodSpec(name, pol, kind)
                if spec not in out:
                    out.append(spec)
    if not out:
        raise ConfigError("at least one estimator or interval is required")
    return out


@dataclass
class MetricsRow:
    k: int
    sizes_label: str
    p_c: float
    theta: float
    tau2: float
    method: str
    policy: str
    bias: float = math.nan
    median_bias: float = math.nan
    coverage: float = math.nan
    miss_left: float = math.nan
    miss_right: float = math.nan
    effective_reps: int = 0
    discarded_reps: int = 0
    errors: int = 0
    kind: str = "point"

    @property
    def cell_key(self) -> tuple:
        return (self.k, self.sizes_label, float(self.p_c), float(self.theta), float(self.tau2))

    def csv_record(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in CSV_HEADER]


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def point_metrics(values: np.ndarray, tau2: float) -> dict:
    """Bias and median bias P(est >= tau2) - P(est <= tau2) over ``values``."""
    n = values.size
    if n == 0:
        return {}
    return {"bias": float(np.mean(values)) - tau2,
            "median_bias": (int(np.sum(values >= tau2)) - int(np.sum(values <= tau2))) / n}


def interval_metrics(lower: np.ndarray, upper: np.ndarray, tau2: float) -> dict:
    n = lower.size
    if n == 0:
        return {}
    left = int(np.sum(tau2 < lower))
    right = int(np.sum(tau2 > upper))
    return {"coverage": (n - left - right) / n, "miss_left": left / n, "miss_right": right / n}


def _evaluate(rep: Replicate, methods: Sequence[MethodSpec], level: float):
    samples = {}
    out = []
    for m in methods:
        try:
            if m.policy not in samples:
                samples[m.policy] = rep.sample(m.policy)
            s = samples[m.policy]
            if m.kind == "point":
                out.append((est_mod.ESTIMATORS[m.name](s).tau2_hat,))
            else:
                ci = int_mod.INTERVALS[m.name](s, level)
                out.append((ci.lower, ci.upper))
        except Exception as exc:  # counted per method, never silently dropped
            log.debug("%s-%s failed: %s", m.name, m.policy.value, exc)
            out.append(None)
    return out


def _run_chunk(cfg: ScenarioConfig, methods: Sequence[MethodSpec], level: float, start: int, stop: int):
    children = cfg.seed_sequence().spawn(cfg.reps)[start:stop]
    results = []
    for child in children:
        rep = generate_replicate(cfg, np.random.default_rng(child))
        results.append(None if rep is None else _evaluate(rep, methods, level))
    return results


def worker_count() -> int:
    """Worker processes: CPU count capped by ``HETVAR_THREADS``."""
    n = os.cpu_count() or 1
    cap = os.environ.get("HETVAR_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"HETVAR_THREADS must be an integer, got {cap!r}") from None
    return n


def run_scenario(cfg: ScenarioConfig, estimators: Iterable[str] = (), intervals: Iterable[str] = (),
                 policy_matrix: dict[str, Sequence[str]] | None = None, level: float = 0.95,
                 workers: int | None = None) -> list[MetricsRow]:
    """Simulate ``cfg.reps`` replicates and aggregate metrics per (method, policy).

    Metrics use the replicates that survived discarding and on which the
    method ran without error; failures are reported in ``MetricsRow.errors``.
    """
    methods = resolve_methods(estimators, intervals, policy_matrix)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or cfg.reps < 4 * workers:
        results = _run_chunk(cfg, methods, level, 0, cfg.reps)
    else:
        bounds = np.linspace(0, cfg.reps, workers + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, cfg, methods, level, int(a), int(b))
                       for a, b in zip(bounds[:-1], bounds[1:])]
            results = [r for fut in futures for r in fut.result()]
    return aggregate(cfg, methods, results)


def aggregate(cfg: ScenarioConfig, methods: Sequence[MethodSpec], results: list) -> list[MetricsRow]:
    kept = [r for r in results if r is not None]
    discarded = len(results) - len(kept)
    rows = []
    for j, m in enumerate(methods):
        ok = [r[j] for r in kept if r[j] is not None]
        row = MetricsRow(cfg.k, cfg.sizes, float(cfg.p_c), float(cfg.theta), float(cfg.tau2),
                         m.name, m.policy.value, effective_reps=len(kept), discarded_reps=discarded,
                         errors=len(kept) - len(ok), kind=m.kind)
        arr = np.array(ok, dtype=float).reshape(len(ok), 1 if m.kind == "point" else 2)
        if m.kind == "point":
            metrics = point_metrics(arr[:, 0], cfg.tau2)
        else:
            metrics = interval_metrics(arr[:, 0], arr[:, 1], cfg.tau2)
        rows.append(replace(row, **metrics))
        if row.errors:
            log.warning("%s-%s: %d of %d replicates failed", m.name, m.policy.value, row.errors, len(kept))
    return rows


# ---------------------------------------------------------------------------
# grids and config files


@dataclass
class GridConfig:
    k: list[int]
    sizes: list[str]
    p_c: list[float]
    theta: list[float]
    tau2: list[float]
    reps: int | None = None
    seed: int | None = None
    f: float = 0.5
    level: float = 0.95
    estimators: list[str] = field(default_factory=list)
    intervals: list[str] = field(default_factory=list)
    policy: list[str] = field(default_factory=list)

    REQUIRED = ("k", "sizes", "p_c", "theta", "tau2")

    def cells(self) -> list[ScenarioConfig]:
        if self.reps is None:
            raise ConfigError("missing required config key 'reps'")
        if self.seed is None:
            raise ConfigError("missing required config key 'seed'")
        return [ScenarioConfig(k, s, p, t, v, reps=self.reps, seed=self.seed, f=self.f)
                for k, s, p, t, v in itertools.product(self.k, self.sizes, self.p_c, self.theta, self.tau2)]

    def policy_matrix(self) -> dict[str, list[str]] | None:
        if not self.policy:
            return None
        names = [n for n in list(self.estimators) + list(self.intervals)]
        return {n: [p for p in self.policy if not (n in FIXED_ALWAYS and p != "always")] or ["always"]
                for n in names}

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "GridConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        for key in cls.REQUIRED:
            if key not in raw or not raw[key].strip():
                raise ConfigError(f"missing required config key {key!r}")
        try:
            cfg = cls(
                k=[int(v) for v in _split(raw["k"])],
                sizes=[parse_sizes(v) for v in _split(raw["sizes"])],
                p_c=_floats(raw["p_c"]),
                theta=_floats(raw["theta"]),
                tau2=_floats(raw["tau2"]),
                reps=int(raw["reps"]) if "reps" in raw else None,
                seed=int(raw["seed"]) if "seed" in raw else None,
                f=float(raw.get("f", 0.5)),
                level=float(raw.get("level", 0.95)),
                estimators=_split(raw.get("estimators", "")),
                intervals=_split(raw.get("intervals", "")),
                policy=[AdjustmentPolicy.parse(p).value for p in _split(raw.get("policy", ""))],
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not (cfg.estimators or cfg.intervals):
            raise ConfigError("missing required config key 'estimators' (or 'intervals')")
        resolve_methods(cfg.estimators, cfg.intervals, cfg.policy_matrix())
        return cfg

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "GridConfig":
        return cls.from_mapping(read_keyvalue(path))


def read_keyvalue(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    """Comma-separated floats; ``a:b:step`` expands to an inclusive range."""
    out = []
    for tok in _split(text):
        if ":" in tok:
            a, b, step = (float(x) for x in tok.split(":"))
            n = int(round((b - a) / step))
            out.extend(round(a + i * step, 12) for i in range(n + 1))
        else:
            out.append(float(tok))
    return out


def write_rows(path: str | os.PathLike, rows: Iterable[MetricsRow], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.csv_record())


def read_rows(path: str | os.PathLike) -> list[MetricsRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            num = {k: (math.nan if rec[k] == "" else float(rec[k]))
                   for k in ("p_c", "theta", "tau2", "bias", "median_bias", "coverage", "miss_left", "miss_right")}
            kind = "point" if not math.isnan(num["bias"]) else "interval"
            rows.append(MetricsRow(int(rec["k"]), rec["sizes_label"], method=rec["method"], policy=rec["policy"],
                                   effective_reps=int(rec["effective_reps"]), kind=kind, **num))
    return rows


def full_grid(grid: GridConfig, out: str | os.PathLike | None = None,
              progress: Callable[[int, int, ScenarioConfig], None] | None = None,
              workers: int | None = None) -> list[MetricsRow]:
    """Run every cell of ``grid``; with ``out`` set, cells already in the file are skipped.

    Rows are appended to ``out`` one cell at a time, so an interrupted run
    resumes where it stopped.
    """
    cells = grid.cells()
    done: dict[tuple, list[MetricsRow]] = {}
    if out is not None and Path(out).exists() and Path(out).stat().st_size > 0:
        for row in read_rows(out):
            done.setdefault(row.cell_key, []).append(row)
    rows: list[MetricsRow] = []
    for i, cell in enumerate(cells, 1):
        if cell.cell_key in done:
            rows.extend(done[cell.cell_key])
            continue
        if progress:
            progress(i, len(cells), cell)
        cell_rows = run_scenario(cell, grid.estimators, grid.intervals, grid.policy_matrix(),
                                 level=grid.level, workers=workers)
        if out is not None:
            try:
                write_rows(out, cell_rows, append=True)
            except OSError as exc:
                raise OSError(f"writing cell {cell.cell_key} to {out}: {exc}") from exc
        rows.extend(cell_rows)
    return rows


def rows_as_dicts(rows: Iterable[MetricsRow]) -> list[dict]:
    return [asdict(r) for r in rows]
