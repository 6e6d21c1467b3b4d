"""Seeded Monte-Carlo simulation of clock offsets in a sensor network.

Each clock ``i`` reports ``T_i = t + theta_i 1_K + eta_i``. Runs are
independent Philox streams keyed by ``(master_seed, cell_index, run_index)``
through ``numpy.random.SeedSequence`` spawn keys, so a cell can be computed
on any worker, in any order, and give the same numbers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .bounds import (
    trace_average_ref_homoscedastic,
    trace_single_ref_homoscedastic,
    traces_diagonal_noise,
)
from .estimator import ConstrainedWLS, EstimatorConfig, feasible_projection
from .model import (
    Homoscedastic,
    IndependentDiagonal,
    NetworkShape,
    NoiseModel,
    average_reference_constraint,
    single_reference_constraint,
)

THREADS_ENV = "OFFSETCAL_THREADS"
# Cells with fewer runs than this are flagged in the output.
LOW_CONFIDENCE_RUNS = 30
# Spawn-key slot reserved for drawing the per-sensor variances of a sweep.
_VARIANCE_STREAM = 2**32 - 1


def run_generator(master_seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based stream for a ``(cell, run)`` key."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True, eq=False)
class ClockScenario:
    """True time ramp, clock offsets and noise. ``noise=None`` means noiseless."""

    true_time: np.ndarray
    offsets: np.ndarray
    noise: NoiseModel | None

    def __post_init__(self):
        t = np.array(self.true_time, dtype=float)
        th = np.array(self.offsets, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("true_time must be a non-empty vector")
        if th.ndim != 1:
            raise ValueError("offsets must be a vector")
        NetworkShape(th.size, t.size)
        t.flags.writeable = False
        th.flags.writeable = False
        object.__setattr__(self, "true_time", t)
        object.__setattr__(self, "offsets", th)

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(self.offsets.size, self.true_time.size)

    @classmethod
    def ramp(cls, offsets, n_measurements: int, noise: NoiseModel | None, step: float = 1.0):
        return cls(step * np.arange(n_measurements), offsets, noise)


def _draw_noise(noise: NoiseModel | None, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if noise is None:
        return np.zeros((n, k))
    z = rng.standard_normal((n, k))
    if isinstance(noise, Homoscedastic):
        return np.sqrt(noise.sigma2) * z
    if isinstance(noise, IndependentDiagonal):
        return np.sqrt(noise.sigma2)[:, None] * z
    return noise.noise_factor(n) @ z


def sample_measurements(scenario: ClockScenario, seed) -> np.ndarray:
    """Draw one ``N x K`` measurement set; row ``n`` is ``t + theta_n + eta_n``."""
    rng = _as_generator(seed)
    n, k = scenario.offsets.size, scenario.true_time.size
    eta = _draw_noise(scenario.noise, n, k, rng)
    return scenario.true_time[None, :] + scenario.offsets[:, None] + eta


def empirical_covariance_trace(estimates, target) -> float:
    """Mean squared distance of the estimates from the target(s).

    ``target`` is one offset vector or one per estimate.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.size == 0:
        raise ValueError("no estimates given")
    err = est - np.asarray(target, dtype=float)
    return float(np.sum(err * err, axis=1).mean())


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One Monte-Carlo sweep over network sizes and measurement counts.

    Every pair in ``n_values x k_values`` is a cell. ``noise`` is
    ``"homoscedastic"`` (uses ``sigma2``) or ``"diagonal"``; diagonal
    variances are taken from ``variances`` when given, otherwise drawn
    log-uniformly from ``variance_range`` once per sweep and shared by all
    cells (a cell with ``N`` sensors uses the first ``N``). ``ref_index``
    selects the single-reference sensor; ``None`` picks the minimum-variance
    sensor of each cell.
    """

    n_values: list[int]
    k_values: list[int]
    runs_per_cell: int = 500
    master_seed: int = 12345
    noise: str = "homoscedastic"
    sigma2: float = 1e-3
    variance_range: tuple[float, float] = (1e-4, 1e-2)
    variances: list[float] | None = None
    ref_index: int | None = None
    offset_scale: float = 1.0
    time_step: float = 1.0
    workers: int | None = None

    def __post_init__(self):
        self.n_values = [int(n) for n in self.n_values]
        self.k_values = [int(k) for k in self.k_values]
        self.variance_range = tuple(float(v) for v in self.variance_range)
        if not self.n_values or not self.k_values:
            raise ValueError("sweep axes must be non-empty")
        if min(self.n_values) < 2:
            raise ValueError("every N in the sweep must be >= 2")
        if min(self.k_values) < 1:
            raise ValueError("every K in the sweep must be >= 1")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.noise not in ("homoscedastic", "diagonal"):
            raise ValueError(f"noise must be 'homoscedastic' or 'diagonal', got {self.noise!r}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be strictly positive")
        lo, hi = self.variance_range
        if not 0 < lo <= hi:
            raise ValueError("variance_range must satisfy 0 < low <= high")
        if self.variances is not None:
            self.variances = [float(v) for v in self.variances]
            if len(self.variances) < max(self.n_values):
                raise ValueError("explicit variances must cover the largest N in the sweep")
            if min(self.variances) <= 0:
                raise ValueError("variances must be strictly positive")
        if self.ref_index is not None and not 0 <= self.ref_index < min(self.n_values):
            raise ValueError("ref_index must be a valid sensor for every N in the sweep")
        if self.offset_scale < 0:
            raise ValueError("offset_scale must be nonnegative")

    def cells(self) -> list[tuple[int, int]]:
        return [(n, k) for n in self.n_values for k in self.k_values]

    def sensor_variances(self) -> np.ndarray | None:
        """Per-sensor variances for the largest network, or ``None`` if homoscedastic."""
        if self.noise == "homoscedastic":
            return None
        if self.variances is not None:
            return np.asarray(self.variances, dtype=float)
        rng = run_generator(self.master_seed, _VARIANCE_STREAM)
        lo, hi = np.log(self.variance_range)
        return np.exp(rng.uniform(lo, hi, size=max(self.n_values)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variance_range"] = list(self.variance_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


@dataclass(frozen=True)
class CellRecord:
    n: int
    k: int
    cell_index: int
    runs: int
    master_seed: int
    ref_index: int
    empirical_single: float
    empirical_average: float
    se_single: float
    se_average: float
    ccrb_single: float
    ccrb_average: float
    delta_hat: float
    delta_ccrb: float
    low_confidence: bool


CSV_COLUMNS = tuple(CellRecord.__dataclass_fields__)
CSV_SCHEMA_VERSION = 1


@dataclass
class SweepResult:
    kind: str
    config: ExperimentConfig
    records: list[CellRecord]
    variances: list[float] | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": CSV_SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "variances": self.variances,
            "records": [asdict(r) for r in self.records],
        }


def _workers(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _noise_for_cell(config: ExperimentConfig, n: int, variances) -> NoiseModel:
    if variances is None:
        return Homoscedastic(config.sigma2)
    return IndependentDiagonal(variances[:n])


def _bounds_for_cell(noise: NoiseModel, n: int, k: int, ref: int) -> tuple[float, float]:
    if isinstance(noise, Homoscedastic):
        return (
            trace_single_ref_homoscedastic(n, k, noise.sigma2),
            trace_average_ref_homoscedastic(n, k, noise.sigma2),
        )
    tr = traces_diagonal_noise(k, noise.sigma2, ref)
    return tr.trace_single, tr.trace_average


def _run_cell(config: ExperimentConfig, cell_index: int, n: int, k: int, variances) -> CellRecord:
    noise = _noise_for_cell(config, n, variances)
    if config.ref_index is not None:
        ref = config.ref_index
    elif variances is not None:
        ref = int(np.argmin(variances[:n]))
    else:
        ref = 0
    shape = NetworkShape(n, k)
    single = single_reference_constraint(shape, ref)
    average = average_reference_constraint(shape)
    solvers = [ConstrainedWLS(noise, EstimatorConfig(c), n, k) for c in (single, average)]
    t = config.time_step * np.arange(k)

    runs = config.runs_per_cell
    sq = np.empty((2, runs))
    for r in range(runs):
        rng = run_generator(config.master_seed, cell_index, r)
        theta = config.offset_scale * rng.standard_normal(n)
        y = t[None, :] + theta[:, None] + _draw_noise(noise, n, k, rng)
        # paired draws: both constraints see the same realization
        for j, (solver, c) in enumerate(zip(solvers, (single, average))):
            err = solver.solve(y).theta_hat - feasible_projection(theta, c)
            sq[j, r] = err @ err

    emp = sq.mean(axis=1)
    se = sq.std(axis=1, ddof=1) / np.sqrt(runs) if runs > 1 else np.full(2, np.nan)
    b_single, b_average = _bounds_for_cell(noise, n, k, ref)
    return CellRecord(
        n=n,
        k=k,
        cell_index=cell_index,
        runs=runs,
        master_seed=config.master_seed,
        ref_index=ref,
        empirical_single=float(emp[0]),
        empirical_average=float(emp[1]),
        se_single=float(se[0]),
        se_average=float(se[1]),
        ccrb_single=b_single,
        ccrb_average=b_average,
        delta_hat=float(emp[1] / emp[0]),
        delta_ccrb=b_average / b_single,
        low_confidence=runs < LOW_CONFIDENCE_RUNS,
    )


def _run_sweep(config: ExperimentConfig, kind: str) -> SweepResult:
    variances = config.sensor_variances()
    cells = config.cells()
    workers = min(_workers(config.workers), len(cells))
    args = [(config, i, n, k, variances) for i, (n, k) in enumerate(cells)]
    if workers == 1:
        records = [_run_cell(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda a: _run_cell(*a), args))
    return SweepResult(kind, config, records, None if variances is None else variances.tolist())


def run_delta_grid(config: ExperimentConfig) -> SweepResult:
    """Empirical variance ratio average/single over an ``N x K`` grid (homoscedastic)."""
    if config.noise != "homoscedastic":
        raise ValueError("the delta grid requires homoscedastic noise")
    return _run_sweep(config, "delta_grid")


def run_variance_sweep(config: ExperimentConfig) -> SweepResult:
    """Empirical and bound traces for both references, cell by cell.

    Intended for diagonal noise; homoscedastic configs are accepted and use
    the homoscedastic closed forms.
    """
    return _run_sweep(config, "variance_sweep")
