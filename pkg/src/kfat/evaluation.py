"""Tuning objective and sideslip KPIs.

The objective is a weighted sum of three channel errors. Each channel error
is the sample-count-weighted RMS over manoeuvres of the per-manoeuvre
normalised RMSE (RMSE divided by the peak absolute reference value).
Sideslip is scored against ground truth; yaw rate and lateral acceleration
against the (noisy) measurements.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .scenario import Manoeuvre
from .ukf import EstimateTrace, NoiseConfig, UkfConfig, run_filter
from .vehicle import VehicleParams

DIVERGENCE_NRMSE = 10.0
NON_THRESHOLD = 4.0  # m/s^2
CHANNELS = ("beta", "yaw_rate", "ay")


class DegenerateChannelError(DataError):
    """A reference series is identically zero, so NRMSE is undefined."""


def thread_count() -> int:
    """Worker threads for manoeuvre-level parallelism, capped by KFAT_THREADS."""
    n = os.cpu_count() or 1
    env = os.environ.get("KFAT_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"KFAT_THREADS must be an integer, got {env!r}") from None
    return n


def nrmse(estimated, reference) -> float:
    est = np.asarray(estimated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.shape != ref.shape or est.size == 0:
        raise ConfigError("nrmse needs two non-empty series of equal length")
    peak = np.max(np.abs(ref))
    if peak == 0:
        raise DegenerateChannelError("reference series is identically zero")
    return float(np.sqrt(np.mean((est - ref) ** 2)) / peak)


def channel_error(nrmses, lengths) -> float:
    """Length-weighted root-mean-square of per-manoeuvre NRMSE values."""
    e = np.asarray(nrmses, dtype=float)
    n = np.asarray(lengths, dtype=float)
    if e.size == 0 or e.shape != n.shape:
        raise ConfigError("channel_error needs one length per NRMSE value")
    return float(np.sqrt(np.sum(e**2 * n) / np.sum(n)))


@dataclass(frozen=True)
class CostWeights:
    w1: float = 5.0
    w2: float = 1.0
    w3: float = 1.0

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(not (math.isfinite(w) and w >= 0) for w in ws):
            raise ConfigError("cost weights must be finite and >= 0")
        if not any(ws):
            raise ConfigError("cost weights must not all be zero")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)


@dataclass(frozen=True)
class FilterContext:
    """Everything except ``q`` that the filter needs."""

    params: VehicleParams = field(default_factory=VehicleParams.default)
    r: tuple[float, float, float] = (0.01, 0.0225, 2.5e-5)
    ukf: UkfConfig = field(default_factory=UkfConfig)


def manoeuvre_nrmse(trace: EstimateTrace, man: Manoeuvre) -> tuple[float, float, float]:
    """(beta, yaw rate, ay) NRMSE for one filtered manoeuvre.

    A diverged run scores ``DIVERGENCE_NRMSE`` on every channel.
    """
    if trace.diverged:
        return (DIVERGENCE_NRMSE,) * 3
    return (
        nrmse(trace.beta, man.true_beta),
        nrmse(trace.measurement[:, 2], man.meas_yawrate),
        nrmse(trace.measurement[:, 1], man.meas_ay),
    )


def evaluate_set(q, manoeuvres, ctx: FilterContext, threads: int | None = None) -> list[tuple[EstimateTrace, tuple]]:
    """Filter every manoeuvre with process noise ``q``; results keep input order."""
    noise = NoiseConfig(tuple(q), ctx.r)

    def one(man):
        tr = run_filter(man, noise, ctx.ukf, ctx.params)
        return tr, manoeuvre_nrmse(tr, man)

    threads = thread_count() if threads is None else threads
    if threads > 1 and len(manoeuvres) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, manoeuvres))
    return [one(m) for m in manoeuvres]


def cost_from_nrmse(per_manoeuvre, lengths, weights: CostWeights) -> float:
    arr = np.asarray(per_manoeuvre, dtype=float).reshape(-1, 3)
    errs = [channel_error(arr[:, j], lengths) for j in range(3)]
    return float(np.dot(weights.as_tuple(), errs))


def cost(q, manoeuvres, weights: CostWeights = CostWeights(), ctx: FilterContext | None = None) -> float:
    """Weighted channel-error objective for process-noise diagonal ``q``."""
    if not manoeuvres:
        raise ConfigError("cost needs at least one manoeuvre")
    ctx = ctx or FilterContext()
    results = evaluate_set(q, manoeuvres, ctx)
    return cost_from_nrmse([r[1] for r in results], [len(m) for m in manoeuvres], weights)


class CostFunction:
    """Callable objective ``J(q)`` bound to a manoeuvre set; counts calls."""

    def __init__(self, manoeuvres, weights: CostWeights = CostWeights(), ctx: FilterContext | None = None):
        if not manoeuvres:
            raise ConfigError("cost needs at least one manoeuvre")
        self.manoeuvres = list(manoeuvres)
        self.weights = weights
        self.ctx = ctx or FilterContext()
        self.calls = 0

    def __call__(self, q) -> float:
        self.calls += 1
        return cost(np.asarray(q, dtype=float), self.manoeuvres, self.weights, self.ctx)


# ---------------------------------------------------------------------------
# KPIs
# ---------------------------------------------------------------------------


@dataclass
class KpiReport:
    rmse: float
    mae: float
    rmse_non: float | None
    mae_non: float | None
    name: str = ""
    per_manoeuvre: list["KpiReport"] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "rmse": self.rmse,
            "mae": self.mae,
            "rmse_non": self.rmse_non,
            "mae_non": self.mae_non,
        }
        if self.per_manoeuvre:
            d["per_manoeuvre"] = [k.to_dict() for k in self.per_manoeuvre]
        return d


def kpi(trace: EstimateTrace, man: Manoeuvre) -> KpiReport:
    """Sideslip RMSE and maximum absolute error in degrees.

    The ``_non`` variants only use samples with |ay| >= 4 m/s^2 and are
    ``None`` when no sample qualifies.
    """
    if len(trace) != len(man):
        raise ConfigError("trace and manoeuvre lengths differ")
    err = np.degrees(trace.beta - man.true_beta)
    if trace.diverged or not np.all(np.isfinite(err)):
        nan = float("nan")
        return KpiReport(nan, nan, nan, nan, name=man.name)
    mask = np.abs(man.meas_ay) >= NON_THRESHOLD
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.max(np.abs(err)))
    if mask.any():
        e = err[mask]
        rmse_non, mae_non = float(np.sqrt(np.mean(e**2))), float(np.max(np.abs(e)))
    else:
        rmse_non = mae_non = None
    return KpiReport(rmse, mae, rmse_non, mae_non, name=man.name)


def _mean_present(vals):
    present = [v for v in vals if v is not None]
    return float(np.mean(present)) if present else None


def aggregate(reports: list[KpiReport], name: str = "aggregate") -> KpiReport:
    """Average of per-manoeuvre KPIs; absent ``_non`` entries are skipped."""
    return KpiReport(
        rmse=float(np.mean([r.rmse for r in reports])),
        mae=float(np.mean([r.mae for r in reports])),
        rmse_non=_mean_present([r.rmse_non for r in reports]),
        mae_non=_mean_present([r.mae_non for r in reports]),
        name=name,
        per_manoeuvre=list(reports),
    )


def kpi_set(q, manoeuvres, ctx: FilterContext | None = None, name: str = "aggregate") -> KpiReport:
    ctx = ctx or FilterContext()
    results = evaluate_set(q, manoeuvres, ctx)
    return aggregate([kpi(tr, m) for (tr, _), m in zip(results, manoeuvres)], name=name)
