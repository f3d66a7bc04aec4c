"""Gaussian-process and Student-t-process regression on the unit cube.

Both processes share an ARD Matern-5/2 kernel with a zero mean applied to
centred targets. Hyperparameters (signal std and one length scale per
dimension) are trained by minimising the negative log marginal likelihood
with multi-start L-BFGS-B in log space.

For the Student-t process with ``nu`` degrees of freedom the predictive
mean equals the GP mean, and the GP variance is inflated by
``(nu + y' K^-1 y - 2) / (nu + n - 2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg, optimize
from scipy.special import gammaln

from .errors import ConfigError, FitError

Kind = Literal["tsp", "gp"]
HYPER_BOUNDS = (1e-3, 1e3)
NOISE_FLOOR_REL = 1e-6
N_STARTS = 5
SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelHyper:
    signal_std: float
    length_scales: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(v) for v in self.length_scales))
        vals = (self.signal_std, *self.length_scales)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ConfigError(f"kernel hyperparameters must be finite and > 0, got {vals}")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    def to_log(self) -> np.ndarray:
        return np.log([self.signal_std, *self.length_scales])

    @classmethod
    def from_log(cls, theta) -> "KernelHyper":
        lo, hi = HYPER_BOUNDS
        v = np.clip(np.exp(theta), lo, hi)
        return cls(float(v[0]), tuple(float(x) for x in v[1:]))


def matern52(X1, X2, hyper: KernelHyper) -> np.ndarray:
    """Kernel matrix between row sets ``X1`` (n, d) and ``X2`` (m, d)."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    ls = np.asarray(hyper.length_scales)
    diff = (X1[:, None, :] - X2[None, :, :]) / ls
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    sr = SQRT5 * r
    return hyper.signal_std**2 * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def kernel(q, q2, hyper: KernelHyper) -> float:
    return float(matern52(np.atleast_1d(q)[None, :], np.atleast_1d(q2)[None, :], hyper)[0, 0])


@dataclass(frozen=True)
class ObservationSet:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if pts.shape[0] != vals.shape[0]:
            raise ConfigError("points and values differ in length")
        if pts.size and (np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12)):
            raise ConfigError("observation points must lie in the unit cube")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("observation values must be finite")
        for i in range(1, len(pts)):
            if np.any(np.max(np.abs(pts[:i] - pts[i]), axis=1) <= 1e-12):
                raise ConfigError(f"duplicate observation point at index {i}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def empty(cls, dim: int) -> "ObservationSet":
        return cls(np.empty((0, dim)), np.empty(0))

    def add(self, point, value) -> "ObservationSet":
        return ObservationSet(
            np.vstack([self.points, np.asarray(point, dtype=float)[None, :]]),
            np.append(self.values, float(value)),
        )


def _factor(K: np.ndarray):
    """Cholesky with escalating jitter, as for filter covariances."""
    try:
        return linalg.cho_factor(K, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    dmax = float(np.max(np.diag(K)))
    jitter = 1e-9 * dmax
    while jitter <= 1e-3 * dmax * (1 + 1e-9):
        try:
            return linalg.cho_factor(K + jitter * np.eye(len(K)), lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise linalg.LinAlgError("Gram matrix not positive definite after jitter")


def _gram(X, hyper: KernelHyper) -> tuple[np.ndarray, float]:
    noise = NOISE_FLOOR_REL * hyper.signal_std**2
    K = matern52(X, X, hyper)
    K[np.diag_indices_from(K)] += noise
    return K, noise


def nlml(hyper: KernelHyper, X, y, kind: Kind = "tsp", nu: float = 15.0) -> float:
    """Negative log marginal likelihood of centred targets ``y``."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    K, _ = _gram(X, hyper)
    try:
        cf, _ = _factor(K)
    except linalg.LinAlgError:
        return math.inf
    alpha = linalg.cho_solve(cf, y, check_finite=False)
    quad = float(y @ alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    if kind == "gp":
        return 0.5 * quad + 0.5 * logdet + 0.5 * n * math.log(2 * math.pi)
    return (
        0.5 * n * math.log((nu - 2.0) * math.pi)
        + 0.5 * logdet
        + 0.5 * (nu + n) * math.log1p(quad / (nu - 2.0))
        + gammaln(0.5 * nu)
        - gammaln(0.5 * (nu + n))
    )


@dataclass(frozen=True)
class SurrogateModel:
    kind: str
    hyper: KernelHyper
    nu: float | None
    noise_floor: float
    observations: ObservationSet
    offset: float
    chol: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    quad: float = 0.0

    @classmethod
    def condition(cls, obs: ObservationSet, kind: Kind, hyper: KernelHyper, nu: float | None = 15.0) -> "SurrogateModel":
        """Build a model from fixed hyperparameters (no training)."""
        if kind not in ("tsp", "gp"):
            raise ConfigError(f"unknown surrogate kind {kind!r}")
        if kind == "tsp" and not (nu is not None and nu > 2):
            raise ConfigError("Student-t process needs nu > 2")
        if len(obs) == 0:
            raise FitError("cannot condition on an empty observation set")
        offset = float(np.mean(obs.values))
        y = obs.values - offset
        K, noise = _gram(obs.points, hyper)
        try:
            cf, _ = _factor(K)
        except linalg.LinAlgError as exc:
            raise FitError(str(exc)) from None
        alpha = linalg.cho_solve(cf, y, check_finite=False)
        return cls(kind, hyper, nu if kind == "tsp" else None, noise, obs, offset, cf, alpha, float(y @ alpha))

    @property
    def inflation(self) -> float:
        """Variance multiplier of the Student-t process (1 for a GP)."""
        if self.kind == "gp":
            return 1.0
        n = len(self.observations)
        return (self.nu + self.quad - 2.0) / (self.nu + n - 2.0)

    def predict(self, Q) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at rows of ``Q``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        ks = matern52(Q, self.observations.points, self.hyper)
        mean = ks @ self.alpha + self.offset
        v = linalg.solve_triangular(self.chol[0], ks.T, lower=True, check_finite=False)
        var = self.hyper.signal_std**2 - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0) * self.inflation
        return mean, var

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "signal_std": self.hyper.signal_std,
            "length_scales": list(self.hyper.length_scales),
            "nu": self.nu,
            "noise_floor": self.noise_floor,
            "offset": self.offset,
            "points": self.observations.points.tolist(),
            "values": self.observations.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        obs = ObservationSet(np.asarray(d["points"], dtype=float), np.asarray(d["values"], dtype=float))
        hyper = KernelHyper(d["signal_std"], tuple(d["length_scales"]))
        return cls.condition(obs, d["kind"], hyper, d.get("nu"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def posterior(model: SurrogateModel, q) -> tuple[float, float]:
    mean, var = model.predict(np.atleast_1d(q)[None, :])
    return float(mean[0]), float(var[0])


def _starts(y: np.ndarray, dim: int, rng: np.random.Generator, n_starts: int) -> list[np.ndarray]:
    sd = float(np.std(y)) if len(y) > 1 else 1.0
    sd = min(max(sd, 1e-2), 1e2)
    first = np.log([sd, *([0.3] * dim)])
    lo, hi = np.log(HYPER_BOUNDS)
    starts = [first]
    for _ in range(n_starts - 1):
        s = np.empty(dim + 1)
        s[0] = math.log(sd) + rng.uniform(-1.0, 1.0)
        s[1:] = rng.uniform(math.log(0.02), math.log(3.0), size=dim)
        starts.append(np.clip(s, lo, hi))
    return starts


def fit(
    obs: ObservationSet,
    kind: Kind = "tsp",
    nu: float = 15.0,
    seed: int = 0,
    n_starts: int = N_STARTS,
) -> SurrogateModel:
    """Train hyperparameters by NLML minimisation and condition on ``obs``."""
    if len(obs) == 0:
        raise FitError("cannot fit a surrogate to zero observations")
    if kind not in ("tsp", "gp"):
        raise ConfigError(f"unknown surrogate kind {kind!r}")
    if kind == "tsp" and not nu > 2:
        raise ConfigError("Student-t process needs nu > 2")
    X = obs.points
    y = obs.values - np.mean(obs.values)
    dim = X.shape[1]
    rng = np.random.default_rng(seed)
    bounds = [tuple(np.log(HYPER_BOUNDS))] * (dim + 1)

    def objective(theta):
        val = nlml(KernelHyper.from_log(theta), X, y, kind, nu)
        return val if math.isfinite(val) else 1e300

    best_theta, best_val = None, math.inf
    for x0 in _starts(y, dim, rng, n_starts):
        res = optimize.minimize(objective, x0, method="L-BFGS-B", bounds=bounds)
        val = float(res.fun)
        if math.isfinite(val) and val < 1e300 and val < best_val:
            best_theta, best_val = res.x, val
    if best_theta is None:
        raise FitError("negative log marginal likelihood is not finite at any start")
    return SurrogateModel.condition(obs, kind, KernelHyper.from_log(best_theta), nu)
