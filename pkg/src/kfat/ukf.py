"""Unscented Kalman filter with additive process and observation noise.

Merwe scaled sigma points. The step kernel is compiled and generic over the
process/observation functions, which must themselves be numba ``njit``
functions with signatures ``f(x, u, p, dt) -> x`` and ``h(x, u, p) -> z``.
The vehicle model from :mod:`kfat.vehicle` is the default.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numba import njit

from . import vehicle
from .errors import ConfigError
from .vehicle import ControlInput, VehicleParams

STATE_DIM = 3
DEFAULT_INITIAL_COV = (1.0, 1.0, 0.1)

# status codes returned by the kernels
OK, DIVERGED = 0, 1


@dataclass(frozen=True)
class NoiseConfig:
    """Diagonals of the process (``q``) and observation (``r``) covariances."""

    q: tuple[float, float, float]
    r: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        for name in ("q", "r"):
            vals = getattr(self, name)
            if len(vals) != 3:
                raise ConfigError(f"{name} must have 3 entries")
            if not all(math.isfinite(v) and v > 0 for v in vals):
                raise ConfigError(f"{name} entries must be finite and > 0, got {vals}")


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    dt: float = 0.01

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if STATE_DIM + self.lam(STATE_DIM) <= 0:
            raise ConfigError("sigma-point scaling gives n + lambda <= 0")

    def lam(self, n: int) -> float:
        return self.alpha**2 * (n + self.kappa) - n

    def weights(self, n: int) -> tuple[np.ndarray, np.ndarray, float]:
        """Mean weights, covariance weights and the spread factor sqrt(n + lambda)."""
        lam = self.lam(n)
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha**2 + self.beta
        return wm, wc, math.sqrt(n + lam)


class StateSpaceModel(NamedTuple):
    transition: Callable
    observation: Callable
    params: np.ndarray


def vehicle_model(params: VehicleParams) -> StateSpaceModel:
    return StateSpaceModel(vehicle.transition, vehicle.observation, vehicle.pack_params(params))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _cholesky(a, out):
    n = a.shape[0]
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= out[i, k] * out[j, k]
            out[i, j] = t / d
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True, nogil=True)
def cholesky_repair(cov):
    """Lower Cholesky factor; on failure symmetrize and add escalating jitter.

    Jitter starts at 1e-9 * max(diag) and grows by 10x up to 1e-3 * max(diag).
    Returns ``(L, ok)``.
    """
    n = cov.shape[0]
    L = np.zeros((n, n))
    if _cholesky(cov, L):
        return L, True
    sym = 0.5 * (cov + cov.T)
    dmax = 0.0
    for i in range(n):
        if not math.isfinite(sym[i, i]):
            return L, False
        dmax = max(dmax, sym[i, i])
    if not dmax > 0.0:
        return L, False
    factor = 1e-9
    while factor <= 1e-3 * (1 + 1e-9):
        trial = sym.copy()
        for i in range(n):
            trial[i, i] += factor * dmax
        if _cholesky(trial, L):
            return L, True
        factor *= 10.0
    return L, False


@njit(cache=True, nogil=True)
def _sigma(mean, L, gamma):
    n = mean.shape[0]
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    for i in range(n):
        col = gamma * L[:, i]
        pts[1 + i] = mean + col
        pts[1 + n + i] = mean - col
    return pts


@njit(cache=True, nogil=True)
def _moments(ys, wm, wc):
    """Weighted mean and covariance, accumulated relative to ys[0].

    The centre weight is large and negative for small alpha; working with
    offsets from the centre point avoids cancellation in the mean.
    """
    npts, dim = ys.shape
    off = np.zeros(dim)
    for i in range(1, npts):
        off += wm[i] * (ys[i] - ys[0])
    mean = ys[0] + off
    cov = np.zeros((dim, dim))
    for i in range(npts):
        d = (ys[i] - ys[0]) - off
        cov += wc[i] * np.outer(d, d)
    return mean, cov, off


@njit(cache=True, nogil=True)
def _step(f, h, p, mean, cov, u_pred, u_meas, z, q, r, wm, wc, gamma, dt):
    n = mean.shape[0]
    L, ok = cholesky_repair(cov)
    if not ok:
        return mean, cov, np.full(z.shape[0], np.nan), DIVERGED
    pts = _sigma(mean, L, gamma)
    ys = np.empty_like(pts)
    for i in range(pts.shape[0]):
        ys[i] = f(pts[i], u_pred, p, dt)
    x_pred, p_pred, _ = _moments(ys, wm, wc)
    for i in range(n):
        p_pred[i, i] += q[i]

    L, ok = cholesky_repair(p_pred)
    if not ok:
        return mean, cov, np.full(z.shape[0], np.nan), DIVERGED
    pts = _sigma(x_pred, L, gamma)
    m = z.shape[0]
    zs = np.empty((pts.shape[0], m))
    for i in range(pts.shape[0]):
        zs[i] = h(pts[i], u_meas, p)
    z_pred, s, z_off = _moments(zs, wm, wc)
    for i in range(m):
        s[i, i] += r[i]
    pxz = np.zeros((n, m))
    for i in range(pts.shape[0]):
        pxz += wc[i] * np.outer(pts[i] - x_pred, (zs[i] - zs[0]) - z_off)
    # K = Pxz S^-1 via S K^T = Pxz^T
    gain = np.linalg.solve(s, pxz.T).T
    x_new = x_pred + gain @ (z - z_pred)
    p_new = p_pred - gain @ s @ gain.T
    p_new = 0.5 * (p_new + p_new.T)
    for i in range(n):
        if not (math.isfinite(x_new[i]) and p_new[i, i] > 0.0):
            return x_new, p_new, z_pred, DIVERGED
    return x_new, p_new, z_pred, OK


@njit(cache=True, nogil=True)
def _run(f, h, p, x0, p0, inputs, meas, q, r, wm, wc, gamma, dt):
    npts = inputs.shape[0]
    n = x0.shape[0]
    xs = np.full((npts, n), np.nan)
    zs = np.full((npts, meas.shape[1]), np.nan)
    pd = np.full((npts, n), np.nan)
    xs[0] = x0
    zs[0] = h(x0, inputs[0], p)
    for i in range(n):
        pd[0, i] = p0[i, i]
    mean = x0.copy()
    cov = p0.copy()
    for k in range(1, npts):
        mean, cov, zhat, status = _step(
            f, h, p, mean, cov, inputs[k - 1], inputs[k], meas[k], q, r, wm, wc, gamma, dt
        )
        if status != OK:
            return xs, zs, pd, k
        xs[k] = mean
        zs[k] = h(mean, inputs[k], p)
        for i in range(n):
            pd[k, i] = cov[i, i]
    return xs, zs, pd, -1


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------


def sigma_points(mean, cov, cfg: UkfConfig = UkfConfig()):
    """Sigma points ``(2n+1, n)`` with mean and covariance weights.

    Raises ``numpy.linalg.LinAlgError`` if ``cov`` is not SPD even after repair.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean.shape[0]
    wm, wc, gamma = cfg.weights(n)
    L, ok = cholesky_repair(cov)
    if not ok:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    return _sigma(mean, L, gamma), wm, wc


def unscented_moments(points, wm, wc):
    """Weighted mean and covariance of (transformed) sigma points."""
    mean, cov, _ = _moments(np.ascontiguousarray(points, dtype=float), wm, wc)
    return mean, cov


@dataclass
class StepResult:
    mean: np.ndarray
    cov: np.ndarray
    predicted_measurement: np.ndarray
    diverged: bool


def ukf_step(
    mean,
    cov,
    control,
    meas,
    noise: NoiseConfig,
    cfg: UkfConfig = UkfConfig(),
    params: VehicleParams | None = None,
    *,
    model: StateSpaceModel | None = None,
    next_control=None,
) -> StepResult:
    """One predict/update cycle.

    ``control`` drives the prediction; ``next_control`` (defaults to
    ``control``) is the input at the measurement time, needed because the
    lateral acceleration depends on the current steering angle.
    """
    if model is None:
        if params is None:
            raise ConfigError("either params or model is required")
        model = vehicle_model(params)
    u = control.as_array() if isinstance(control, ControlInput) else np.asarray(control, dtype=float)
    if next_control is None:
        u_next = u
    elif isinstance(next_control, ControlInput):
        u_next = next_control.as_array()
    else:
        u_next = np.asarray(next_control, dtype=float)
    z = np.asarray(meas, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ConfigError("measurement must be finite")
    n = np.asarray(mean).shape[0]
    wm, wc, gamma = cfg.weights(n)
    x, P, zhat, status = _step(
        model.transition, model.observation, model.params,
        np.asarray(mean, dtype=float), np.asarray(cov, dtype=float),
        u, u_next, z, np.asarray(noise.q, dtype=float), np.asarray(noise.r, dtype=float),
        wm, wc, gamma, cfg.dt,
    )
    return StepResult(x, P, zhat, status != OK)


@dataclass
class EstimateTrace:
    t: np.ndarray
    state: np.ndarray  # (N, 3) posterior means
    measurement: np.ndarray  # (N, 3) h(posterior mean)
    beta: np.ndarray
    cov_diag: np.ndarray
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self, path) -> None:
        header = ["t", "vx_est", "vy_est", "yawrate_est", "beta_est", "p11", "p22", "p33"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self.t)):
                row = [self.t[k], *self.state[k], self.beta[k], *self.cov_diag[k]]
                w.writerow([repr(float(v)) for v in row])


def run_filter(
    man,
    noise: NoiseConfig,
    cfg: UkfConfig = UkfConfig(),
    params: VehicleParams | None = None,
    *,
    initial_cov=None,
    model: StateSpaceModel | None = None,
) -> EstimateTrace:
    """Filter a whole manoeuvre.

    The initial mean takes vx and yaw rate from the first measurement and
    vy = 0; the initial covariance defaults to diag(1, 1, 0.1).
    """
    if len(man) == 0:
        raise ConfigError("empty manoeuvre")
    if abs(man.dt - cfg.dt) > 1e-9:
        raise ConfigError(f"manoeuvre dt {man.dt} does not match filter dt {cfg.dt}")
    if model is None:
        model = vehicle_model(params if params is not None else VehicleParams.default())
    inputs = man.inputs
    meas = man.measurements
    x0 = np.array([meas[0, 0], 0.0, meas[0, 2]])
    p0 = np.diag(np.asarray(initial_cov if initial_cov is not None else DEFAULT_INITIAL_COV, dtype=float))
    wm, wc, gamma = cfg.weights(3)
    xs, zs, pd, bad = _run(
        model.transition, model.observation, model.params, x0, p0, inputs, meas,
        np.asarray(noise.q, dtype=float), np.asarray(noise.r, dtype=float), wm, wc, gamma, cfg.dt,
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.arctan(xs[:, 1] / xs[:, 0])
    return EstimateTrace(man.t.copy(), xs, zs, beta, pd, None if bad < 0 else int(bad))
