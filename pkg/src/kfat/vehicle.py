"""Single-track vehicle model with Dugoff lateral tyre forces.

The same compiled kernels serve as the UKF process/measurement model and,
with perturbed parameters and optional lateral load transfer, as the
ground-truth simulator.

State vector ``x = [vx, vy, yaw_rate]`` (CoG, body frame), input vector
``u = [steer_angle, long_accel]``, measurement vector ``z = [vx, ay, yaw_rate]``.
Kernels take a packed float parameter array, see :func:`pack_params`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigError, IntegrationError, LowSpeedError

MIN_SPEED = 0.1
MAX_STEER = math.pi / 4

# packed parameter layout
P_MASS, P_IZ, P_A, P_B, P_CF, P_CR, P_MU, P_G, P_LT, P_HCG, P_TRACK = range(11)
N_PACKED = 11


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    yaw_inertia: float
    dist_front_axle: float
    dist_rear_axle: float
    cornering_stiffness_front: float
    cornering_stiffness_rear: float
    friction_coeff: float
    gravity: float = 9.81

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"vehicle parameter {f.name} must be finite and > 0, got {v!r}")
        if self.friction_coeff > 2:
            raise ConfigError(f"friction_coeff must lie in (0, 2], got {self.friction_coeff}")

    @property
    def wheelbase(self) -> float:
        return self.dist_front_axle + self.dist_rear_axle

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown vehicle parameter(s): {', '.join(unknown)}")
        missing = sorted(f.name for f in fields(cls) if f.name not in data and f.name != "gravity")
        if missing:
            raise ConfigError(f"missing vehicle parameter(s): {', '.join(missing)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path: str | Path) -> "VehicleParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "VehicleParams":
        """Representative mid-size sedan shipped with the package."""
        text = resources.files("kfat.data").joinpath("vehicle_default.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)

    def scaled(self, front: float = 1.0, rear: float = 1.0) -> "VehicleParams":
        """Copy with cornering stiffnesses multiplied by ``front``/``rear``."""
        d = self.to_dict()
        d["cornering_stiffness_front"] *= front
        d["cornering_stiffness_rear"] *= rear
        return VehicleParams(**d)


@dataclass(frozen=True)
class VehicleState:
    vx: float
    vy: float
    yaw_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.yaw_rate], dtype=float)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class ControlInput:
    steer_angle: float
    long_accel: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.steer_angle) and math.isfinite(self.long_accel)):
            raise ConfigError("control input must be finite")
        if abs(self.steer_angle) > MAX_STEER:
            raise ConfigError(f"|steer_angle| must not exceed pi/4, got {self.steer_angle}")

    def as_array(self) -> np.ndarray:
        return np.array([self.steer_angle, self.long_accel], dtype=float)


def pack_params(
    params: VehicleParams,
    load_transfer: bool = False,
    cog_height: float = 0.55,
    track_width: float = 1.6,
) -> np.ndarray:
    """Flatten parameters for the compiled kernels.

    ``load_transfer`` is only meant for the truth simulator; the filter
    model always uses static axle loads.
    """
    return np.array(
        [
            params.mass,
            params.yaw_inertia,
            params.dist_front_axle,
            params.dist_rear_axle,
            params.cornering_stiffness_front,
            params.cornering_stiffness_rear,
            params.friction_coeff,
            params.gravity,
            1.0 if load_transfer else 0.0,
            cog_height,
            track_width,
        ],
        dtype=np.float64,
    )


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def dugoff_force(alpha, fz, c_alpha, mu):
    t = math.tan(alpha)
    if t == 0.0 or fz <= 0.0:
        return 0.0
    lam = mu * fz / (2.0 * c_alpha * abs(t))
    if lam < 1.0:
        return c_alpha * t * lam * (2.0 - lam)
    return c_alpha * t


@njit(cache=True, nogil=True)
def _slip(vx, vy, r, delta, a, b):
    vx = max(vx, MIN_SPEED)
    alpha_f = delta - math.atan((vy + a * r) / vx)
    alpha_r = -math.atan((vy - b * r) / vx)
    return alpha_f, alpha_r


@njit(cache=True, nogil=True)
def axle_forces(x, u, p):
    """Front and rear lateral axle forces [N]."""
    m = p[P_MASS]
    a = p[P_A]
    b = p[P_B]
    g = p[P_G]
    mu = p[P_MU]
    cf = p[P_CF]
    cr = p[P_CR]
    delta = u[0]
    alpha_f, alpha_r = _slip(x[0], x[1], x[2], delta, a, b)
    fzf = m * g * b / (a + b)
    fzr = m * g * a / (a + b)
    fyf = dugoff_force(alpha_f, fzf, cf, mu)
    fyr = dugoff_force(alpha_r, fzr, cr, mu)
    if p[P_LT] != 0.0:
        # split each axle into left/right tyres, load shifted in proportion
        # to static axle share; ay taken from the static-load forces
        ay = (fyf * math.cos(delta) + fyr) / m
        k = ay * p[P_HCG] / (g * p[P_TRACK])
        dfzf = fzf * k
        dfzr = fzr * k
        fyf = dugoff_force(alpha_f, 0.5 * fzf + dfzf, 0.5 * cf, mu) + dugoff_force(
            alpha_f, 0.5 * fzf - dfzf, 0.5 * cf, mu
        )
        fyr = dugoff_force(alpha_r, 0.5 * fzr + dfzr, 0.5 * cr, mu) + dugoff_force(
            alpha_r, 0.5 * fzr - dfzr, 0.5 * cr, mu
        )
    return fyf, fyr


@njit(cache=True, nogil=True)
def transition(x, u, p, dt):
    """Explicit Euler step of the single-track equations."""
    fyf, fyr = axle_forces(x, u, p)
    cd = math.cos(u[0])
    vx, vy, r = x[0], x[1], x[2]
    out = np.empty(3)
    out[0] = vx + dt * (u[1] + r * vy)
    out[1] = vy + dt * ((fyf * cd + fyr) / p[P_MASS] - r * vx)
    out[2] = r + dt * (p[P_A] * fyf * cd - p[P_B] * fyr) / p[P_IZ]
    return out


@njit(cache=True, nogil=True)
def observation(x, u, p):
    fyf, fyr = axle_forces(x, u, p)
    out = np.empty(3)
    out[0] = x[0]
    out[1] = (fyf * math.cos(u[0]) + fyr) / p[P_MASS]
    out[2] = x[2]
    return out


@njit(cache=True, nogil=True)
def simulate(p, x0, inputs, noise, dt):
    """Roll the model forward over ``inputs`` (N x 2).

    ``noise`` (N x 3) is added after each transition; row 0 is unused.
    Returns the state history (N x 3); row 0 is ``x0``.
    """
    n = inputs.shape[0]
    xs = np.empty((n, 3))
    xs[0] = x0
    for k in range(1, n):
        xs[k] = transition(xs[k - 1], inputs[k - 1], p, dt) + noise[k]
    return xs


@njit(cache=True, nogil=True)
def observe_all(p, xs, inputs):
    n = xs.shape[0]
    zs = np.empty((n, 3))
    for k in range(n):
        zs[k] = observation(xs[k], inputs[k], p)
    return zs


# ---------------------------------------------------------------------------
# checked Python API
# ---------------------------------------------------------------------------


def _check_speed(vx: float) -> None:
    if not vx > MIN_SPEED:
        raise LowSpeedError(f"vx = {vx} m/s is below the {MIN_SPEED} m/s threshold")


def slip_angles(state: VehicleState, control: ControlInput, params: VehicleParams) -> tuple[float, float]:
    """Front and rear slip angles [rad]."""
    _check_speed(state.vx)
    return _slip(
        state.vx, state.vy, state.yaw_rate, control.steer_angle,
        params.dist_front_axle, params.dist_rear_axle,
    )


def dugoff_lateral_force(alpha: float, fz: float, c_alpha: float, mu: float) -> float:
    if not (fz > 0 and c_alpha > 0):
        raise ConfigError("dugoff_lateral_force requires fz > 0 and c_alpha > 0")
    return dugoff_force(float(alpha), float(fz), float(c_alpha), float(mu))


def dynamics_step(
    state: VehicleState, control: ControlInput, params: VehicleParams, dt: float
) -> VehicleState:
    if not 0 < dt <= 0.1:
        raise ConfigError(f"dt must lie in (0, 0.1], got {dt}")
    _check_speed(state.vx)
    out = transition(state.as_array(), control.as_array(), pack_params(params), dt)
    for name, v in zip(("vx", "vy", "yaw_rate"), out):
        if not math.isfinite(v):
            raise IntegrationError(f"non-finite {name} after dynamics step")
    return VehicleState.from_array(out)


def measurement_model(
    state: VehicleState, control: ControlInput, params: VehicleParams
) -> tuple[float, float, float]:
    """Predicted sensor readings ``(vx, ay, yaw_rate)``."""
    z = observation(state.as_array(), control.as_array(), pack_params(params))
    return float(z[0]), float(z[1]), float(z[2])


def sideslip(state: VehicleState) -> float:
    _check_speed(state.vx)
    return math.atan(state.vy / state.vx)
