"""Synthetic manoeuvres: steering waveforms, truth simulation, CSV I/O.

Ground truth is simulated with the single-track model using mismatched
cornering stiffnesses and optional lateral load transfer, so the filter's
nominal process model is wrong in the way a real vehicle would make it.
Sensor noise is added afterwards; the noise-free truth is kept for scoring.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import signal

from . import vehicle
from .errors import ConfigError, GenerationError, InvariantError, ParseError
from .vehicle import VehicleParams

KINDS = (
    "skidpad",
    "slalom",
    "j_turn",
    "lane_change",
    "braking_in_turn",
    "spiral",
    "random_steer",
    "lap",
)
COLUMNS = (
    "t",
    "steer_angle",
    "long_accel",
    "meas_vx",
    "meas_ay",
    "meas_yawrate",
    "true_vx",
    "true_vy",
    "true_yawrate",
    "true_beta",
)
MIN_SAMPLES = 100
MIN_SCENARIO_SPEED = 5.0

TRAIN_COMPOSITION = (
    ("braking_in_turn", 1),
    ("skidpad", 1),
    ("j_turn", 2),
    ("slalom", 2),
    ("lane_change", 2),
)
TEST_COMPOSITION = (
    ("braking_in_turn", 2),
    ("skidpad", 2),
    ("j_turn", 5),
    ("slalom", 4),
    ("lane_change", 4),
    ("random_steer", 2),
    ("lap", 1),
    ("spiral", 3),
)
# per-manoeuvre seed offsets; test seeds never collide with train seeds
_TRAIN_OFFSET, _TEST_OFFSET, _SEED_STRIDE = 0, 500, 1000

DEFAULT_SENSOR_STD = (0.1, 0.15, 0.005)


@dataclass(frozen=True)
class Manoeuvre:
    name: str
    dt: float
    t: np.ndarray
    steer_angle: np.ndarray
    long_accel: np.ndarray
    meas_vx: np.ndarray
    meas_ay: np.ndarray
    meas_yawrate: np.ndarray
    true_vx: np.ndarray
    true_vy: np.ndarray
    true_yawrate: np.ndarray
    true_beta: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for col in COLUMNS:
            arr = np.asarray(getattr(self, col), dtype=float)
            if arr.shape != (n,):
                raise InvariantError(f"column {col} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, col, arr)
        if n < MIN_SAMPLES:
            raise InvariantError(f"manoeuvre {self.name!r} has {n} samples, need >= {MIN_SAMPLES}")
        if not self.dt > 0:
            raise InvariantError("dt must be > 0")
        steps = np.diff(self.t)
        bad = np.flatnonzero(np.abs(steps - self.dt) > 1e-9)
        if bad.size:
            raise InvariantError(
                f"non-uniform sampling in {self.name!r} at sample {bad[0] + 1}: "
                f"step {steps[bad[0]]} != dt {self.dt}"
            )
        beta = np.arctan(self.true_vy / self.true_vx)
        if not np.allclose(beta, self.true_beta, rtol=0, atol=1e-12):
            raise InvariantError(f"true_beta inconsistent with true_vy/true_vx in {self.name!r}")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def inputs(self) -> np.ndarray:
        return np.ascontiguousarray(np.column_stack([self.steer_angle, self.long_accel]))

    @property
    def measurements(self) -> np.ndarray:
        return np.ascontiguousarray(np.column_stack([self.meas_vx, self.meas_ay, self.meas_yawrate]))

    @property
    def truth(self) -> np.ndarray:
        return np.ascontiguousarray(np.column_stack([self.true_vx, self.true_vy, self.true_yawrate]))

    def equals(self, other: "Manoeuvre", tol: float = 0.0) -> bool:
        if self.name != other.name or len(self) != len(other) or abs(self.dt - other.dt) > max(tol, 1e-12):
            return False
        return all(
            np.allclose(getattr(self, c), getattr(other, c), rtol=0, atol=tol) for c in COLUMNS
        )


@dataclass(frozen=True)
class MismatchSpec:
    """How the truth vehicle differs from the filter's nominal model."""

    stiffness_scale_front: float = 0.9
    stiffness_scale_rear: float = 1.1
    load_transfer: bool = True
    cog_height: float = 0.55
    track_width: float = 1.6

    @classmethod
    def none(cls) -> "MismatchSpec":
        return cls(1.0, 1.0, False)


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    duration: float = 10.0
    speed: float = 20.0
    steer_amplitude: float = 0.03
    long_accel: float = 0.0
    sensor_noise_std: tuple[float, float, float] = DEFAULT_SENSOR_STD
    mismatch: MismatchSpec = field(default_factory=MismatchSpec)
    process_noise_std: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    dt: float = 0.01
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown manoeuvre kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        object.__setattr__(self, "sensor_noise_std", tuple(float(v) for v in self.sensor_noise_std))
        object.__setattr__(self, "process_noise_std", tuple(float(v) for v in self.process_noise_std))
        if isinstance(self.mismatch, dict):
            object.__setattr__(self, "mismatch", MismatchSpec(**self.mismatch))
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.n_samples < MIN_SAMPLES:
            raise ConfigError(f"duration {self.duration} s at dt {self.dt} gives fewer than {MIN_SAMPLES} samples")
        for label, vals in (("sensor_noise_std", self.sensor_noise_std), ("process_noise_std", self.process_noise_std)):
            if len(vals) != 3 or any(not (v >= 0) for v in vals):
                raise ConfigError(f"{label} must be three values >= 0")
        if self.speed < MIN_SCENARIO_SPEED:
            raise ConfigError(f"speed must be >= {MIN_SCENARIO_SPEED} m/s")
        if abs(self.steer_amplitude) > vehicle.MAX_STEER:
            raise ConfigError("steer_amplitude exceeds pi/4")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}_s{self.seed}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensor_noise_std"] = list(self.sensor_noise_std)
        d["process_noise_std"] = list(self.process_noise_std)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scenario key(s): {', '.join(unknown)}")
        data = dict(data)
        if "mismatch" in data:
            mm = data["mismatch"]
            mknown = {f.name for f in fields(MismatchSpec)}
            if set(mm) - mknown:
                raise ConfigError(f"unknown mismatch key(s): {', '.join(sorted(set(mm) - mknown))}")
            data["mismatch"] = MismatchSpec(**mm)
        return cls(**data)


# ---------------------------------------------------------------------------
# steering and longitudinal profiles
# ---------------------------------------------------------------------------

SLALOM_FREQ = 0.5
J_TURN_START, J_TURN_RAMP = 1.0, 0.5
LANE_CHANGE_START, LANE_CHANGE_PERIOD = 1.0, 2.5
RANDOM_CUTOFF = 1.0


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _random_steer(cfg: ScenarioConfig, t: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 17])
    white = rng.standard_normal(len(t))
    fs = 1.0 / cfg.dt
    b, a = signal.butter(2, RANDOM_CUTOFF / (0.5 * fs))
    shaped = signal.filtfilt(b, a, white)
    shaped -= shaped[0]
    peak = np.max(np.abs(shaped))
    return cfg.steer_amplitude * shaped / peak if peak > 0 else shaped


def _lap(cfg: ScenarioConfig, t: np.ndarray) -> np.ndarray:
    # straight, left bend, slalom section, right bend, straight
    A = cfg.steer_amplitude
    T = cfg.duration
    knots = np.array([0.0, 0.15, 0.35, 0.6, 0.8, 1.0]) * T
    out = np.zeros_like(t)
    left = (t >= knots[1]) & (t < knots[2])
    out[left] = A * _smoothstep((t[left] - knots[1]) / 1.0) * _smoothstep((knots[2] - t[left]) / 1.0)
    sl = (t >= knots[2]) & (t < knots[3])
    out[sl] = 0.6 * A * np.sin(2 * np.pi * SLALOM_FREQ * (t[sl] - knots[2]))
    right = (t >= knots[3]) & (t < knots[4])
    out[right] = -0.8 * A * _smoothstep((t[right] - knots[3]) / 1.0) * _smoothstep((knots[4] - t[right]) / 1.0)
    return out


def steering_profile(kind: str, t, cfg: ScenarioConfig):
    """Road-wheel steering angle [rad] at time(s) ``t``."""
    if kind not in KINDS:
        raise ConfigError(f"unknown manoeuvre kind {kind!r}")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < -1e-12) or np.any(t > cfg.duration + 1e-9):
        raise ConfigError("t outside [0, duration]")
    A = cfg.steer_amplitude
    if kind in ("skidpad", "braking_in_turn"):
        out = np.full_like(t, A)
    elif kind == "slalom":
        out = A * np.sin(2 * np.pi * SLALOM_FREQ * t)
    elif kind == "j_turn":
        out = A * _smoothstep((t - J_TURN_START) / J_TURN_RAMP)
    elif kind == "lane_change":
        tau = t - LANE_CHANGE_START
        inside = (tau >= 0) & (tau <= LANE_CHANGE_PERIOD)
        out = np.where(inside, A * np.sin(2 * np.pi * tau / LANE_CHANGE_PERIOD), 0.0)
    elif kind == "spiral":
        out = A * t / cfg.duration
    elif kind == "random_steer":
        grid = np.arange(cfg.n_samples) * cfg.dt
        out = np.interp(t, grid, _random_steer(cfg, grid))
    else:
        grid = np.arange(cfg.n_samples) * cfg.dt
        out = np.interp(t, grid, _lap(cfg, grid))
    return float(out[0]) if scalar else out


BRAKE_START = 2.0


def accel_profile(cfg: ScenarioConfig, t: np.ndarray) -> np.ndarray:
    """Longitudinal acceleration input [m/s^2]."""
    ax = np.zeros_like(t)
    if cfg.kind == "braking_in_turn":
        ax[t >= BRAKE_START] = cfg.long_accel
    elif cfg.kind == "lap":
        T = cfg.duration
        ax[(t >= 0.05 * T) & (t < 0.12 * T)] = 1.5
        ax[(t >= 0.82 * T) & (t < 0.9 * T)] = -2.0
    return ax


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def truth_parameters(cfg: ScenarioConfig, truth_params: VehicleParams) -> np.ndarray:
    mm = cfg.mismatch
    p = truth_params.scaled(mm.stiffness_scale_front, mm.stiffness_scale_rear)
    return vehicle.pack_params(p, mm.load_transfer, mm.cog_height, mm.track_width)


def generate(cfg: ScenarioConfig, truth_params: VehicleParams | None = None) -> Manoeuvre:
    truth_params = truth_params or VehicleParams.default()
    n = cfg.n_samples
    t = np.arange(n) * cfg.dt
    inputs = np.ascontiguousarray(
        np.column_stack([steering_profile(cfg.kind, t, cfg), accel_profile(cfg, t)])
    )
    rng = np.random.default_rng([cfg.seed, 1])
    proc = np.zeros((n, 3))
    if any(cfg.process_noise_std):
        proc = rng.standard_normal((n, 3)) * np.asarray(cfg.process_noise_std)
        proc[0] = 0.0
    p = truth_parameters(cfg, truth_params)
    x0 = np.array([cfg.speed, 0.0, 0.0])
    xs = vehicle.simulate(p, x0, inputs, proc, cfg.dt)
    finite = np.all(np.isfinite(xs), axis=1)
    if not finite.all():
        raise GenerationError(f"{cfg.label}: truth simulation diverged at sample {int(np.argmin(finite))}")
    slow = xs[:, 0] < MIN_SCENARIO_SPEED
    if slow.any():
        raise GenerationError(
            f"{cfg.label}: speed fell below {MIN_SCENARIO_SPEED} m/s at sample {int(np.argmax(slow))}"
        )
    zs = vehicle.observe_all(p, xs, inputs)
    noise = np.random.default_rng([cfg.seed, 2]).standard_normal((n, 3)) * np.asarray(cfg.sensor_noise_std)
    meas = zs + noise
    return Manoeuvre(
        name=cfg.label,
        dt=cfg.dt,
        t=t,
        steer_angle=inputs[:, 0],
        long_accel=inputs[:, 1],
        meas_vx=meas[:, 0],
        meas_ay=meas[:, 1],
        meas_yawrate=meas[:, 2],
        true_vx=xs[:, 0],
        true_vy=xs[:, 1],
        true_yawrate=xs[:, 2],
        true_beta=np.arctan(xs[:, 1] / xs[:, 0]),
    )


# per-kind ranges: (duration, speed range, amplitude range, long accel range)
_KIND_RANGES = {
    "skidpad": (12.0, (14.0, 20.0), (0.045, 0.07), (0.0, 0.0)),
    "slalom": (12.0, (16.0, 24.0), (0.03, 0.055), (0.0, 0.0)),
    "j_turn": (8.0, (15.0, 22.0), (0.05, 0.09), (0.0, 0.0)),
    "lane_change": (7.0, (16.0, 25.0), (0.035, 0.06), (0.0, 0.0)),
    "braking_in_turn": (7.0, (18.0, 24.0), (0.04, 0.06), (-2.5, -1.5)),
    "spiral": (20.0, (14.0, 18.0), (0.06, 0.1), (0.0, 0.0)),
    "random_steer": (20.0, (15.0, 22.0), (0.03, 0.06), (0.0, 0.0)),
    "lap": (40.0, (16.0, 20.0), (0.05, 0.08), (0.0, 0.0)),
}


@dataclass(frozen=True)
class DatasetConfig:
    """Settings shared by every manoeuvre of a generated data set."""

    sensor_noise_std: tuple[float, float, float] = DEFAULT_SENSOR_STD
    mismatch: MismatchSpec = field(default_factory=MismatchSpec)
    process_noise_std: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dt: float = 0.01
    vehicle: VehicleParams = field(default_factory=VehicleParams.default)

    @classmethod
    def noise_only(cls, process_noise_std=(0.01, 0.005, 0.001), **kw) -> "DatasetConfig":
        """No model mismatch; known additive process noise in the truth.

        The true process-noise variances are then ``process_noise_std**2``,
        which gives the cost landscape a known reference point.
        """
        return cls(mismatch=MismatchSpec.none(), process_noise_std=tuple(process_noise_std), **kw)

    @property
    def true_q(self) -> tuple[float, float, float]:
        return tuple(s * s for s in self.process_noise_std)

    @property
    def observation_noise(self) -> tuple[float, float, float]:
        return tuple(s * s for s in self.sensor_noise_std)

    def to_dict(self) -> dict:
        return {
            "sensor_noise_std": list(self.sensor_noise_std),
            "mismatch": asdict(self.mismatch),
            "process_noise_std": list(self.process_noise_std),
            "dt": self.dt,
            "vehicle": self.vehicle.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown dataset config key(s): {', '.join(unknown)}")
        kw = dict(data)
        if "mismatch" in kw:
            kw["mismatch"] = MismatchSpec(**kw["mismatch"])
        if "vehicle" in kw:
            kw["vehicle"] = VehicleParams.from_dict(kw["vehicle"])
        for key in ("sensor_noise_std", "process_noise_std"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        return cls(**kw)


def scenario_for(kind: str, seed: int, ds: DatasetConfig, name: str | None = None) -> ScenarioConfig:
    duration, speed, amp, accel = _KIND_RANGES[kind]
    rng = np.random.default_rng([seed, 0])
    u = rng.uniform(size=3)
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    return ScenarioConfig(
        kind=kind,
        duration=duration,
        speed=float(speed[0] + u[0] * (speed[1] - speed[0])),
        steer_amplitude=float(sign * (amp[0] + u[1] * (amp[1] - amp[0]))),
        long_accel=float(accel[0] + u[2] * (accel[1] - accel[0])),
        sensor_noise_std=ds.sensor_noise_std,
        mismatch=ds.mismatch,
        process_noise_std=ds.process_noise_std,
        seed=seed,
        dt=ds.dt,
        name=name,
    )


def _composition_configs(composition, seed: int, offset: int, ds: DatasetConfig) -> list[ScenarioConfig]:
    cfgs = []
    idx = 0
    for kind, count in composition:
        for _ in range(count):
            s = seed * _SEED_STRIDE + offset + idx
            cfgs.append(scenario_for(kind, s, ds, name=f"{idx:02d}_{kind}"))
            idx += 1
    return cfgs


def training_configs(seed: int = 0, ds: DatasetConfig | None = None) -> list[ScenarioConfig]:
    return _composition_configs(TRAIN_COMPOSITION, seed, _TRAIN_OFFSET, ds or DatasetConfig())


def test_configs(seed: int = 0, ds: DatasetConfig | None = None) -> list[ScenarioConfig]:
    return _composition_configs(TEST_COMPOSITION, seed, _TEST_OFFSET, ds or DatasetConfig())


def training_set(seed: int = 0, ds: DatasetConfig | None = None) -> list[Manoeuvre]:
    """The 8-manoeuvre training set."""
    ds = ds or DatasetConfig()
    return [generate(c, ds.vehicle) for c in training_configs(seed, ds)]


def test_set(seed: int = 0, ds: DatasetConfig | None = None) -> list[Manoeuvre]:
    """The 23-manoeuvre test set."""
    ds = ds or DatasetConfig()
    return [generate(c, ds.vehicle) for c in test_configs(seed, ds)]


# keep pytest from collecting the helpers above as tests
test_configs.__test__ = False
test_set.__test__ = False


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def save(man: Manoeuvre, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        cols = [getattr(man, c) for c in COLUMNS]
        for k in range(len(man)):
            w.writerow([repr(float(c[k])) for c in cols])


def load(path: str | Path, name: str | None = None) -> Manoeuvre:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1, path=str(path)) from None
        if tuple(h.strip() for h in header) != COLUMNS:
            raise ParseError(f"bad header, expected {','.join(COLUMNS)}", line=1, path=str(path))
        for row in reader:
            lineno = reader.line_num
            if len(row) != len(COLUMNS):
                raise ParseError(
                    f"expected {len(COLUMNS)} fields, found {len(row)}", line=lineno, path=str(path)
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=str(path)) from None
    if len(rows) < 2:
        raise InvariantError(f"{path}: too few samples")
    data = np.array(rows)
    t = data[:, 0]
    dt = round(float((t[-1] - t[0]) / (len(t) - 1)), 12)
    kwargs = {c: data[:, i] for i, c in enumerate(COLUMNS)}
    return Manoeuvre(name=name or path.stem, dt=dt, **kwargs)


def load_dir(path: str | Path) -> list[Manoeuvre]:
    """All manoeuvre CSVs of a directory in file-name order."""
    files = sorted(Path(path).glob("*.csv"))
    if not files:
        raise ParseError(f"no manoeuvre CSV files in {path}")
    return [load(f) for f in files]

