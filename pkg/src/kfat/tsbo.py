"""Two-stage Bayesian optimisation over a box of process-noise values.

Stage one (fast exploration) starts from a single evaluation at the centre
of the normalised box and repeatedly splits hyper-rectangles into 2^d
children. Every unevaluated rectangle centre is a candidate; the acquisition
function picks one candidate per iteration, the objective is evaluated there
and that rectangle is split. The stage ends once the incumbent has stayed
put (moved less than ``tr_fe_factor * |q*|``) ``max_fe`` times in a row.

Stage two (pure exploitation) shrinks the box to ``[(1-a) q*, (1+a) q*]``
around the stage-one optimum and repeats the procedure with 3^d splits for
evaluations until ``max_pe`` have been spent, retraining the surrogate
only while fewer than ``max_sm`` have been spent. By default the budget
counts every evaluation of the run, so a long first stage leaves less for
the second one; ``budget_total=False`` gives the second stage its own
``max_pe`` evaluations.

All geometry lives in the unit cube of the outer box; physical values are
only produced when the objective is called.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .acquisition import AcquisitionSchedule, score
from .errors import ConfigError, RangeError, ShrinkError, TuningError
from .result import TraceEntry, TuningResult
from .surrogate import ObservationSet, SurrogateModel, fit

log = logging.getLogger(__name__)

LINEAR, LOG10 = "linear", "log10"


@dataclass(frozen=True)
class BoxSpace:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    scale: tuple[str, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        sc = (self.scale,) * len(lo) if isinstance(self.scale, str) else tuple(self.scale)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "scale", sc)
        if not (len(lo) == len(hi) == len(sc)) or not lo:
            raise ConfigError("bounds and scales must have equal, non-zero length")
        for i, (a, b, s) in enumerate(zip(lo, hi, sc)):
            if s not in (LINEAR, LOG10):
                raise ConfigError(f"unknown scale {s!r} in dimension {i}")
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise ConfigError(f"dimension {i}: need finite lower < upper, got [{a}, {b}]")
            if s == LOG10 and a <= 0:
                raise ConfigError(f"dimension {i}: log10 scale needs lower > 0")

    @classmethod
    def default(cls, dim: int = 3) -> "BoxSpace":
        return cls((1e-10,) * dim, (1.0,) * dim, (LOG10,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        is_log = np.array([s == LOG10 for s in self.scale])
        lo = np.where(is_log, np.log10(np.where(is_log, self.lower, 1.0)), self.lower)
        hi = np.where(is_log, np.log10(np.where(is_log, self.upper, 1.0)), self.upper)
        return lo, hi, is_log

    def contains(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        tol = 1e-12 * np.maximum(np.abs(self.lower), np.abs(self.upper))
        return bool(np.all(q >= np.asarray(self.lower) - tol) and np.all(q <= np.asarray(self.upper) + tol))

    def volume(self) -> float:
        lo, hi, _ = self._edges()
        return float(np.prod(hi - lo))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxSpace":
        unknown = set(d) - {"lower", "upper", "scale"}
        if unknown:
            raise ConfigError(f"unknown space key(s): {', '.join(sorted(unknown))}")
        return cls(tuple(d["lower"]), tuple(d["upper"]), d.get("scale", LOG10))


def normalize(q, space: BoxSpace) -> np.ndarray:
    """Map a physical point into the unit cube of ``space``."""
    q = np.asarray(q, dtype=float)
    if not space.contains(q):
        raise RangeError(f"point {q.tolist()} lies outside the search box")
    lo, hi, is_log = space._edges()
    v = np.where(is_log, np.log10(np.where(is_log, np.maximum(q, 1e-300), 1.0)), q)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def denormalize(u, space: BoxSpace) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(u < -1e-12) or np.any(u > 1 + 1e-12):
        raise RangeError(f"normalised point {u.tolist()} lies outside the unit cube")
    lo, hi, is_log = space._edges()
    v = lo + np.clip(u, 0.0, 1.0) * (hi - lo)
    out = np.where(is_log, 10.0**v, v)
    # pin the exact bounds so round trips at the edges are lossless
    out = np.where(u <= 0, space.lower, out)
    return np.where(u >= 1, space.upper, out)


@dataclass(frozen=True)
class HyperRect:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if not all(a < b for a, b in zip(self.lower, self.upper)):
            raise ConfigError("hyper-rectangle must have a non-empty interior")

    @classmethod
    def unit(cls, dim: int) -> "HyperRect":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))


def subdivide(rect: HyperRect, parts: int) -> list[HyperRect]:
    """Split into ``parts**d`` equal axis-aligned children."""
    if parts not in (2, 3):
        raise ConfigError("parts must be 2 or 3")
    edges = [
        [a + (b - a) * k / parts for k in range(parts)] + [b]
        for a, b in zip(rect.lower, rect.upper)
    ]
    out = []
    for idx in itertools.product(range(parts), repeat=len(edges)):
        lo = [edges[i][k] for i, k in enumerate(idx)]
        hi = [edges[i][k + 1] for i, k in enumerate(idx)]
        out.append(HyperRect(tuple(lo), tuple(hi)))
    return out


def update_counter(n: int, previous_best, new_best, threshold: float) -> int:
    """Convergence counter of the fast-exploration stage."""
    dist = float(np.linalg.norm(np.asarray(new_best, dtype=float) - np.asarray(previous_best, dtype=float)))
    return n + 1 if dist < threshold else 0


def shrink_space(q_star, alpha: float, outer: BoxSpace) -> BoxSpace:
    """Box ``[(1-alpha) q*, (1+alpha) q*]`` intersected with ``outer``."""
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    q = np.asarray(q_star, dtype=float)
    if not outer.contains(q):
        raise RangeError("q* lies outside the outer box")
    a = (1 - alpha) * q
    b = (1 + alpha) * q
    lo = np.maximum(np.minimum(a, b), outer.lower)
    hi = np.minimum(np.maximum(a, b), outer.upper)
    bad = np.flatnonzero(~(hi > lo))
    if bad.size:
        raise ShrinkError(f"shrunk box has zero width in dimension {int(bad[0])}")
    return BoxSpace(tuple(lo), tuple(hi), outer.scale)


@dataclass(frozen=True)
class TsboConfig:
    max_fe: int = 15
    max_pe: int = 40
    max_sm: int = 38
    max_af: int = 6
    tr_fe_factor: float = 0.01
    beta: float = 0.01
    alpha: float = 0.15
    nu: float = 15.0
    f_star: float | None = None
    # count exploitation iterations from the first evaluation of the run
    # (True) or from the start of the exploitation stage (False)
    budget_total: bool = True

    def __post_init__(self):
        if self.max_sm > self.max_pe:
            raise ConfigError("max_sm must not exceed max_pe")
        if min(self.max_fe, self.max_pe, self.max_af) < 1 or self.max_sm < 0:
            raise ConfigError("iteration limits must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.nu > 2:
            raise ConfigError("nu must exceed 2")
        if self.beta < 0 or self.tr_fe_factor <= 0:
            raise ConfigError("beta must be >= 0 and tr_fe_factor > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TsboConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown tsbo key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class SearchState:
    """Everything the stages share: evaluations, surrogate, AF schedule."""

    space: BoxSpace
    kind: str
    nu: float
    seed: int
    schedule: AcquisitionSchedule
    trace: list[TraceEntry] = field(default_factory=list)
    obs: ObservationSet | None = None
    model: SurrogateModel | None = None
    refits: int = 0

    @property
    def best_index(self) -> int:
        return int(np.argmin([e.j for e in self.trace]))

    @property
    def best_j(self) -> float:
        return self.trace[self.best_index].j

    @property
    def best_norm(self) -> np.ndarray:
        return np.asarray(self.trace[self.best_index].q_norm)

    @property
    def best_q(self) -> np.ndarray:
        return np.asarray(self.trace[self.best_index].q)

    def seen(self, u) -> bool:
        if self.obs is None or len(self.obs) == 0:
            return False
        return bool(np.any(np.max(np.abs(self.obs.points - u), axis=1) <= 1e-12))

    def evaluate(self, objective, u, stage: str, af: str) -> float:
        q = denormalize(u, self.space)
        try:
            j = float(objective(q))
        except Exception as exc:
            raise TuningError(f"objective failed at q={q.tolist()}: {exc}", self.trace) from exc
        if not math.isfinite(j):
            raise TuningError(f"objective returned non-finite value at q={q.tolist()}", self.trace)
        self.trace.append(TraceEntry(len(self.trace) + 1, stage, af, tuple(q.tolist()), tuple(np.asarray(u).tolist()), j))
        obs = self.obs if self.obs is not None else ObservationSet.empty(self.space.dim)
        self.obs = obs.add(u, j)
        return j

    def refit(self) -> None:
        self.model = fit(self.obs, self.kind, self.nu, seed=self.seed + self.refits)
        self.refits += 1

    def pick(self, rects: list[HyperRect]) -> tuple[HyperRect, str] | None:
        cands = [r for r in rects if not self.seen(r.center)]
        if not cands:
            return None
        centers = np.array([r.center for r in cands])
        mean, var = self.model.predict(centers)
        kind = self.schedule.current()
        nu = self.nu if self.kind == "tsp" else None
        s = score(kind, mean, np.sqrt(var), self.best_j, nu)
        return cands[int(np.argmax(s))], kind.tag


def _new_state(space, cfg: TsboConfig, kind: str, seed: int) -> SearchState:
    if kind not in ("tsp", "gp"):
        raise ConfigError(f"unknown surrogate kind {kind!r}")
    return SearchState(space, kind, cfg.nu, seed, AcquisitionSchedule(cfg.max_af, cfg.beta, cfg.f_star))


def _step(state: SearchState, objective, rects, parts: int, stage: str, refit: bool) -> HyperRect | None:
    picked = state.pick(rects)
    if picked is None:
        return None
    rect, tag = picked
    before = state.best_j
    state.evaluate(objective, rect.center, stage, tag)
    state.schedule.record(tag, before, state.best_j)
    if refit:
        state.refit()
    rects.remove(rect)
    rects.extend(subdivide(rect, parts))
    return rect


@dataclass
class StageResult:
    state: SearchState
    rects: list[HyperRect]
    counter_history: list[int] = field(default_factory=list)

    @property
    def best_q(self) -> np.ndarray:
        return self.state.best_q

    @property
    def model(self) -> SurrogateModel:
        return self.state.model

    @property
    def trace(self) -> list[TraceEntry]:
        return self.state.trace


def fast_exploration(objective, space: BoxSpace, cfg: TsboConfig = TsboConfig(), kind: str = "tsp", seed: int = 0) -> StageResult:
    state = _new_state(space, cfg, kind, seed)
    state.evaluate(objective, np.full(space.dim, 0.5), "fast", "")
    state.refit()
    rects = subdivide(HyperRect.unit(space.dim), 2)
    n = 0
    history = []
    incumbent = state.best_norm
    while n < cfg.max_fe:
        if _step(state, objective, rects, 2, "fast", refit=True) is None:
            log.warning("fast exploration ran out of candidates")
            break
        new = state.best_norm
        n = update_counter(n, incumbent, new, cfg.tr_fe_factor * float(np.linalg.norm(new)))
        history.append(n)
        incumbent = new
    log.info("fast exploration: %d evaluations, best J %.6g", len(state.trace), state.best_j)
    return StageResult(state, rects, history)


def pure_exploitation(objective, shrunk: BoxSpace, previous: StageResult, cfg: TsboConfig = TsboConfig()) -> StageResult:
    state = previous.state
    lo = normalize(shrunk.lower, state.space)
    hi = normalize(shrunk.upper, state.space)
    rects = subdivide(HyperRect(tuple(lo), tuple(hi)), 3)
    start = len(state.trace)
    n_iter = start if cfg.budget_total else 0
    while n_iter < cfg.max_pe:
        if _step(state, objective, rects, 3, "exploit", refit=n_iter + 1 <= cfg.max_sm) is None:
            log.warning("pure exploitation ran out of candidates")
            break
        n_iter += 1
    log.info("pure exploitation: %d evaluations, best J %.6g", len(state.trace) - start, state.best_j)
    return StageResult(state, rects)


def tune(
    objective,
    space: BoxSpace | None = None,
    cfg: TsboConfig = TsboConfig(),
    kind: str = "tsp",
    seed: int = 0,
) -> TuningResult:
    """Run both stages and collect the full trace."""
    space = space or BoxSpace.default()
    t0 = time.perf_counter()
    fe = fast_exploration(objective, space, cfg, kind, seed)
    n_fast = len(fe.trace)
    shrunk = shrink_space(fe.best_q, cfg.alpha, space)
    pe = pure_exploitation(objective, shrunk, fe, cfg)
    state = pe.state
    return TuningResult(
        method=f"tsbo-{kind}",
        best_q=tuple(state.best_q.tolist()),
        best_j=state.best_j,
        trace=list(state.trace),
        counts={"fast": n_fast, "exploit": len(state.trace) - n_fast, "refits": state.refits},
        wall_time=time.perf_counter() - t0,
        seed=seed,
        space=space.to_dict(),
        config=cfg.to_dict(),
        extra={
            "selected_af": state.schedule.chosen,
            "shrunk_space": shrunk.to_dict(),
            "surrogate": state.model.to_dict(),
        },
    )
