"""Acquisition functions for minimisation: Student-t EI and CBM.

Both are maximised over a finite candidate set. ``AcquisitionSchedule``
alternates EI and CBM for the first ``max_af`` iterations and then commits
to whichever produced the larger cumulative drop of the running best.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError

EI, CBM = "EI", "CBM"


@dataclass(frozen=True)
class AcquisitionKind:
    tag: str
    beta: float = 0.01
    f_star: float | None = None

    def __post_init__(self):
        if self.tag not in (EI, CBM):
            raise ConfigError(f"unknown acquisition function {self.tag!r}")
        if not self.beta >= 0:
            raise ConfigError("beta must be >= 0")


def ei(mean, std, nu, y_hat):
    """Expected improvement below ``y_hat`` under a Student-t posterior.

    ``nu=None`` or ``inf`` gives the Gaussian expected improvement. Returns a
    scalar for scalar input, otherwise an array.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ConfigError("std must be >= 0")
    gaussian = nu is None or math.isinf(nu)
    if not gaussian and not nu > 1:
        raise ConfigError("expected improvement needs nu > 1")
    improve = y_hat - mean
    pos = std > 0
    safe = np.where(pos, std, 1.0)
    z = improve / safe
    if gaussian:
        body = safe * stats.norm.pdf(z) + improve * stats.norm.cdf(z)
    else:
        body = safe * (nu / (nu - 1.0)) * (1.0 + z * z / nu) * stats.t.pdf(z, nu) + improve * stats.t.cdf(z, nu)
    out = np.where(pos, np.maximum(body, 0.0), np.maximum(improve, 0.0))
    return float(out) if out.ndim == 0 else out


def cbm(mean, std, beta, f_star):
    """Confidence-bound score ``std * sqrt(beta) + (f_star - mean)``."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ConfigError("std must be >= 0")
    if not beta >= 0:
        raise ConfigError("beta must be >= 0")
    out = std * math.sqrt(beta) + (f_star - mean)
    return float(out) if out.ndim == 0 else out


def score(kind: AcquisitionKind, mean, std, y_hat: float, nu: float | None):
    if kind.tag == EI:
        return ei(mean, std, nu, y_hat)
    f_star = y_hat if kind.f_star is None else kind.f_star
    return cbm(mean, std, kind.beta, f_star)


@dataclass
class AfRecord:
    tag: str
    gain: float


def select_af(history: list[AfRecord], max_af: int) -> str | None:
    """Tag with the larger cumulative gain over the first ``max_af`` records.

    Returns ``None`` while fewer than ``max_af`` records exist. Ties go to EI.
    """
    if len(history) < max_af:
        return None
    gains = {EI: 0.0, CBM: 0.0}
    for rec in history[:max_af]:
        gains[rec.tag] += rec.gain
    return CBM if gains[CBM] > gains[EI] else EI


@dataclass
class AcquisitionSchedule:
    max_af: int = 6
    beta: float = 0.01
    f_star: float | None = None
    history: list[AfRecord] = field(default_factory=list)
    chosen: str | None = None

    def current(self) -> AcquisitionKind:
        if self.chosen is not None:
            tag = self.chosen
        else:
            tag = EI if len(self.history) % 2 == 0 else CBM
        return AcquisitionKind(tag, self.beta, self.f_star)

    def record(self, tag: str, best_before: float, best_after: float) -> None:
        if self.chosen is not None:
            return
        self.history.append(AfRecord(tag, max(best_before - best_after, 0.0)))
        self.chosen = select_af(self.history, self.max_af)
