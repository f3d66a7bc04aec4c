from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfat.errors import ConfigError, RangeError, ShrinkError, TuningError
from kfat.tsbo import (
    BoxSpace,
    HyperRect,
    TsboConfig,
    denormalize,
    fast_exploration,
    normalize,
    shrink_space,
    subdivide,
    tune,
    update_counter,
)

SPACE = BoxSpace.default()
OFF_CENTRE = np.array([0.3, 0.7, 0.45])


def quad_centre(q):
    return float(np.sum((normalize(q, SPACE) - 0.5) ** 2))


def quad_off(q):
    return float(np.sum((normalize(q, SPACE) - OFF_CENTRE) ** 2))


# -- box and normalisation --------------------------------------------------


def test_normalize_examples():
    assert normalize([1e-5] * 3, SPACE) == pytest.approx([0.5] * 3)
    assert normalize([1e-10, 1.0, 1e-3], SPACE) == pytest.approx([0.0, 1.0, 0.7])
    lin = BoxSpace((-5.0, 0.0), (10.0, 15.0), "linear")
    assert normalize([2.5, 3.0], lin) == pytest.approx([0.5, 0.2])


def test_normalize_out_of_range():
    with pytest.raises(RangeError):
        normalize([2.0, 1e-5, 1e-5], SPACE)
    with pytest.raises(RangeError):
        denormalize([0.5, 1.2, 0.5], SPACE)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_normalize_round_trip(u):
    u = np.array(u)
    q = denormalize(u, SPACE)
    assert SPACE.contains(q)
    np.testing.assert_allclose(normalize(q, SPACE), u, atol=1e-12)


def test_bounds_are_exact():
    assert denormalize([0, 0, 0], SPACE).tolist() == [1e-10] * 3
    assert denormalize([1, 1, 1], SPACE).tolist() == [1.0] * 3


def test_box_validation():
    with pytest.raises(ConfigError):
        BoxSpace((0.0,), (1.0,), "log10")
    with pytest.raises(ConfigError):
        BoxSpace((1.0,), (0.5,), "linear")
    with pytest.raises(ConfigError):
        BoxSpace((1.0,), (2.0,), "ln")
    assert BoxSpace.from_dict(SPACE.to_dict()) == SPACE


# -- rectangles -------------------------------------------------------------


@pytest.mark.parametrize("parts", [2, 3])
def test_subdivide_tiles_parent(parts):
    parent = HyperRect((0.1, 0.2, 0.0), (0.5, 0.8, 0.3))
    kids = subdivide(parent, parts)
    assert len(kids) == parts**3
    assert sum(k.volume for k in kids) == pytest.approx(parent.volume, rel=1e-12)
    centres = np.array([k.center for k in kids])
    assert len(np.unique(centres.round(12), axis=0)) == len(kids)
    assert np.all(centres > parent.lower) and np.all(centres < parent.upper)


def test_subdivide_rejects_other_parts():
    with pytest.raises(ConfigError):
        subdivide(HyperRect.unit(2), 4)


def test_counter_sequence():
    thr = 0.01
    n = update_counter(0, [0.5, 0.5], [0.5, 0.5], thr)
    n = update_counter(n, [0.5, 0.5], [0.5, 0.505], thr)
    assert n == 2
    assert update_counter(n, [0.5, 0.505], [0.7, 0.5], thr) == 0


# -- shrink -----------------------------------------------------------------


def test_shrink_examples():
    box = shrink_space([0.1, 0.1, 0.1], 0.15, SPACE)
    assert box.lower == pytest.approx((0.085,) * 3)
    assert box.upper == pytest.approx((0.115,) * 3)
    clipped = shrink_space([1.0, 1e-5, 1e-5], 0.15, SPACE)
    assert clipped.upper[0] == 1.0 and clipped.lower[0] == pytest.approx(0.85)


def test_shrink_zero_width_and_outside():
    lin = BoxSpace((-1.0,), (1.0,), "linear")
    with pytest.raises(ShrinkError):
        shrink_space([0.0], 0.15, lin)
    with pytest.raises(RangeError):
        shrink_space([2.0, 0.5, 0.5], 0.15, SPACE)


# -- config -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        TsboConfig(max_sm=41, max_pe=40)
    with pytest.raises(ConfigError):
        TsboConfig(nu=2.0)
    with pytest.raises(ConfigError):
        TsboConfig.from_dict({"max_fe": 3, "speed": 1})
    assert TsboConfig.from_dict(TsboConfig().to_dict()) == TsboConfig()


# -- runs -------------------------------------------------------------------


@pytest.fixture(scope="module")
def off_run():
    return tune(quad_off, SPACE, kind="tsp", seed=0)


@pytest.fixture(scope="module")
def centre_run():
    return tune(quad_centre, SPACE, kind="tsp", seed=0)


def test_first_evaluation_at_centre(off_run):
    first = off_run.trace[0]
    assert first.q_norm == (0.5, 0.5, 0.5)
    assert first.stage == "fast" and first.af == ""


def test_centre_optimum_stops_after_max_fe(centre_run):
    # the centre is already optimal, so the counter climbs straight to 15
    assert centre_run.counts["fast"] == 16
    assert centre_run.best_j == 0.0
    assert centre_run.evaluations == 40


def test_off_centre_quadratic(off_run):
    best = np.array(off_run.trace[int(np.argmin([e.j for e in off_run.trace]))].q_norm)
    assert np.linalg.norm(best - OFF_CENTRE) < 0.05
    assert off_run.counts["fast"] <= 31
    # frozen regression values
    assert off_run.counts == {"fast": 31, "exploit": 9, "refits": 38}
    assert off_run.best_j == pytest.approx(0.002010624467865364, rel=1e-6)


def test_budget_limits(off_run, centre_run):
    cfg = TsboConfig()
    for r in (off_run, centre_run):
        exploit = [e for e in r.trace if e.stage == "exploit"]
        assert len(exploit) <= cfg.max_pe
        assert r.evaluations <= max(cfg.max_pe, r.counts["fast"] + 1)
        assert r.counts["refits"] <= r.counts["fast"] + cfg.max_sm


def test_exploit_points_inside_shrunk_box(off_run):
    box = BoxSpace.from_dict(off_run.extra["shrunk_space"])
    for e in off_run.trace:
        if e.stage == "exploit":
            assert box.contains(e.q)


def test_best_so_far_monotone(off_run):
    b = off_run.best_so_far()
    assert np.all(np.diff(b) <= 0)
    assert off_run.best_j == b[-1]


def test_selected_af_recorded(off_run):
    assert off_run.extra["selected_af"] in ("EI", "CBM")
    tags = [e.af for e in off_run.trace[1:7]]
    assert tags == ["EI", "CBM"] * 3


def test_same_seed_identical(off_run):
    again = tune(quad_off, SPACE, kind="tsp", seed=0)
    assert again.to_dict() == off_run.to_dict()


def test_candidate_pool_bound():
    fe = fast_exploration(quad_off, SPACE, TsboConfig(max_fe=3), "gp", 0)
    # one split of the unit cube, then one split per evaluation after the first
    assert len(fe.rects) == 1 + len(fe.trace) * (2**3 - 1)
    assert fe.counter_history[-1] == 3


def test_objective_failure_carries_trace():
    calls = []

    def flaky(q):
        calls.append(q)
        if len(calls) == 5:
            raise ValueError("boom")
        return quad_off(q)

    with pytest.raises(TuningError) as info:
        tune(flaky, SPACE, kind="gp")
    assert len(info.value.trace) == 4


def test_non_finite_objective():
    with pytest.raises(TuningError):
        tune(lambda q: float("nan"), SPACE)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        tune(quad_off, SPACE, kind="rf")


def test_branin_gets_close():
    from conftest import BRANIN_MIN, branin

    space = BoxSpace((-5.0, 0.0), (10.0, 15.0), "linear")
    r = tune(branin, space, kind="tsp", seed=0)
    assert r.best_j <= BRANIN_MIN * 1.01
