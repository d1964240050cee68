import math

import pytest
from hypothesis import given, strategies as st

from mmattn import InvalidArgument
from mmattn.schedule import Pipeline, Stage, StageKind, TrainSchedule, build_schedule, schedule_cost


def shape(schedule):
    return [(s.kind.value, "&".join(m[0] for m in s.order)) for s in schedule]


def test_conventional_two_modalities():
    assert shape(build_schedule("CONVENTIONAL", 10, 10)) == [("PT", "I&T"), ("SFT", "I&T")]


def test_dot_two_modalities():
    assert shape(build_schedule("DOT", 10, 10)) == [("PT", "T&I"), ("PT", "I&T"), ("SFT", "T&I"), ("SFT", "I&T")]


def test_stage_labels():
    assert [s.label for s in build_schedule("DOT", 1, 1)] == ["PT:T&I", "PT:I&T", "SFT:T&I", "SFT:I&T"]


def test_zero_step_stage_rejected():
    with pytest.raises(InvalidArgument):
        Stage(StageKind.PT, ("IMAGE", "TEXT"), 0)


def test_zero_step_phase_is_omitted():
    assert shape(build_schedule("DOT", 0, 5)) == [("SFT", "T&I"), ("SFT", "I&T")]


def test_pt_after_sft_rejected():
    with pytest.raises(InvalidArgument):
        TrainSchedule((Stage(StageKind.SFT, ("IMAGE", "TEXT"), 1), Stage(StageKind.PT, ("IMAGE", "TEXT"), 1)))


def test_cost_examples():
    assert schedule_cost(2, 5000, "CONVENTIONAL") == 10000
    assert schedule_cost(2, 5000, "DOT") == 20000
    assert schedule_cost(1, 7, "DOT") == schedule_cost(1, 7, "CONVENTIONAL")
    assert schedule_cost(3, 1, Pipeline.DOT) == 12


@pytest.mark.parametrize("n", [0, 7])
def test_cost_bounds(n):
    with pytest.raises(InvalidArgument):
        schedule_cost(n, 1, "DOT")


@given(st.integers(0, 10**6))
def test_dot_doubles_conventional_for_two(s):
    assert schedule_cost(2, s, "DOT") == 2 * schedule_cost(2, s, "CONVENTIONAL")


@given(st.integers(1, 4), st.integers(1, 50), st.integers(1, 50))
def test_cost_matches_built_schedule(n, pt, sft):
    mods = tuple(["IMAGE", "TEXT", "AUDIO", "DEPTH"][:n])
    sched = build_schedule("DOT", pt, sft, mods)
    assert len(sched.stages) == 2 * math.factorial(n)
    assert sched.stages[-1].order == mods
    if pt == sft:
        assert sched.total_steps == schedule_cost(n, pt, "DOT")
