from __future__ import annotations

import json

import pytest

from overlap_ab.errors import IntegrityError, LogParseError
from overlap_ab.logio import read_trajectory_log, write_trajectory_log
from overlap_ab.simulators import BoredomSpec, boredom_policy, simulate_boredom_ab


def _rec(uid, arm, t, state=(0.0,), action=0, reward=0.0, prop=0.5):
    return json.dumps({"user_id": uid, "arm": arm, "t": t, "state": list(state),
                       "action": action, "reward": reward, "logged_propensity": prop})


def test_empty_stream():
    data = read_trajectory_log(b"")
    assert data.n_A == 0 and data.n_B == 0


def test_two_users_three_steps():
    lines = [_rec("a", "A", t) for t in (1, 2, 3)] + [_rec("b", "B", t) for t in (1, 2, 3)]
    data = read_trajectory_log("\n".join(lines))
    assert (data.n_A, data.n_B) == (1, 1)
    assert list(data.lengths) == [3, 3]


def test_records_need_not_be_contiguous_or_ordered():
    lines = [_rec("a", "A", 2, reward=1.0), _rec("b", "B", 1), _rec("a", "A", 1)]
    data = read_trajectory_log("\n".join(lines))
    a = data.trajectories[0]
    assert [s.reward for s in a.steps] == [0.0, 1.0]


def test_round_trip_is_byte_identical():
    spec = BoredomSpec.generate(d=4, seed=3).with_horizon(3)
    data = simulate_boredom_ab(spec, boredom_policy(spec, 10.0), boredom_policy(spec, 5.0), 50, 50, seed=1)
    assert data.n_users == 100
    raw = write_trajectory_log(data)
    back = read_trajectory_log(raw)
    assert back == data
    assert write_trajectory_log(back) == raw


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("{not json", "invalid JSON"),
        ("[1, 2]", "not a JSON object"),
        ('{"user_id": "a"}', "missing"),
        (_rec("a", "C", 1), "arm"),
        (_rec("a", "A", 0), "t must"),
        (_rec("a", "A", 1, reward=1.5), "reward"),
        (_rec("a", "A", 1, prop=0.0), "logged_propensity"),
        (_rec("a", "A", 1, action=-1), "action"),
    ],
)
def test_parse_errors_carry_line_number(line, fragment):
    src = _rec("ok", "A", 1) + "\n\n" + line
    with pytest.raises(LogParseError) as info:
        read_trajectory_log(src)
    assert info.value.line_number == 3
    assert fragment in str(info.value)


@pytest.mark.parametrize(
    "lines",
    [
        [_rec("a", "A", 1), _rec("a", "A", 1)],
        [_rec("a", "A", 1), _rec("b", "B", 1, state=(0.0, 1.0))],
        [_rec("a", "A", 1), _rec("a", "B", 2)],
        [_rec("a", "A", 1), _rec("a", "A", 3)],
    ],
    ids=["duplicate-step", "mixed-dimension", "both-arms", "gap"],
)
def test_integrity_errors(lines):
    with pytest.raises(IntegrityError):
        read_trajectory_log("\n".join(lines))
