# tests/unit/reaction/test_trigger.py
import json

import numpy as np
import pytest

from services.exceptions import InvalidArgumentError
from services.reaction import trigger
from services.reaction.rng import RngStream


def _worked(data):
    inst, split = trigger.instance_from_dict(data)
    assert split is None
    return inst


def test_worked_instance_fixed_point(worked_instance):
    _, data = worked_instance
    inst = _worked(data)
    assert trigger.smallest_fixed_point(inst) == frozenset({1, 2})
    assert trigger.iterate_trace(inst) == [frozenset(), frozenset({1}), frozenset({1, 2})]


def test_map_T_is_strict_at_threshold():
    # f equals e exactly: the label must not trigger
    inst = trigger.TriggerInstance(("a", "b"), [1.0, 1.0], [1.0, 0.0], [[0.0, 1.0], [0.0, 0.0]])
    assert trigger.map_T(inst, []) == frozenset()
    assert trigger.map_T(inst, ["a"]) == frozenset()
    assert trigger.smallest_fixed_point(inst) == frozenset()


def test_map_T_rejects_unknown_label(worked_instance):
    inst = _worked(worked_instance[1])
    with pytest.raises(InvalidArgumentError):
        trigger.map_T(inst, [7])


def test_empty_instance():
    inst = trigger.TriggerInstance((), np.zeros(0), np.zeros(0), np.zeros((0, 0)))
    assert trigger.smallest_fixed_point(inst) == frozenset()
    assert trigger.brute_force_smallest_fixed_point(inst) == frozenset()


def test_chain_needs_every_step():
    n = 6
    M = np.zeros((n, n))
    for i in range(n - 1):
        M[i, i + 1] = 2.0
    f = np.zeros(n)
    f[0] = 2.0
    inst = trigger.TriggerInstance(tuple(range(n)), np.ones(n), f, M)
    trace = trigger.iterate_trace(inst)
    assert len(trace) == n + 1
    assert trace[-1] == frozenset(range(n))


@pytest.mark.parametrize("bad", [
    {"labels": [1], "e": [-1.0], "f": [0.0], "M": [[0.0]]},
    {"labels": [1], "e": [1.0], "f": [float("nan")], "M": [[0.0]]},
    {"labels": [1, 2], "e": [1.0], "f": [0.0, 0.0], "M": [[0.0, 0.0], [0.0, 0.0]]},
    {"labels": [1, 1], "e": [1.0, 1.0], "f": [0.0, 0.0], "M": [[0.0, 0.0], [0.0, 0.0]]},
    {"labels": [1], "e": [1.0], "f": [0.0]},
])
def test_malformed_instances_are_rejected(bad):
    with pytest.raises(InvalidArgumentError):
        trigger.instance_from_dict(bad)


def test_brute_force_refuses_large_instances():
    n = trigger.BRUTE_FORCE_LIMIT + 1
    inst = trigger.TriggerInstance(tuple(range(n)), np.ones(n), np.zeros(n), np.zeros((n, n)))
    with pytest.raises(InvalidArgumentError):
        trigger.brute_force_smallest_fixed_point(inst)


def test_iteration_matches_brute_force_on_random_instances():
    gen = RngStream(7, 0).child("trigger").generator()
    for _ in range(200):
        size = int(gen.integers(1, 11))
        inst = trigger.random_instance(gen, size)
        assert trigger.smallest_fixed_point(inst) == trigger.brute_force_smallest_fixed_point(inst)


def test_two_stage_reproduces_fixed_point_on_random_instances():
    gen = RngStream(11, 0).child("two-stage").generator()
    for _ in range(200):
        size = int(gen.integers(1, 15))
        inst = trigger.random_instance(gen, size)
        split = trigger.random_split(gen, inst)
        result = trigger.two_stage(inst, split)
        assert not (result.s_minus & result.s_plus)
        assert result.union == trigger.smallest_fixed_point(inst)


def test_two_stage_on_worked_instance(worked_instance):
    data = dict(worked_instance[1])
    data["split"] = {"f_minus": [1.0, 0.0, 0.0], "M_minus": [[0.0, 0.0, 0.0]] * 3}
    inst, split = trigger.instance_from_dict(data)
    result = trigger.two_stage(inst, split)
    assert result.s_minus == frozenset({1})
    assert result.s_plus == frozenset({2})
    # label 2 kept its threshold and picked up 1's push through M+
    assert result.e_hat[2] == pytest.approx(1.0)
    assert result.f_hat[2] == pytest.approx(1.2)
    assert set(result.e_hat) == {2, 3}


def test_split_must_sum_to_the_instance(worked_instance):
    data = dict(worked_instance[1])
    data["split"] = {"f_minus": [2.0, 0.0, 0.0]}
    with pytest.raises(InvalidArgumentError):
        trigger.instance_from_dict(data)


def test_instance_file_round_trip(tmp_path, worked_instance):
    inst = _worked(worked_instance[1])
    path = tmp_path / "copy.json"
    path.write_text(json.dumps(trigger.instance_to_dict(inst)))
    again, _ = trigger.load_instance(path)
    assert again.labels == inst.labels
    assert trigger.smallest_fixed_point(again) == frozenset({1, 2})


def test_load_instance_reports_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(InvalidArgumentError):
        trigger.load_instance(path)


def test_sorted_labels_puts_numbers_first():
    assert trigger.sorted_labels({"b", 3, 1, "a"}) == [1, 3, "a", "b"]
