import json

import pytest
from hypothesis import given, strategies as st

from openground.clients.replies import ParsedObjects
from openground.errors import SchemaError
from openground.task_chain import (
    construct_chain,
    edit_distance,
    load_human_chains,
    parse_objects,
    waed_human,
    waed_model,
)


class Canned:
    def __init__(self, **replies):
        self.replies = replies
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        return self.replies[request.template_id]


BOX = ParsedObjects("box", ("boxes stack", "door", "sink"))
COUNTS = {"boxes stack": 0, "door": 3, "sink": 2, "box": 17}
FULL_REPLY = json.dumps({
    "reason": "fixtures first",
    "sequence": [
        {"name": "sink", "origin_index": 2},
        {"name": "door", "origin_index": 1},
        {"name": "boxes stack", "origin_index": 0},
        {"name": "box", "origin_index": -1},
    ],
})


def test_parse_objects_example():
    vlm = Canned(objects_parsing=json.dumps({"objects": [
        {"name": "box", "is_target": True}, {"name": "boxes stack", "is_target": False},
        {"name": "door", "is_target": False}, {"name": "sink", "is_target": False}]}))
    assert parse_objects("find the box", vlm) == BOX


def test_parse_objects_zero_targets():
    vlm = Canned(objects_parsing='{"objects": [{"name": "a", "is_target": false}]}')
    with pytest.raises(SchemaError):
        parse_objects("q", vlm, retries=0)


def test_full_and_jump():
    full = construct_chain("q", BOX, COUNTS, "full", Canned(task_chain=FULL_REPLY))
    assert full.sequence == ["sink", "door", "boxes stack", "box"]
    jump = construct_chain("q", BOX, COUNTS, "jump", Canned(task_chain=FULL_REPLY))
    assert jump.sequence == ["sink", "box"]


def test_full_prompt_has_counts_relevant_does_not():
    vlm = Canned(task_chain=FULL_REPLY)
    construct_chain("q", BOX, COUNTS, "full", vlm)
    construct_chain("q", BOX, COUNTS, "relevant", vlm)
    full_prompt, rel_prompt = (r.prompt for r in vlm.requests)
    assert '("door", 3)' in full_prompt and '("box", 17)' in full_prompt
    assert '("door", 3)' not in rel_prompt and '"door"' in rel_prompt


@pytest.mark.parametrize("strategy", ["full", "relevant", "difficulty", "random", "jump"])
def test_single_object_chain(strategy):
    chain = construct_chain("q", ParsedObjects("cup", ()), {"cup": 2}, strategy, Canned())
    assert chain.sequence == ["cup"]


def test_difficulty_order():
    parsed = ParsedObjects("t", ("a", "b", "c"))
    chain = construct_chain("q", parsed, {"a": 3, "b": 1, "c": 0, "t": 5}, "difficulty", Canned())
    assert chain.sequence == ["b", "a", "c", "t"]


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_random_is_seeded_permutation(seed, n):
    rel = tuple(f"o{i}" for i in range(n))
    parsed = ParsedObjects("t", rel)
    counts = dict.fromkeys(parsed.labels, 1)
    a = construct_chain("q", parsed, counts, "random", Canned(), seed)
    b = construct_chain("q", parsed, counts, "random", Canned(), seed)
    assert a == b
    assert sorted(a.sequence[:-1]) == sorted(rel) and a.sequence[-1] == "t"


def test_chain_reply_validation():
    bad_target = json.dumps({"reason": "", "sequence": [{"name": "box", "origin_index": -1}, {"name": "sink", "origin_index": 2}]})
    with pytest.raises(SchemaError, match="not last"):
        construct_chain("q", BOX, COUNTS, "full", Canned(task_chain=bad_target), retries=0)
    wrong_name = json.dumps({"reason": "", "sequence": [{"name": "door", "origin_index": 2}, {"name": "box", "origin_index": -1}]})
    with pytest.raises(SchemaError, match="does not match"):
        construct_chain("q", BOX, COUNTS, "full", Canned(task_chain=wrong_name), retries=0)
    with pytest.raises(ValueError, match="unknown strategy"):
        construct_chain("q", BOX, COUNTS, "greedy", Canned())


def dp_oracle(a, b):
    # full-table Wagner-Fischer, written independently of the two-row version
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        for j in range(len(b) + 1):
            if i == 0 or j == 0:
                d[i][j] = i + j
            else:
                d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def test_edit_distance_examples():
    assert edit_distance("abc", "abc") == 0
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance([1, 2, 3], [1, 3, 2]) == 2


seqs = st.lists(st.integers(0, 4), max_size=12)


@given(seqs, seqs)
def test_edit_distance_oracle_and_symmetry(a, b):
    assert edit_distance(a, b) == dp_oracle(a, b) == edit_distance(b, a)


@given(seqs, seqs, seqs)
def test_edit_distance_triangle(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_waed_model_examples():
    assert waed_model({"t": ["a", "b"]}, {"t": [(["a", "b"], 1)]}) == 0
    humans = {"t": [(["a", "b", "c"], 3), (["x", "y", "w"], 1)]}
    # prediction differs from the first chain by 1 edit and from the second by 3
    pred = {"t": ["a", "z", "c"]}
    assert edit_distance(pred["t"], humans["t"][0][0]) == 1
    assert edit_distance(pred["t"], humans["t"][1][0]) == 3
    assert waed_model(pred, humans) == pytest.approx(1.5, abs=1e-12)
    two = {"t1": [(["a"], 1)], "t2": [(["a", "b"], 1)]}
    assert waed_model({"t1": ["b"], "t2": ["b", "a"]}, two) == pytest.approx(1.5, abs=1e-12)


def test_waed_label_canonicalisation():
    assert waed_model({"t": [" Sink", "BOX"]}, {"t": [(["sink", "box"], 1)]}) == 0


def test_waed_human_examples():
    assert waed_human({"t": [(["a", "b"], 1)]}) == 0
    assert waed_human({"t": [(["a", "b"], 1), (["b", "a"], 1)]}) == pytest.approx(0.5, abs=1e-12)
    assert waed_human({"t": [(["a", "b"], 2), (["a", "b"], 5)]}) == 0


def test_waed_mismatched_ids():
    with pytest.raises(ValueError, match=r"\['t2', 't3'\]"):
        waed_model({"t1": ["a"], "t2": ["a"]}, {"t1": [(["a"], 1)], "t3": [(["a"], 1)]})


def test_load_human_chains(tmp_path):
    data = {"tasks": [{"task_id": 1, "chains": [{"sequence": ["a", "b"], "weight": 2}]}]}
    (tmp_path / "h.json").write_text(json.dumps(data))
    assert load_human_chains(tmp_path / "h.json") == {"1": [(["a", "b"], 2.0)]}
    data["tasks"][0]["chains"][0]["weight"] = 0
    (tmp_path / "h.json").write_text(json.dumps(data))
    with pytest.raises(ValueError, match="positive"):
        load_human_chains(tmp_path / "h.json")
