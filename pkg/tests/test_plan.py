import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from ivdnet.plan import (
    DENSE_WITHIN_STREAM,
    HYPER_DENSE,
    PLAIN,
    build_plan,
    input_channels,
    permutation_for,
)


def enumerate_hyper_dense_channels(num_streams, growth, layer):
    """Oracle: list every feature map of every stream from layers before ``layer``."""
    maps = []
    for stream in range(num_streams):
        for k in range(1, layer):
            maps.append((stream, k, growth[k - 1]))
    return sum(c for _, _, c in maps)


TABLE1 = build_plan(4, [32, 64, 128, 256], HYPER_DENSE)


@pytest.mark.parametrize("layer, expected", [(1, 1), (2, 128), (3, 384), (4, 896), (5, 1920)])
def test_table1_input_channels(layer, expected):
    for stream in range(1, 5):
        assert input_channels(TABLE1, layer, stream) == expected


def test_plain_chain():
    plan = build_plan(1, [32, 64], PLAIN)
    assert input_channels(plan, 2, 1) == 32
    assert plan.inputs(2, 1) == ((1, 1),)


def test_two_stream_hyper_dense():
    plan = build_plan(2, [32, 64], HYPER_DENSE)
    assert input_channels(plan, 2, 1) == 64
    assert input_channels(plan, 3, 1) == 192


def test_three_streams_equal_growth():
    plan = build_plan(3, [8, 8, 8], HYPER_DENSE)
    assert input_channels(plan, 3, 2) == 48


@pytest.mark.parametrize("M", [1, 2, 3, 4])
@pytest.mark.parametrize("L", [1, 2, 3, 4, 5])
def test_channel_formula_matches_enumeration(M, L):
    growth = [8 * (k + 1) + M for k in range(L)]
    plan = build_plan(M, growth, HYPER_DENSE)
    for layer in range(2, L + 2):
        expected = enumerate_hyper_dense_channels(M, growth, layer)
        assert expected == M * sum(growth[:layer - 1])
        for s in range(1, M + 1):
            assert input_channels(plan, layer, s) == expected
            if layer <= L:
                assert len(plan.inputs(layer, s)) == M * (layer - 1)


@pytest.mark.parametrize("mode", [PLAIN, DENSE_WITHIN_STREAM, HYPER_DENSE])
def test_stream_symmetry(mode):
    plan = build_plan(3, [4, 8, 16, 32], mode)
    for layer in range(1, 5):
        sets = [Counter(s_ for s_, _ in plan.inputs(layer, s)) for s in range(1, 4)]
        layers = [Counter(l_ for _, l_ in plan.inputs(layer, s)) for s in range(1, 4)]
        assert len({tuple(sorted(c.items())) for c in layers}) == 1
        if mode == HYPER_DENSE and layer > 1:
            refs = [Counter(plan.inputs(layer, s)) for s in range(1, 4)]
            assert refs[0] == refs[1] == refs[2]
        elif mode != HYPER_DENSE:
            assert sets[0][1] == sets[1][2] == sets[2][3]


def test_dense_within_stream_single_stream():
    growth = [4, 6, 10]
    plan = build_plan(1, growth, DENSE_WITHIN_STREAM)
    assert [input_channels(plan, l, 1) for l in (2, 3, 4)] == [4, 10, 20]
    assert build_plan(1, growth, HYPER_DENSE).per_layer_inputs == plan.per_layer_inputs


def test_permutation_two_streams():
    assert permutation_for(2, 2, ["x1^1", "x1^2"], 2) == ["x1^2", "x1^1"]
    sources = ["a1", "a2", "b1", "b2"]
    assert permutation_for(2, 3, sources, 2) == ["a2", "a1", "b2", "b1"]


def test_permutation_stream_one_is_identity():
    for M in range(1, 5):
        src = list(range(3 * M))
        assert permutation_for(1, 4, src, M) == src


def test_permutation_three_streams():
    assert permutation_for(3, 2, ["a", "b", "c"], 3) == ["c", "a", "b"]


def test_plan_uses_rotation_for_stream_two():
    plan = build_plan(2, [4, 4, 4], HYPER_DENSE)
    assert plan.inputs(3, 1) == ((1, 2), (2, 2), (1, 1), (2, 1))
    assert plan.inputs(3, 2) == ((2, 2), (1, 2), (2, 1), (1, 1))
    unpermuted = build_plan(2, [4, 4, 4], HYPER_DENSE, permute_streams=False)
    assert unpermuted.inputs(3, 2) == plan.inputs(3, 1)


@given(st.integers(1, 4), st.integers(1, 6), st.data())
def test_permutation_is_bijection(M, blocks, data):
    stream = data.draw(st.integers(1, M))
    src = [(s, l) for l in range(blocks, 0, -1) for s in range(1, M + 1)]
    out = permutation_for(stream, blocks + 1, src, M)
    assert sorted(out) == sorted(src)
    assert len(set(out)) == len(out)


def test_validation_errors():
    with pytest.raises(ValueError):
        build_plan(0, [8])
    with pytest.raises(ValueError):
        build_plan(2, [])
    with pytest.raises(ValueError):
        build_plan(2, [8, 0])
    with pytest.raises(ValueError):
        build_plan(2, [8], mode="sparse")
    with pytest.raises(ValueError):
        permutation_for(1, 1, [1, 2, 3], 2)


def test_range_errors():
    with pytest.raises(IndexError):
        input_channels(TABLE1, 0, 1)
    with pytest.raises(IndexError):
        input_channels(TABLE1, 6, 1)
    with pytest.raises(IndexError):
        input_channels(TABLE1, 2, 5)


def test_deterministic_and_json():
    assert build_plan(3, [4, 8], HYPER_DENSE) == build_plan(3, [4, 8], HYPER_DENSE)
    doc = json.loads(TABLE1.to_json())
    bridge = [r for r in doc["layers"] if r["layer"] == "bridge"]
    assert bridge[0]["in_channels"] == 1920
    assert "1920" in TABLE1.format_table()
