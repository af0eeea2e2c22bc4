import copy
import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hwprune.codegen import (
    alg1_recurrence,
    build_schedule,
    count_mac_statements,
    emit_source,
    interpret,
)
from hwprune.errors import ConfigError, DimensionError
from hwprune.hw import LayerHwConfig, estimate_layer
from hwprune.nn import FixedPointFormat, Layer
from hwprune.structures import extract_groups, to_weight_index

P16 = FixedPointFormat(16, 6)


def cfg(rf):
    return LayerHwConfig(reuse_factor=rf, precision=P16)


def dense_layer(n_in, n_out, seed=0):
    rng = np.random.default_rng(seed)
    return Layer("dense", "fc", rng.standard_normal((n_in, n_out)), rng.standard_normal(n_out))


def group_mask(layer, rf, dead, partial=()):
    """Mask with whole dsp groups ``dead`` and one weight of each ``partial`` group pruned."""
    n_in, n_out = layer.matrix_shape()
    mask = np.ones(n_in * n_out, dtype=bool)
    groups = extract_groups(layer, cfg(rf))
    for k in dead:
        mask[to_weight_index(groups[k].weight_coords, n_in, n_out)] = False
    for k in partial:
        mask[to_weight_index(groups[k].weight_coords[:1], n_in, n_out)] = False
    return mask.reshape(n_in, n_out)


def test_one_by_one():
    layer = Layer("dense", "fc", np.array([[2.0]]), np.zeros(1))
    np.testing.assert_array_equal(interpret(build_schedule(layer, cfg(1)), layer.weights, [3.0]), [6.0])


def test_twelve_weight_schedule():
    sched = build_schedule(dense_layer(3, 4), cfg(3))
    assert sched.block_factor == 4
    assert sum(len(s) for s in sched.instances) == 12
    assert all(s.live and not s.masked for slots in sched.instances for s in slots)
    assert [[s.weight_index for s in slots] for slots in sched.instances] == [
        [0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11],
    ]


def test_masked_group_is_dead_and_partial_is_flagged():
    layer = dense_layer(3, 4)
    sched = build_schedule(layer, cfg(3), group_mask(layer, 3, dead=[1], partial=[2]))
    assert sched.live_instances() == [0, 2, 3]
    assert sched.partial_instances() == [2]
    assert not any(s.live for s in sched.instances[1])


def test_latency_has_no_schedule():
    layer = dense_layer(2, 2)
    with pytest.raises(ConfigError):
        build_schedule(layer, LayerHwConfig(strategy="Latency", granularity="unstructured"))


def test_interpret_shape_mismatch():
    layer = dense_layer(4, 2)
    sched = build_schedule(layer, cfg(2))
    with pytest.raises(DimensionError):
        interpret(sched, layer.weights, np.zeros(3))


@pytest.mark.parametrize("rf", [1, 2, 4, 8, 80])
def test_interpret_equals_dense_16x5(rf):
    layer = dense_layer(16, 5, seed=rf)
    x = np.random.default_rng(99).standard_normal(16)
    got = interpret(build_schedule(layer, cfg(rf)), layer.weights, x)
    np.testing.assert_allclose(got, x @ layer.weights, rtol=0, atol=1e-12)


@pytest.mark.parametrize("rf", [1, 2, 4, 5, 8, 10, 16, 20, 40, 80])
def test_interpret_equals_masked_dense(rf):
    layer = dense_layer(16, 5, seed=rf)
    n_groups = -(-80 // rf)
    rng = np.random.default_rng(rf)
    dead = rng.choice(n_groups, size=n_groups // 2, replace=False)
    mask = group_mask(layer, rf, dead)
    mask &= rng.random(mask.shape) > 0.2  # plus scattered unstructured zeros
    x = rng.standard_normal(16)
    sched = build_schedule(layer, cfg(rf), mask)
    got = interpret(sched, layer.weights, x)
    np.testing.assert_allclose(got, x @ np.where(mask, layer.weights, 0.0), rtol=0, atol=1e-12)
    assert len(sched.live_instances()) == estimate_layer(layer, cfg(rf), mask).dsp


def test_conv_kernel_schedule():
    rng = np.random.default_rng(0)
    conv = Layer("conv2d", "c", rng.standard_normal((3, 3, 2, 4)), np.zeros(4))
    patch = rng.standard_normal(18)
    w = conv.weight_matrix()
    got = interpret(build_schedule(conv, cfg(6)), w, patch)
    np.testing.assert_allclose(got, patch @ w, rtol=0, atol=1e-12)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_schedule_properties(n_in, n_out, rf, seed):
    n = n_in * n_out
    rf = min(rf, n)
    rng = np.random.default_rng(seed)
    layer = Layer("dense", "fc", rng.standard_normal((n_in, n_out)), np.zeros(n_out))
    mask = rng.random((n_in, n_out)) > 0.5
    sched = build_schedule(layer, cfg(rf), mask)
    x = rng.standard_normal(n_in)
    np.testing.assert_allclose(
        interpret(sched, layer.weights, x), x @ np.where(mask, layer.weights, 0.0), rtol=0, atol=1e-12
    )
    assert len(sched.live_instances()) == estimate_layer(layer, cfg(rf), mask).dsp


@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_recurrence_agrees_when_rf_divides_n_in(n_in, n_out, data):
    divisors = [d for d in range(1, n_in + 1) if n_in % d == 0]
    rf = data.draw(st.sampled_from(divisors))
    sched = build_schedule(Layer("dense", "fc", np.zeros((n_in, n_out)), np.zeros(n_out)), cfg(rf))
    trace = sorted(alg1_recurrence(n_in, n_out, rf), key=lambda t: (t[1], t[0]))
    slots = [(s.cycle, j, s.weight_index, s.input_index, s.output_index)
             for j, ss in enumerate(sched.instances) for s in ss]
    assert trace == slots


# --- emitted source -----------------------------------------------------------


def test_all_live_statement_count():
    layer = dense_layer(16, 5)
    src = emit_source(layer, cfg(4))
    assert count_mac_statements(src) == 20
    assert "#pragma HLS PIPELINE" in src and "#pragma HLS UNROLL" in src


def test_pruned_groups_elided():
    layer = dense_layer(16, 5, seed=3)
    dead = [0, 3, 7, 19]
    mask = group_mask(layer, 4, dead)
    src = emit_source(layer, cfg(4), mask)
    assert count_mac_statements(src) == 20 - len(dead)
    literals = set(re.findall(r"-?\d+\.\d+(?:e-?\d+)?", src))
    pruned_values = layer.weights[~mask]
    assert not any(repr(float(v)) in literals for v in pruned_values)
    for k in dead:
        assert f"w_fc_m{k}[" not in src
    kept = layer.weights[mask]
    assert all(repr(float(v)) in literals for v in kept)


def test_partial_group_keeps_statement():
    layer = dense_layer(16, 5, seed=5)
    mask = group_mask(layer, 4, dead=[], partial=[2])
    src = emit_source(layer, cfg(4), mask)
    assert count_mac_statements(src) == 20
    assert src.count("no DSP saving") >= 1


def test_ragged_last_instance_is_guarded():
    src = emit_source(dense_layer(2, 5), cfg(3))
    assert count_mac_statements(src) == 4
    assert "if (i < 1)" in src


def test_emission_deterministic():
    layer = dense_layer(8, 4, seed=1)
    mask = group_mask(layer, 2, dead=[1, 5])
    assert emit_source(layer, cfg(2), mask) == emit_source(copy.deepcopy(layer), cfg(2), mask.copy())


def test_latency_source_elides_per_weight():
    layer = dense_layer(3, 2, seed=2)
    mask = np.array([[True, False], [True, True], [False, True]])
    lcfg = LayerHwConfig(strategy="Latency", granularity="unstructured", precision=FixedPointFormat(18, 6))
    src = emit_source(layer, lcfg, mask)
    assert count_mac_statements(src) == 4
    for v in layer.weights[~mask]:
        assert repr(float(v)) not in src
