import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coughcam.cnn import (
    Bottleneck,
    ConvBlock,
    Inception,
    build_network,
    conv2d,
    cross_entropy,
    forward,
    group_norm,
    init_weights,
    linear,
    load_weights,
    pool2d,
    read_weight_files,
    save_weights,
    softmax,
    write_weight_files,
    zero_weights,
)
from coughcam.cnn.networks import conv_layer_count
from coughcam.errors import ConfigError, CorruptWeightsError, ShapeError
from oracles import naive_conv2d, naive_group_norm, naive_pool
from tables import GNET_INCEPTION, RNET_SETS, expected_trace


# --- layers -----------------------------------------------------------------

def test_conv_hand_case():
    y = conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1)
    np.testing.assert_array_equal(y[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])
    assert y.dtype == np.float32


conv_case = st.tuples(
    st.integers(1, 2),  # batch
    st.integers(1, 3),  # in channels
    st.integers(1, 3),  # out channels
    st.integers(1, 3),  # kernel
    st.integers(1, 2),  # stride
    st.integers(0, 2),  # padding
    st.integers(3, 7),  # spatial size
    st.integers(0, 2**31 - 1),
)


@settings(max_examples=60, deadline=None)
@given(conv_case)
def test_conv_matches_naive_loops(case):
    b, cin, cout, k, s, pad, n, seed = case
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((b, cin, n, n))
    w = rng.standard_normal((cout, cin, k, k))
    bias = rng.standard_normal(cout)
    got = conv2d(x, w, bias, s, pad)
    want = naive_conv2d(x, w, bias, s, pad)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 5, 5)), np.zeros((1, 1, 3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([8, 16, 24]), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_group_norm_matches_naive(c, hw, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(3.0, 2.0, (2, c, hw, hw))
    np.testing.assert_allclose(group_norm(x, 8), naive_group_norm(x, 8), rtol=1e-5, atol=1e-5)


def test_group_norm_cases():
    x = np.arange(16.0).reshape(1, 8, 1, 2)
    # each group holds two channels of two values: (a, a+1, a+2, a+3)
    z = (np.array([0, 1, 2, 3]) - 1.5) / math.sqrt(1.25 + 1e-5)
    np.testing.assert_allclose(group_norm(x, 4)[0].reshape(4, 4), np.tile(z, (4, 1)), rtol=1e-6)
    # constant group -> zeros, not NaN
    np.testing.assert_array_equal(group_norm(np.full((1, 8, 3, 3), 7.0)), 0.0)
    # scale and shift are applied per channel
    y = group_norm(x, 4, gamma=np.full(8, 2.0), beta=np.full(8, -1.0))
    np.testing.assert_allclose(y, 2 * group_norm(x, 4) - 1, rtol=1e-6)
    with pytest.raises(ConfigError):
        group_norm(np.zeros((1, 12, 2, 2)), 8)


@pytest.mark.parametrize("mode", ["max", "avg"])
@pytest.mark.parametrize("k,s,pad", [(2, 2, 0), (3, 2, 1), (3, 1, 1), (8, 1, 0)])
def test_pool_matches_naive(mode, k, s, pad):
    x = np.random.default_rng(k * 10 + s).standard_normal((2, 3, 8, 8))
    np.testing.assert_allclose(pool2d(x, mode, k, s, pad), naive_pool(x, mode, k, s, pad), rtol=1e-6)


def test_pool_hand_cases():
    x = np.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(pool2d(x, "max", 2, 2)[0, 0], [[6, 8], [14, 16]])
    np.testing.assert_array_equal(pool2d(x, "max", 3, 2, 1)[0, 0], [[6, 8], [14, 16]])
    np.testing.assert_array_equal(pool2d(-x, "max", 3, 2, 1)[0, 0], [[-1, -2], [-5, -6]])
    np.testing.assert_array_equal(pool2d(x, "avg", 4, 1)[0, 0], [[8.5]])


def test_linear_and_softmax():
    w = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, -1.0]])
    np.testing.assert_array_equal(linear(np.array([[1.0, 1.0]]), w, [0, 0, 1]), [[3, 7, 0]])
    np.testing.assert_allclose(softmax(np.array([math.log(2), 0.0])), [2 / 3, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(softmax(np.array([1000.0, 0.0])), [1, 0], atol=1e-12)
    assert abs(cross_entropy(np.array([0.5, 0.5]), [0]) - 0.693147) < 1e-6
    assert abs(cross_entropy(np.array([[0.5, 0.5], [1.0, 0.0]]), [1, 0]) - 0.346574) < 1e-6
    assert cross_entropy(np.array([[0.0, 1.0]]), [0]) == pytest.approx(-math.log(1e-12))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_softmax_is_a_distribution(z):
    p = softmax(np.array(z))
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)
    np.testing.assert_allclose(softmax(np.array(z) + 7.0), p, atol=1e-12)


# --- modules ----------------------------------------------------------------

def _random_params(module, seed=0):
    rng = np.random.default_rng(seed)
    return {n: rng.uniform(-0.3, 0.3, s).astype(np.float32) for n, s, _ in module.param_specs("m")}


@pytest.mark.parametrize("widths", GNET_INCEPTION)
def test_inception_width_is_sum_of_branches(widths):
    mod = Inception(32, *widths)
    assert mod.out_ch == widths[0] + widths[2] + widths[4] + widths[5]


def test_inception_concatenates_branches():
    mod = Inception(16, 8, 8, 16, 8, 8, 8)
    p = _random_params(mod)
    x = np.random.default_rng(1).standard_normal((1, 16, 6, 6)).astype(np.float32)
    y = mod.forward(x, p, "m")
    assert y.shape == (1, 40, 6, 6)
    b1 = ConvBlock(16, 8, 1).forward(x, p, "m.b1")
    b4 = ConvBlock(16, 8, 1).forward(pool2d(x, "max", 3, 1, 1), p, "m.b4_proj")
    np.testing.assert_array_equal(y[:, :8], b1)
    np.testing.assert_array_equal(y[:, 32:], b4)


def test_bottleneck_with_silenced_residual_is_relu_identity():
    blk = Bottleneck(32, 8, 32, 1)
    assert not blk.projects
    p = _random_params(blk)
    p["m.conv3.gn.weight"][:] = 0
    p["m.conv3.gn.bias"][:] = 0
    x = np.random.default_rng(2).standard_normal((1, 32, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(blk.forward(x, p, "m"), np.maximum(x, 0))


def test_projecting_bottleneck_shapes():
    blk = Bottleneck(16, 16, 64, 2)
    assert blk.projects
    y = blk.forward(np.ones((1, 16, 64, 64), np.float32), _random_params(blk), "m")
    assert y.shape == (1, 64, 32, 32) and np.all(y >= 0)


# --- whole networks ---------------------------------------------------------

@pytest.fixture(scope="module")
def seeded():
    return {k: init_weights(build_network(k), seed=7) for k in ("VNet", "GNet", "RNet")}


@pytest.mark.parametrize("kind", ["VNet", "GNet", "RNet"])
def test_trace_matches_reference_table(seeded, kind):
    x = np.random.default_rng(0).standard_normal((1, 3, 128, 128))
    res = forward(seeded[kind], x, check_finite=True)
    assert res.trace == expected_trace(kind)
    p = res.probabilities
    assert p.shape == (1, 2) and abs(p.sum() - 1) < 1e-6


def test_network_structure_counts():
    g = build_network("GNet")
    assert g.count(Inception) == 9
    assert conv_layer_count(build_network("VNet")) == 13
    r = build_network("RNet")
    sets = [row.module for row in r.rows if type(row.module).__name__ == "BottleneckSet"]
    assert [(s.mid_ch, s.out_ch, s.count) for s in sets] == RNET_SETS
    assert conv_layer_count(r) == 1 + 3 * 16


def test_vnet_parameter_count():
    convs = [(3, 16), (16, 16), (16, 32), (32, 32), (32, 64), (64, 64), (64, 64)] + [(64, 128)] + [(128, 128)] * 5
    n = sum(ci * co * 9 + co + 2 * co for ci, co in convs)
    n += 2048 * 512 + 512 + 512 * 32 + 32 + 32 * 2 + 2
    assert build_network("VNet").n_params == n


@pytest.mark.parametrize("kind", ["VNet", "GNet", "RNet"])
@pytest.mark.parametrize("channels", [1, 2, 3])
def test_zero_weights_give_even_odds(kind, channels):
    m = zero_weights(build_network(kind, channels))
    x = np.random.default_rng(channels).standard_normal((2, channels, 128, 128))
    np.testing.assert_allclose(forward(m, x).probabilities, 0.5, atol=1e-7)


def test_batch_items_are_independent(seeded):
    m = seeded["VNet"]
    x = np.random.default_rng(3).standard_normal((3, 3, 128, 128)).astype(np.float32)
    together = forward(m, x).probabilities
    for i in range(3):
        np.testing.assert_allclose(forward(m, x[i : i + 1]).probabilities, together[i : i + 1], rtol=1e-6)


def test_forward_rejects_wrong_input(seeded):
    with pytest.raises(ShapeError):
        forward(seeded["VNet"], np.zeros((1, 2, 128, 128)))
    with pytest.raises(ShapeError, match="layer"):
        forward(seeded["VNet"], np.zeros((1, 3, 64, 64)))
    with pytest.raises(ConfigError):
        forward(build_network("VNet"), np.zeros((1, 3, 128, 128)))


def test_init_is_seeded(seeded):
    again = init_weights(build_network("RNet"), seed=7)
    other = init_weights(build_network("RNet"), seed=8)
    name = "set1.0.conv2.conv.weight"
    np.testing.assert_array_equal(again.weights[name], seeded["RNet"].weights[name])
    assert not np.array_equal(other.weights[name], seeded["RNet"].weights[name])


# --- weight files -----------------------------------------------------------

def test_weight_roundtrip(tmp_path, seeded):
    m = seeded["RNet"]
    manifest, blob = write_weight_files(m, tmp_path / "r.json")
    back = read_weight_files(manifest)
    for name in m.weights:
        np.testing.assert_array_equal(back.weights[name], m.weights[name])
    x = np.random.default_rng(4).standard_normal((1, 3, 128, 128))
    np.testing.assert_array_equal(forward(back, x).probabilities, forward(m, x).probabilities)
    meta = json.loads(manifest.read_text())
    assert meta["kind"] == "RNet" and meta["params"][0]["offset"] == 0


def test_corrupt_weights_are_rejected(seeded):
    blob, manifest = save_weights(seeded["VNet"])
    with pytest.raises(CorruptWeightsError):
        load_weights("VNet", blob[:-8], manifest)
    flipped = bytearray(blob)
    flipped[100] ^= 0xFF
    with pytest.raises(CorruptWeightsError):
        load_weights("VNet", bytes(flipped), manifest)
    with pytest.raises(CorruptWeightsError):
        load_weights("GNet", blob, manifest)
    bad = dict(manifest, params=manifest["params"][:-1])
    with pytest.raises(CorruptWeightsError):
        load_weights("VNet", blob, bad)
