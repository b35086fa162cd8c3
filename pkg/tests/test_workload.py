import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dp
from mfdse.sampling import lattice_map
from mfdse.workload import (
    DIM_MAX,
    FEATURE_HIGH,
    FEATURE_LOW,
    HwConfig,
    InvalidDesignError,
    LayerShape,
    SwMapping,
    all_bundled_layers,
    bundled_workload_path,
    decode_features,
    encode_features,
    enumerate_hw_space,
    load_workload,
    scale_raw,
    validate_fit,
    validate_mapping,
)


def test_hw_space_size_and_range():
    space = enumerate_hw_space()
    # 4 array sizes x 32 accumulator sizes x 32 scratchpad sizes
    assert len(space) == 4 * 32 * 32
    assert len(set(space)) == len(space)
    assert HwConfig(4, 8, 8) in space
    assert HwConfig(32, 256, 256) in space
    assert space == sorted(space)


def test_validate_mapping_identity(small_layer):
    assert validate_mapping(SwMapping.single_tile(small_layer), small_layer)


def test_validate_mapping_rejects_bad_product(small_layer):
    ones = (1,) * 7
    bad = list(small_layer.dims)
    bad[1] += 1
    assert not validate_mapping(SwMapping(tuple(range(7)), (ones, ones, tuple(bad))), small_layer)


def test_validate_mapping_split_factors():
    layer = LayerShape(1, 16, 1, 1, 1, 1, 1)
    sw = SwMapping(tuple(range(7)), ((1, 4, 1, 1, 1, 1, 1), (1, 2, 1, 1, 1, 1, 1), (1, 2, 1, 1, 1, 1, 1)))
    assert validate_mapping(sw, layer)


def test_validate_mapping_rejects_non_permutation(small_layer):
    sw = SwMapping((0, 0, 2, 3, 4, 5, 6), SwMapping.single_tile(small_layer).tiling)
    assert not validate_mapping(sw, small_layer)


def test_fit_minimal_tiles_any_hw(small_layer):
    for hw in [(4, 8, 8), (32, 256, 256), (8, 8, 256)]:
        assert validate_fit(make_dp(hw=hw))


def test_fit_rejects_oversized_scratchpad_tile():
    # 300 KB of weights alone at level 1
    layer = LayerShape(1, 256, 600, 1, 1, 1, 1)
    ones = (1,) * 7
    dp = make_dp(hw=(16, 256, 8), tiling=(ones, layer.dims, ones), layer=layer)
    assert not validate_fit(dp)


def _spad_bytes_by_hand(layer, t):
    # cumulative level-1 extents in N, K, C, P, Q, R, S order
    n, k, c, p, q, r, s = t
    h = (p - 1) * layer.stride + (r - 1) * layer.dilation + 1
    w = (q - 1) * layer.stride + (s - 1) * layer.dilation + 1
    return 2 * (k * c * r * s + n * c * h * w + n * k * p * q)


def test_fit_boundary_equal_to_capacity():
    # (K + 1)(C + 1) = 4097 = 17 * 241 gives K*C + C + K = 4096 elements = 8 KB
    layer = LayerShape(1, 16, 240, 1, 1, 1, 1)
    ones = (1,) * 7
    tiling = (ones, layer.dims, ones)
    assert _spad_bytes_by_hand(layer, layer.dims) == 8 * 1024
    assert validate_fit(make_dp(hw=(4, 8, 8), tiling=tiling, layer=layer))


def test_fit_accumulator_boundary():
    layer = LayerShape(1, 16, 1, 16, 32, 1, 1)
    ones = (1,) * 7
    exact = ((1, 16, 1, 16, 16, 1, 1), ones, (1, 1, 1, 1, 2, 1, 1))
    over = ((1, 16, 1, 16, 32, 1, 1), ones, ones)
    # output tile 16*16*16 = 4096 elements = 8 KB
    assert validate_fit(make_dp(hw=(16, 8, 256), tiling=exact, layer=layer))
    assert not validate_fit(make_dp(hw=(16, 8, 256), tiling=over, layer=layer))
    assert validate_fit(make_dp(hw=(16, 16, 256), tiling=over, layer=layer))


def test_scaling_bounds():
    assert np.allclose(scale_raw(FEATURE_LOW), 0.0)
    assert np.allclose(scale_raw(FEATURE_HIGH), 1.0)


def _scalar_scale(dp):
    """Component-by-component scaler written independently of the package."""
    out = []
    out.append((dp.hw.array_dim - 4) / (32 - 4))
    out.append((dp.hw.acc_kb - 8) / (256 - 8))
    out.append((dp.hw.spad_kb - 8) / (256 - 8))
    out.extend(code / 6 for code in dp.sw.loop_order)
    for d in range(7):
        for lvl in range(3):
            out.append(math.log2(dp.sw.tiling[lvl][d]) / math.log2(DIM_MAX[d]))
    for d, v in enumerate(dp.layer.dims):
        out.append(math.log2(v) / math.log2(DIM_MAX[d]))
    out.append((dp.layer.stride - 1) / 3)
    out.append((dp.layer.dilation - 1) / 3)
    return np.array(out)


def test_encode_midpoint_matches_scalar_scaler():
    layer = LayerShape(2, 64, 32, 14, 14, 3, 3, stride=2, dilation=1)
    tiling = ((1, 16, 8, 2, 7, 3, 1), (2, 2, 4, 7, 1, 1, 3), (1, 2, 1, 1, 2, 1, 1))
    dp = make_dp(hw=(16, 128, 96), order=(3, 1, 6, 0, 2, 5, 4), tiling=tiling, layer=layer)
    f = encode_features(dp)
    assert f.shape == (40,)
    assert np.allclose(f, _scalar_scale(dp), atol=1e-12)
    assert np.all((f >= 0) & (f <= 1))


def test_encode_rejects_invalid(small_layer):
    ones = (1,) * 7
    dp = make_dp(tiling=(ones, ones, ones))
    with pytest.raises(InvalidDesignError):
        encode_features(dp)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 0.999999), min_size=40, max_size=40), st.integers(0, 25))
def test_encoding_round_trip(u, layer_idx):
    layer = all_bundled_layers()[layer_idx]
    dp = lattice_map(np.array(u), layer)
    back = decode_features(encode_features(dp))
    assert back.hw == dp.hw
    assert back.sw == dp.sw
    assert back.layer.dims == layer.dims
    assert (back.layer.stride, back.layer.dilation) == (layer.stride, layer.dilation)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 0.999999), min_size=40, max_size=40), st.integers(0, 25))
def test_valid_mappings_multiply_out(u, layer_idx):
    layer = all_bundled_layers()[layer_idx]
    dp = lattice_map(np.array(u), layer)
    assert validate_mapping(dp.sw, layer)
    for d in range(7):
        assert dp.sw.tiling[0][d] * dp.sw.tiling[1][d] * dp.sw.tiling[2][d] == layer.dims[d]


def test_bundled_resnet_like():
    [(name, layers)] = load_workload(bundled_workload_path("resnet-like"))
    assert name == "resnet-like"
    assert len(layers) == 8
    for layer in layers:
        assert min(layer.dims) >= 1
        assert layer.in_bounds()
        # input extent covers the filter
        assert (layer.P - 1) * layer.stride + (layer.R - 1) * layer.dilation + 1 >= layer.R


def test_bundled_workload_sizes():
    for name in ("resnet-like", "unet-like", "bert-like", "retinanet-like"):
        [(_, layers)] = load_workload(bundled_workload_path(name))
        assert 6 <= len(layers) <= 10


def test_load_rejects_zero_dimension(tmp_path):
    bad = {"name": "bad", "layers": [{"N": 1, "K": 4, "C": 0, "P": 1, "Q": 1, "R": 1, "S": 1}]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_workload(path)


def test_load_rejects_empty(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    with pytest.raises(ValueError):
        load_workload(path)
    path.write_text(json.dumps({"name": "x", "layers": []}))
    with pytest.raises(ValueError):
        load_workload(path)
