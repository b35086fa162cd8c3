import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dp
from mfdse.oracle_high import HighFidelityOracle, evaluate_high, simulate_delay
from mfdse.oracle_low import evaluate_low
from mfdse.sampling import lattice_map
from mfdse.workload import TENSOR_DIMS, InvalidDesignError, LayerShape, all_bundled_layers

ONES = (1,) * 7
SETUP, BURST = 64, 8


def dma(n_bytes):
    return SETUP + math.ceil(n_bytes / BURST) if n_bytes else 0


def event_timeline(dp, tile_bytes, compute):
    """Event-by-event schedule of the scratchpad tiles.

    ``tile_bytes`` lists the level-1 (W, I, O) tile sizes in bytes.  A DMA
    moves every tensor whose tile id changed since the previous tile.
    """
    order = dp.sw.loop_order
    loops = [(d, dp.sw.tiling[2][d]) for d in order]
    double = 2 * sum(tile_bytes) <= dp.hw.spad_kb * 1024
    prev = None
    dma_end = []
    comp_end = []
    for idx in itertools.product(*(range(t) for _, t in loops)):
        ids = [tuple(i for (d, _), i in zip(loops, idx) if d in tdims) for tdims in TENSOR_DIMS]
        moved = sum(b for t, b in enumerate(tile_bytes) if prev is None or ids[t] != prev[t])
        prev = ids
        i = len(comp_end)
        last_comp = comp_end[-1] if comp_end else 0
        if double:
            start = max(dma_end[-1] if dma_end else 0, comp_end[i - 2] if i >= 2 else 0)
        else:
            start = last_comp
        dma_end.append(start + dma(moved))
        comp_end.append(max(last_comp, dma_end[-1]) + compute)
    return comp_end[-1], len(comp_end), double


# N1 K4 C4 P8 Q8 R3 S3 on a 4x4 array, everything in one array tile
CB_LAYER = LayerShape(1, 4, 4, 8, 8, 3, 3)
CB_DP = make_dp(hw=(4, 8, 8), tiling=(CB_LAYER.dims, ONES, ONES), layer=CB_LAYER)


def test_single_tile_compute_dominated():
    trace = simulate_delay(CB_DP)
    # fill 4 + 576 rows + drain 4; one DMA of (144 + 400 + 256) * 2 bytes
    assert trace.compute_per_tile == 584
    assert trace.n_tiles == 1
    assert trace.delay_cycles == 584 + 64 + 1600 // 8
    assert trace.delay_cycles == 848


def test_fixture_edp_is_product():
    out = evaluate_high(CB_DP)
    low = evaluate_low(CB_DP)
    assert out.energy_pj == low.energy_pj
    assert out.edp == low.energy_pj * 848.0


# K split into 2 DRAM tiles, Q into 2: 4 scratchpad tiles
FOUR_LAYER = LayerShape(1, 8, 32, 4, 8, 3, 3)
FOUR_TILING = ((1, 4, 32, 4, 4, 3, 3), ONES, (1, 2, 1, 1, 2, 1, 1))


def _four_tile_bytes():
    # level-1 extents N1 K4 C32 P4 Q4 R3 S3; 4736 bytes in total
    w = 4 * 32 * 3 * 3
    i = 1 * 32 * (4 - 1 + 3) * (4 - 1 + 3)
    o = 1 * 4 * 4 * 4
    return [2 * w, 2 * i, 2 * o]


@pytest.mark.parametrize("spad_kb", [8, 16])
@pytest.mark.parametrize("order", [(0, 1, 2, 3, 4, 5, 6), (0, 4, 1, 2, 3, 5, 6)])
def test_four_tile_event_timeline(spad_kb, order):
    dp = make_dp(hw=(4, 16, spad_kb), order=order, tiling=FOUR_TILING, layer=FOUR_LAYER)
    # rows per tile: C32 over eight passes, K4 in one; N*P*Q*R*S = 144
    compute = 4 + 8 * 144 + 4
    expected, n, double = event_timeline(dp, _four_tile_bytes(), compute)
    assert n == 4
    assert double == (spad_kb == 16)
    trace = simulate_delay(dp)
    assert trace.compute_per_tile == compute
    assert trace.double_buffered == double
    assert trace.delay_cycles == expected


def test_double_buffering_never_hurts():
    for spad in (8, 16, 32):
        dp = make_dp(hw=(4, 16, spad), tiling=FOUR_TILING, layer=FOUR_LAYER)
        big = make_dp(hw=(4, 16, 2 * spad), tiling=FOUR_TILING, layer=FOUR_LAYER)
        assert simulate_delay(big).delay_cycles <= simulate_delay(dp).delay_cycles


def _random_points(n, seed):
    rng = np.random.default_rng(seed)
    layers = all_bundled_layers()
    pts = []
    while len(pts) < n:
        dp = lattice_map(rng.random(40), layers[rng.integers(len(layers))])
        try:
            evaluate_low(dp)
        except InvalidDesignError:
            continue
        pts.append(dp)
    return pts


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_high_delay_dominates_low(seed):
    dp = _random_points(1, seed)[0]
    low, high = evaluate_low(dp), evaluate_high(dp)
    trace = simulate_delay(dp)
    assert high.delay_cycles >= low.delay_cycles
    assert trace.delay_cycles >= low.compute_cycles
    assert high.energy_pj == low.energy_pj
    assert high.edp >= low.edp
    assert 0.0 <= trace.overlap_fraction <= 1.0
    assert trace.n_tiles >= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_more_scratchpad_never_slower(seed):
    dp = _random_points(1, seed)[0]
    bigger = replace(dp, hw=replace(dp.hw, spad_kb=256))
    assert simulate_delay(bigger).delay_cycles <= simulate_delay(dp).delay_cycles


def test_counting_wrapper():
    oracle = HighFidelityOracle()
    a = oracle(CB_DP)
    b = oracle(CB_DP)
    assert a == b
    assert oracle.calls == 2


def test_invalid_raises():
    with pytest.raises(InvalidDesignError):
        simulate_delay(make_dp(tiling=(ONES, ONES, ONES)))
