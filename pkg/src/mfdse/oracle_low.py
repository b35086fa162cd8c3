"""Analytical loop-nest cost model (the cheap, low-fidelity oracle).

Tile fetch counts follow an operand-stationarity rule: a tile stays resident
while the innermost enclosing loops that do not index its tensor iterate,
and is fetched again whenever an indexing loop advances.  Energy charges
every fetched element at the energy of the level it is moved into; delay
is a roofline over compute and per-level bandwidth.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .workload import (
    C,
    K,
    N_DIMS,
    N_LEVELS,
    TENSOR_DIMS,
    DesignPoint,
    check_design,
    tile_footprints,
)


@dataclass(frozen=True)
class SimConstants:
    setup_cost: int = 64  # cycles per DMA transfer
    burst_bw: int = 8  # bytes per cycle
    element_bytes: int = 2


@dataclass(frozen=True)
class CostModel:
    """Energy (pJ per element access or per MAC) and bandwidth (elements/cycle)."""

    e_dram: float = 128.0
    e_l2: float = 16.0
    e_spad: float = 4.0
    e_acc: float = 2.0
    e_mac: float = 0.5
    bw_dram: float = 4.0
    bw_l2: float = 8.0
    bw_spad: float = 16.0
    sim: SimConstants = field(default_factory=SimConstants)

    def level_energy(self, level: int, tensor: int) -> float:
        if level == 2:
            return self.e_dram
        if level == 1:
            return self.e_l2
        # outputs accumulate in the accumulator, operands stream from the scratchpad
        return self.e_acc if tensor == 2 else self.e_spad

    def level_bandwidth(self, level: int) -> float:
        return (self.bw_spad, self.bw_l2, self.bw_dram)[level]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "CostModel":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown cost-model keys: {sorted(unknown)}")
        kwargs = {k: float(v) for k, v in obj.items() if k != "sim"}
        sim_obj = obj.get("sim", {})
        sim_known = {f.name for f in fields(SimConstants)}
        if set(sim_obj) - sim_known:
            raise ValueError(f"unknown sim keys: {sorted(set(sim_obj) - sim_known)}")
        sim = SimConstants(**{k: int(v) for k, v in sim_obj.items()})
        model = cls(sim=sim, **kwargs)
        if any(getattr(model, f.name) < 0 for f in fields(cls) if f.name != "sim"):
            raise ValueError("cost-model constants must be non-negative")
        if min(model.bw_dram, model.bw_l2, model.bw_spad, sim.burst_bw) <= 0:
            raise ValueError("bandwidths must be positive")
        return model

    @classmethod
    def from_json(cls, path) -> "CostModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_COST_MODEL = CostModel()


@dataclass(frozen=True)
class CostBreakdown:
    energy_pj: float
    delay_cycles: float
    edp: float
    per_level_accesses: tuple[tuple[int, int, int], ...]
    compute_cycles: float = 0.0

    def to_dict(self) -> dict:
        return {
            "energy_pj": self.energy_pj,
            "delay_cycles": self.delay_cycles,
            "edp": self.edp,
            "per_level_accesses": [list(r) for r in self.per_level_accesses],
            "compute_cycles": self.compute_cycles,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CostBreakdown":
        return cls(
            float(obj["energy_pj"]),
            float(obj["delay_cycles"]),
            float(obj["edp"]),
            tuple(tuple(int(x) for x in r) for r in obj["per_level_accesses"]),
            float(obj.get("compute_cycles", 0.0)),
        )


def loops_above(tiling, loop_order, level: int) -> list[tuple[int, int]]:
    """``(dim, trip)`` of every loop enclosing a level-``level`` tile, innermost first."""
    loops = []
    for lvl in range(level + 1, N_LEVELS):
        for d in reversed(loop_order):
            loops.append((d, int(tiling[lvl][d])))
    return loops


def reuse_factor(loops: list[tuple[int, int]], tensor_dims) -> int:
    """Iterations a tile stays resident: product of the innermost run of
    non-indexing loops.  Unit-trip loops are transparent."""
    reuse = 1
    for d, trip in loops:
        if trip == 1:
            continue
        if d in tensor_dims:
            break
        reuse *= trip
    return reuse


def _reuse_and_fetches(dp: DesignPoint):
    tiling, order = dp.sw.tiling, dp.sw.loop_order
    reuse = [[1] * 3 for _ in range(N_LEVELS)]
    fetches = [[1] * 3 for _ in range(N_LEVELS)]
    for lvl in range(N_LEVELS):
        loops = loops_above(tiling, order, lvl)
        iterations = math.prod(trip for _, trip in loops)
        for t, tdims in enumerate(TENSOR_DIMS):
            r = reuse_factor(loops, tdims)
            reuse[lvl][t] = r
            fetches[lvl][t] = iterations // r
    return reuse, fetches


def _tile_elements(dp: DesignPoint) -> list[list[int]]:
    cum = [1] * N_DIMS
    out = []
    for lvl in range(N_LEVELS):
        cum = [c * int(f) for c, f in zip(cum, dp.sw.tiling[lvl])]
        out.append([int(x) for x in tile_footprints(cum, dp.layer)])
    return out


def access_counts(dp: DesignPoint) -> list[list[int]]:
    """Tile fetch counts ``[level][tensor]`` for tensors (W, I, O)."""
    check_design(dp)
    return _reuse_and_fetches(dp)[1]


def compute_cycles(dp: DesignPoint) -> float:
    a = dp.hw.array_dim
    c0 = dp.sw.tiling[0][C]
    k0 = dp.sw.tiling[0][K]
    return dp.layer.macs / (min(c0, a) * min(k0, a))


def level_traffic(dp: DesignPoint) -> list[int]:
    """Elements moved into each level (summed over tensors)."""
    _, fetches = _reuse_and_fetches(dp)
    elems = _tile_elements(dp)
    return [sum(fetches[l][t] * elems[l][t] for t in range(3)) for l in range(N_LEVELS)]


def evaluate_low(dp: DesignPoint, model: CostModel = DEFAULT_COST_MODEL) -> CostBreakdown:
    check_design(dp)
    _, fetches = _reuse_and_fetches(dp)
    elems = _tile_elements(dp)
    accesses = tuple(
        tuple(fetches[l][t] * elems[l][t] for t in range(3)) for l in range(N_LEVELS)
    )
    energy = 0.0
    for l in range(N_LEVELS):
        for t in range(3):
            energy += accesses[l][t] * model.level_energy(l, t)
    energy += dp.layer.macs * model.e_mac
    compute = compute_cycles(dp)
    delay = compute
    for l in range(N_LEVELS):
        delay = max(delay, sum(accesses[l]) / model.level_bandwidth(l))
    return CostBreakdown(energy, delay, energy * delay, accesses, compute)


def batch_evaluate_low(points, model: CostModel = DEFAULT_COST_MODEL, jobs: int = 1) -> list[CostBreakdown]:
    """Order-preserving map of :func:`evaluate_low`.

    A failing point is re-raised with its index in the batch.
    """
    points = list(points)
    if jobs > 1 and len(points) > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial

        for i, dp in enumerate(points):
            _check_indexed(dp, i)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(partial(evaluate_low, model=model), points, chunksize=64))
    out = []
    for i, dp in enumerate(points):
        _check_indexed(dp, i)
        out.append(evaluate_low(dp, model))
    return out


def _check_indexed(dp, i):
    try:
        check_design(dp)
    except ValueError as exc:
        raise type(exc)(f"point {i}: {exc}") from exc


class LowFidelityOracle:
    """Callable wrapper used by dataset collection."""

    name = "low"

    def __init__(self, model: CostModel = DEFAULT_COST_MODEL):
        self.model = model
        self.calls = 0

    def __call__(self, dp: DesignPoint) -> CostBreakdown:
        self.calls += 1
        return evaluate_low(dp, self.model)
