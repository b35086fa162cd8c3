"""Two-level Bayesian optimisation over hardware and per-layer mappings.

The outer loop picks a hardware configuration by acquisition over the whole
enumerated space; the inner loop optimises each layer's mapping on that
hardware from constrained Sobol candidate pools.  Every chosen candidate is
evaluated with the high-fidelity oracle and fed back into the surrogate.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import starlight
from .oracle_low import CostBreakdown
from .sampling import SobolEngine, lattice_map_batch, to_mapping
from .workload import (
    ARRAY_DIMS,
    BYTES_PER_ELEMENT,
    FEATURE_HIGH,
    FEATURE_LOW,
    HW_SLOTS,
    N_DIMS,
    N_FEATURES,
    C,
    DesignPoint,
    HwConfig,
    K,
    LayerShape,
    SwMapping,
    check_design,
    cumulative_tiles,
    divisors,
    encode_batch,
    fits_batch,
    hw_space_array,
    tile_footprints,
    tiling_slot,
)

log = logging.getLogger(__name__)

HISTORY_FORMAT = "mfdse-history"
HISTORY_VERSION = 1


@dataclass
class BoConfig:
    n_outer: int = 8
    m_inner: int = 6
    sw_pool_size: int = 10_000
    beta: float = 2.0
    seed: int = 0
    fix_hw: HwConfig | None = None
    m_inner_fixed_hw: int = 20
    hw_mappings_per_layer: int = 64
    refit_steps: int = starlight.REFIT_STEPS
    lr_gp: float = starlight.DEFAULT_LR_GP

    def __post_init__(self):
        for name in ("n_outer", "m_inner", "sw_pool_size", "m_inner_fixed_hw", "hw_mappings_per_layer"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.refit_steps < 0:
            raise ValueError("refit_steps must be >= 0")
        if isinstance(self.fix_hw, (tuple, list)):
            self.fix_hw = HwConfig(*self.fix_hw)
        if self.fix_hw is not None and not self.fix_hw.is_valid():
            raise ValueError(f"fix_hw outside the design space: {self.fix_hw}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fix_hw"] = list(self.fix_hw.as_tuple()) if self.fix_hw is not None else None
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "BoConfig":
        return cls(**obj)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def ucb_score(mean, std, beta: float = 2.0):
    """Upper confidence bound for minimisation: ``-mean + beta * std``."""
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise ValueError("std must be non-negative")
    return -np.asarray(mean, dtype=np.float64) + beta * std


# ---------------------------------------------------------------------------
# surrogates


class StarlightSurrogate:
    """Adapter giving the optimizer a predict/observe view of a DKL model."""

    name = "starlight"

    def __init__(self, model: starlight.StarlightModel, refit_steps: int = starlight.REFIT_STEPS,
                 lr_gp: float = starlight.DEFAULT_LR_GP):
        self.model = model.copy()
        self.refit_steps = refit_steps
        self.lr_gp = lr_gp

    @property
    def ready(self) -> bool:
        return True

    def predict(self, features):
        return starlight.predict(self.model, features)

    def observe(self, features, log_edp):
        starlight.update(self.model, np.atleast_2d(features), np.atleast_1d(log_edp),
                         self.refit_steps, self.lr_gp)


# ---------------------------------------------------------------------------
# candidate generation


def array_unroll(size: int, array_dim: int) -> int:
    """Largest divisor of ``size`` not exceeding the array side."""
    return max(d for d in divisors(size) if d <= array_dim)


def constrained_lattice(u: np.ndarray, layer: LayerShape, array_dim: int):
    """Map unit points to ``(orders, tiling)`` with the C and K array unroll fixed."""
    _, orders, tiling = lattice_map_batch(u, layer)
    for d in (C, K):
        size = layer.dims[d]
        t0 = array_unroll(size, array_dim)
        rest = size // t0
        divs = np.asarray(divisors(rest), dtype=np.int64)
        idx = np.clip(np.floor(u[:, tiling_slot(d, 1)] * len(divs)).astype(np.int64), 0, len(divs) - 1)
        tiling[:, 0, d] = t0
        tiling[:, 1, d] = divs[idx]
        tiling[:, 2, d] = rest // divs[idx]
    return orders, tiling


def mapping_keys(orders: np.ndarray, tiling: np.ndarray) -> np.ndarray:
    """Row keys identifying behaviourally distinct mappings.

    Loops whose trip count is 1 at both outer levels are never iterated, so
    only the relative order of the remaining dimensions matters.
    """
    n = len(orders)
    active = (tiling[:, 1, :] > 1) | (tiling[:, 2, :] > 1)
    rows = np.arange(n)[:, None]
    is_active = active[rows, orders]
    filler = np.where(is_active, orders, N_DIMS)
    rank = np.argsort(~is_active, axis=1, kind="stable")
    canon = np.take_along_axis(filler, rank, axis=1)
    return np.hstack([tiling.reshape(n, 3 * N_DIMS), canon])


def _key_bytes(key_row) -> bytes:
    return np.ascontiguousarray(key_row, dtype=np.int64).tobytes()


@dataclass
class CandidatePool:
    hw: HwConfig
    layer: LayerShape
    orders: np.ndarray
    tiling: np.ndarray
    features: np.ndarray
    keys: list[bytes]

    def __len__(self):
        return len(self.orders)

    def mapping(self, i: int) -> SwMapping:
        return to_mapping(self.orders[i], self.tiling[i])

    def design(self, i: int) -> DesignPoint:
        return DesignPoint(self.hw, self.mapping(i), self.layer)


def minimal_mapping(layer: LayerShape, array_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Array-unrolled C and K at level 0, everything else in the outer loops."""
    tiling = np.ones((1, 3, N_DIMS), dtype=np.int64)
    tiling[0, 2, :] = layer.dims
    for d in (C, K):
        t0 = array_unroll(layer.dims[d], array_dim)
        tiling[0, 0, d] = t0
        tiling[0, 2, d] = layer.dims[d] // t0
    return np.arange(N_DIMS)[None, :], tiling


def generate_sw_candidates(hw: HwConfig, layer: LayerShape, count: int, rng: np.random.Generator,
                           exclude=frozenset(), max_rounds: int = 8) -> CandidatePool:
    """Up to ``count`` distinct feasible mappings drawn from a Sobol stream.

    All candidates fit ``hw``, unroll C and K onto the array as far as
    divisibility allows, and tile every dimension exactly.  Mappings whose
    key is in ``exclude`` are skipped.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    hw_row = np.asarray(hw.as_tuple(), dtype=np.int64)
    engine = SobolEngine(N_FEATURES, skip=int(rng.integers(0, 1 << 30)))
    seen = set(exclude)
    keep_o, keep_t, keys = [], [], []
    batch = max(count, 256)
    for _ in range(max_rounds):
        u = engine.draw(batch)
        orders, tiling = constrained_lattice(u, layer, hw.array_dim)
        ok = np.flatnonzero(fits_batch(hw_row, tiling, layer))
        key_rows = np.ascontiguousarray(mapping_keys(orders[ok], tiling[ok]), dtype=np.int64)
        packed = key_rows.view(np.dtype((np.void, key_rows.shape[1] * 8))).ravel()
        _, first = np.unique(packed, return_index=True)
        first.sort()
        taken = []
        for j in first:
            kb = packed[j].tobytes()
            if kb in seen:
                continue
            seen.add(kb)
            taken.append(j)
            keys.append(kb)
            if len(keys) == count:
                break
        keep_o.append(orders[ok[taken]])
        keep_t.append(tiling[ok[taken]])
        if len(keys) == count or not taken:
            break
    if not keys:
        orders, tiling = minimal_mapping(layer, hw.array_dim)
        kb = _key_bytes(mapping_keys(orders, tiling)[0])
        if fits_batch(hw_row, tiling, layer)[0] and kb not in exclude:
            log.warning("no sampled mapping fits %s for layer %s; using the minimal mapping", hw, layer.name)
            keep_o, keep_t, keys = [orders], [tiling], [kb]
        else:
            log.warning("no feasible mapping for layer %s on %s", layer.name, hw)
    if len(keys) < count:
        log.debug("candidate pool exhausted at %d of %d", len(keys), count)
    orders = np.concatenate(keep_o).reshape(-1, N_DIMS) if keep_o else np.zeros((0, N_DIMS), np.int64)
    tiling = np.concatenate(keep_t).reshape(-1, 3, N_DIMS) if keep_t else np.zeros((0, 3, N_DIMS), np.int64)
    feats = encode_batch(hw_row, orders, tiling, layer) if len(keys) else np.zeros((0, N_FEATURES))
    return CandidatePool(hw, layer, orders, tiling, feats, keys)


def _scaled_hw(space: np.ndarray) -> np.ndarray:
    lo, hi = FEATURE_LOW[HW_SLOTS], FEATURE_HIGH[HW_SLOTS]
    return (space - lo) / (hi - lo)


def hw_scores(surrogate, layers, rng: np.random.Generator, beta: float = 2.0,
              mappings_per_layer: int = 64) -> np.ndarray:
    """Acquisition score of every hardware configuration.

    Each configuration is paired with ``mappings_per_layer`` Sobol mappings
    per layer; the score is the sum over layers of the best UCB among the
    pairs that fit.  Configurations with no fitting mapping for some layer
    score ``-inf``.
    """
    space = hw_space_array()
    scaled = _scaled_hw(space)
    total = np.zeros(len(space))
    for layer in layers:
        best = np.full(len(space), -np.inf)
        for a in ARRAY_DIMS:
            rows = np.flatnonzero(space[:, 0] == a)
            engine = SobolEngine(N_FEATURES, skip=int(rng.integers(0, 1 << 30)))
            orders, tiling = constrained_lattice(engine.draw(mappings_per_layer), layer, a)
            feats = encode_batch(space[rows[0]], orders, tiling, layer)
            tiles = cumulative_tiles(tiling)
            acc_need = tile_footprints(tiles[:, 0, :], layer)[:, 2] * BYTES_PER_ELEMENT
            spad_need = tile_footprints(tiles[:, 1, :], layer).sum(-1) * BYTES_PER_ELEMENT
            fit = (space[rows, 1][:, None] * 1024 >= acc_need[None, :]) & (
                space[rows, 2][:, None] * 1024 >= spad_need[None, :]
            )
            hw_i, map_j = np.nonzero(fit)
            if len(hw_i) == 0:
                continue
            x = feats[map_j].copy()
            x[:, HW_SLOTS] = scaled[rows[hw_i]]
            mean, std = surrogate.predict(x)
            score = ucb_score(mean, std, beta)
            np.maximum.at(best, rows[hw_i], score)
        total += best
    return total


def select_hw_candidate(surrogate, layers, rng: np.random.Generator, exclude=frozenset(),
                        beta: float = 2.0, mappings_per_layer: int = 64):
    """Best-scoring configuration not in ``exclude``; returns ``(hw, score)``."""
    scores = hw_scores(surrogate, layers, rng, beta, mappings_per_layer)
    space = hw_space_array()
    for hw in exclude:
        a, acc, sp = hw.as_tuple() if isinstance(hw, HwConfig) else hw
        idx = ARRAY_DIMS.index(a) * 1024 + (acc // 8 - 1) * 32 + (sp // 8 - 1)
        scores[idx] = -np.inf
    if not np.isfinite(scores).any():
        raise RuntimeError("hardware space exhausted: no selectable configuration")
    i = int(np.argmax(scores))
    return HwConfig(*(int(v) for v in space[i])), float(scores[i])


# ---------------------------------------------------------------------------
# run history


@dataclass
class EvalRecord:
    outer: int
    hw: tuple
    layer_index: int
    layer_name: str
    inner: int
    mapping: SwMapping
    acquisition: float | None
    energy_pj: float
    delay_cycles: float
    edp: float

    def to_dict(self) -> dict:
        return {
            "type": "eval",
            "outer": self.outer,
            "hw": list(self.hw),
            "layer_index": self.layer_index,
            "layer_name": self.layer_name,
            "inner": self.inner,
            "mapping": self.mapping.to_dict(),
            "acquisition": self.acquisition,
            "energy_pj": self.energy_pj,
            "delay_cycles": self.delay_cycles,
            "edp": self.edp,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalRecord":
        return cls(
            obj["outer"], tuple(obj["hw"]), obj["layer_index"], obj["layer_name"], obj["inner"],
            SwMapping.from_dict(obj["mapping"]), obj["acquisition"],
            obj["energy_pj"], obj["delay_cycles"], obj["edp"],
        )


@dataclass
class RunHistory:
    method: str
    workload: str
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    records: list[EvalRecord] = field(default_factory=list)
    iterations: list[dict] = field(default_factory=list)
    cumulative_min: list[float] = field(default_factory=list)

    @property
    def n_evaluations(self) -> int:
        return len(self.records)

    @property
    def final_edp(self) -> float:
        if not self.cumulative_min:
            raise ValueError("empty history")
        return self.cumulative_min[-1]

    @property
    def hw_configs(self) -> list[tuple]:
        return [tuple(it["hw"]) for it in self.iterations]

    def best_iteration(self) -> dict:
        return min(self.iterations, key=lambda it: it["total_edp"])

    def header(self) -> dict:
        return {
            "format": HISTORY_FORMAT,
            "version": HISTORY_VERSION,
            "method": self.method,
            "workload": self.workload,
            "config": self.config,
            "meta": self.meta,
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        lines += [json.dumps({"type": "iteration", **it}, sort_keys=True) for it in self.iterations]
        lines.append(json.dumps({"type": "summary", "cumulative_min": self.cumulative_min}, sort_keys=True))
        return lines

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunHistory":
        """Read a complete or interrupted history file."""
        lines = [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
        if not lines or lines[0].get("format") != HISTORY_FORMAT:
            raise ValueError(f"{path}: not a run history")
        head = lines[0]
        hist = cls(head["method"], head["workload"], head["config"], head["meta"])
        for obj in lines[1:]:
            kind = obj.pop("type")
            if kind == "eval":
                hist.records.append(EvalRecord.from_dict(obj))
            elif kind == "iteration":
                hist.iterations.append(obj)
            elif kind == "summary":
                hist.cumulative_min = obj["cumulative_min"]
        return hist


class _Stream:
    """Appends evaluation records to a history file as they happen."""

    def __init__(self, path, header: dict):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")

    def write(self, obj: dict):
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


class BudgetedOracle:
    """Counts calls and serves previously recorded results when resuming."""

    def __init__(self, oracle, replay: list[EvalRecord] | None = None):
        self.oracle = oracle
        self.replay = list(replay or [])
        self.calls = 0
        self.fresh_calls = 0

    def __call__(self, dp: DesignPoint):
        check_design(dp)
        k = self.calls
        self.calls += 1
        if k < len(self.replay):
            rec = self.replay[k]
            if rec.mapping != dp.sw or tuple(rec.hw) != dp.hw.as_tuple():
                raise RuntimeError(f"resume mismatch at evaluation {k}: history diverges from this run")
            return CostBreakdown(rec.energy_pj, rec.delay_cycles, rec.edp, [[0] * 3] * 3, 0.0)
        self.fresh_calls += 1
        return self.oracle(dp)


# ---------------------------------------------------------------------------
# loops


@dataclass
class LayerResult:
    mapping: SwMapping
    cost: object
    edps: list[float]
    records: list[EvalRecord]


def optimize_layer(surrogate, hw: HwConfig, layer: LayerShape, m: int, pool: int,
                   rng: np.random.Generator, oracle, beta: float = 2.0, n_random: int = 0,
                   outer: int = 0, layer_index: int = 0, on_record=None) -> LayerResult:
    """``m`` acquisition-driven evaluations of mappings for one layer on ``hw``.

    The first ``n_random`` picks are uniform over the candidate pool.
    """
    evaluated: set[bytes] = set()
    best = None
    edps, records = [], []
    for j in range(m):
        cands = generate_sw_candidates(hw, layer, pool, rng, exclude=evaluated)
        if len(cands) == 0:
            if best is None:
                raise RuntimeError(f"no feasible mapping for layer {layer.name or layer_index} on {hw}")
            log.warning("layer %s: mapping space exhausted after %d evaluations", layer.name, j)
            break
        if j < n_random or not surrogate.ready:
            i = int(rng.integers(len(cands)))
            acq = None
        else:
            mean, std = surrogate.predict(cands.features)
            scores = ucb_score(mean, std, beta)
            i = int(np.argmax(scores))
            acq = float(scores[i])
        dp = cands.design(i)
        cost = oracle(dp)
        evaluated.add(cands.keys[i])
        surrogate.observe(cands.features[i], math.log10(cost.edp))
        rec = EvalRecord(outer, hw.as_tuple(), layer_index, layer.name, j, dp.sw, acq,
                         float(cost.energy_pj), float(cost.delay_cycles), float(cost.edp))
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        edps.append(float(cost.edp))
        if best is None or cost.edp < best[1].edp:
            best = (dp.sw, cost)
    return LayerResult(best[0], best[1], edps, records)


def _layer_rng(seed: int, outer: int, layer_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, outer, layer_index])


def _totals_by_step(results: list[LayerResult]) -> list[float]:
    """Workload EDP after each inner step, using each layer's incumbent."""
    steps = max(len(r.edps) for r in results)
    out = []
    for j in range(steps):
        out.append(sum(min(r.edps[: j + 1]) for r in results))
    return out


def _hw_loop(config: BoConfig, layers, surrogate, oracle, method: str, workload: str,
             history_path=None, resume=None, meta=None, hw_plan=None,
             n_random: int = 0, random_first_hw: bool = False) -> RunHistory:
    replay = RunHistory.load(resume).records if resume is not None else None
    budget = BudgetedOracle(oracle, replay)
    hist = RunHistory(method, workload, config.to_dict(), dict(meta or {}))
    stream = _Stream(history_path, hist.header())

    def on_record(rec):
        hist.records.append(rec)
        stream.write(rec.to_dict())

    rng_hw = np.random.default_rng([config.seed, 0])
    chosen: list[HwConfig] = []
    fixed = hw_plan is not None
    n_outer = len(hw_plan) if fixed else config.n_outer
    m = config.m_inner_fixed_hw if fixed else config.m_inner
    best_so_far = math.inf
    for i in range(n_outer):
        if fixed:
            hw, score = hw_plan[i], None
        elif random_first_hw and i == 0:
            space = hw_space_array()
            hw, score = HwConfig(*(int(v) for v in space[rng_hw.integers(len(space))])), None
        else:
            try:
                hw, score = select_hw_candidate(surrogate, layers, rng_hw, set(chosen), config.beta,
                                                config.hw_mappings_per_layer)
            except Exception as exc:
                raise RuntimeError(f"outer iteration {i}: hardware selection failed: {exc}") from exc
        chosen.append(hw)
        results = []
        for li, layer in enumerate(layers):
            try:
                res = optimize_layer(surrogate, hw, layer, m, config.sw_pool_size,
                                     _layer_rng(config.seed, i, li), budget, config.beta,
                                     n_random if i == 0 else 0, i, li, on_record)
            except Exception as exc:
                raise RuntimeError(f"outer iteration {i}, layer {li} ({layer.name}): {exc}") from exc
            results.append(res)
        totals = _totals_by_step(results)
        for t in totals:
            best_so_far = min(best_so_far, t)
            hist.cumulative_min.append(best_so_far)
        it = {
            "outer": i,
            "hw": list(hw.as_tuple()),
            "hw_acquisition": score,
            "mappings": [r.mapping.to_dict() for r in results],
            "layer_edp": [float(r.cost.edp) for r in results],
            "total_edp": float(totals[-1]),
        }
        hist.iterations.append(it)
        stream.write({"type": "iteration", **it})
    hist.meta["oracle_calls"] = budget.calls
    if history_path is not None:
        hist.save(history_path)
    return hist


def run_codesign(config: BoConfig, layers, surrogate, oracle, workload: str = "",
                 history_path=None, resume=None, meta=None, method: str = "polaris") -> RunHistory:
    """Hardware/software co-design: ``n_outer`` distinct configurations, each
    optimised layerwise for ``m_inner`` evaluations."""
    layers = list(layers)
    if not layers:
        raise ValueError("empty workload")
    return _hw_loop(config, layers, surrogate, oracle, method, workload, history_path, resume, meta)


def run_sw_dse(config: BoConfig, layers, surrogate, oracle, workload: str = "",
               history_path=None, resume=None, meta=None, method: str = "polaris_sw") -> RunHistory:
    """Software-only optimisation on ``config.fix_hw``."""
    if config.fix_hw is None:
        raise ValueError("software DSE needs fix_hw")
    layers = list(layers)
    if not layers:
        raise ValueError("empty workload")
    return _hw_loop(config, layers, surrogate, oracle, method, workload, history_path, resume, meta,
                    hw_plan=[config.fix_hw])


def codesign_budget(config: BoConfig, n_layers: int) -> int:
    return config.n_outer * config.m_inner * n_layers


def sw_dse_budget(config: BoConfig, n_layers: int) -> int:
    return config.m_inner_fixed_hw * n_layers
