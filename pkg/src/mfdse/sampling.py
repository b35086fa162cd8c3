"""Sobol sampling, mapping of unit-cube draws onto the discrete design
lattice, and low/high-fidelity dataset collection and persistence."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._joe_kuo import DIRECTION_NUMBERS
from .workload import (
    ARRAY_DIMS,
    FEATURE_HIGH,
    FEATURE_LOW,
    MEM_KB,
    N_DIMS,
    N_FEATURES,
    DesignPoint,
    HwConfig,
    LayerShape,
    SwMapping,
    divisors,
    encode_features,
    tiling_slot,
    validate_fit,
)

log = logging.getLogger(__name__)

SOBOL_BITS = 32
MAX_SOBOL_DIM = 1 + len(DIRECTION_NUMBERS)


@lru_cache(maxsize=None)
def _direction_table(dim: int) -> np.ndarray:
    """``(dim, SOBOL_BITS)`` direction integers, column ``k`` is v_{k+1}."""
    L = SOBOL_BITS
    v = np.zeros((dim, L), dtype=np.uint64)
    for k in range(L):
        v[0, k] = 1 << (L - 1 - k)
    for j in range(1, dim):
        s, a, m = DIRECTION_NUMBERS[j - 1]
        vj = [0] * L
        for k in range(min(s, L)):
            vj[k] = m[k] << (L - 1 - k)
        for k in range(s, L):
            x = vj[k - s] ^ (vj[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    x ^= vj[k - i]
            vj[k] = x
        v[j] = vj
    return v


def _sobol_points(dim: int, start: int, n: int) -> np.ndarray:
    v = _direction_table(dim)
    idx = np.arange(start, start + n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    x = np.zeros((n, dim), dtype=np.uint64)
    for k in range(SOBOL_BITS):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        if bit.any():
            x[bit] ^= v[:, k]
    return x.astype(np.float64) / float(1 << SOBOL_BITS)


class SobolEngine:
    """Unscrambled Sobol stream; each instance keeps its own position."""

    def __init__(self, dim: int, skip: int = 0):
        if not 1 <= dim <= MAX_SOBOL_DIM:
            raise ValueError(f"Sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {dim}")
        if skip < 0:
            raise ValueError("skip must be non-negative")
        self.dim = dim
        self.position = int(skip)

    def draw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        if self.position + n > 2**SOBOL_BITS:
            raise ValueError("Sobol stream exhausted")
        pts = _sobol_points(self.dim, self.position, n)
        self.position += n
        return pts


def sobol_sequence(dim: int, n: int, skip: int = 0) -> np.ndarray:
    """First ``n`` points (after ``skip``) of the ``dim``-dimensional Sobol sequence."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return SobolEngine(dim, skip).draw(n)


# ---------------------------------------------------------------------------
# lattice mapping


def _pick(u, count):
    idx = np.floor(np.asarray(u) * count).astype(np.int64)
    return np.clip(idx, 0, np.asarray(count) - 1)


def lehmer_orders(u: np.ndarray) -> np.ndarray:
    """Map ``(n, 7)`` unit draws to permutations (outermost loop first).

    Position ``i`` picks among the ``7 - i`` dimensions not used yet, so all
    zeros gives the identity order and all ones the reversed order.
    """
    u = np.atleast_2d(u)
    n = u.shape[0]
    available = np.tile(np.arange(N_DIMS), (n, 1))
    mask = np.ones((n, N_DIMS), dtype=bool)
    out = np.empty((n, N_DIMS), dtype=np.int64)
    rows = np.arange(n)
    for i in range(N_DIMS):
        k = _pick(u[:, i], N_DIMS - i)
        # column of the k-th still-available dimension
        rank = np.cumsum(mask, axis=1) - 1
        col = np.argmax(mask & (rank == k[:, None]), axis=1)
        out[:, i] = available[rows, col]
        mask[rows, col] = False
    return out


@lru_cache(maxsize=4096)
def _chain_tables(size: int):
    divs = np.array(divisors(size), dtype=np.int64)
    rest = [divisors(size // int(d)) for d in divs]
    width = max(len(r) for r in rest)
    table = np.ones((len(divs), width), dtype=np.int64)
    for i, r in enumerate(rest):
        table[i, : len(r)] = r
    counts = np.array([len(r) for r in rest], dtype=np.int64)
    return divs, table, counts


def divisor_chain(u0, u1, size: int):
    """Level-0 factor from the divisors of ``size``, level-1 factor from the
    divisors of what remains, level 2 takes the rest."""
    divs, table, counts = _chain_tables(size)
    i0 = _pick(u0, len(divs))
    t0 = divs[i0]
    i1 = _pick(u1, counts[i0])
    t1 = table[i0, i1]
    return t0, t1, size // (t0 * t1)


def lattice_map_batch(u: np.ndarray, layer: LayerShape):
    """Vectorised :func:`lattice_map`; returns ``(hw, loop_order, tiling)`` arrays."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if u.shape[1] < 31:
        raise ValueError("unit points need at least 31 coordinates")
    n = u.shape[0]
    hw = np.empty((n, 3), dtype=np.int64)
    hw[:, 0] = np.asarray(ARRAY_DIMS)[_pick(u[:, 0], len(ARRAY_DIMS))]
    hw[:, 1] = np.asarray(MEM_KB)[_pick(u[:, 1], len(MEM_KB))]
    hw[:, 2] = np.asarray(MEM_KB)[_pick(u[:, 2], len(MEM_KB))]
    orders = lehmer_orders(u[:, 3:10])
    tiling = np.empty((n, 3, N_DIMS), dtype=np.int64)
    for d, size in enumerate(layer.dims):
        t0, t1, t2 = divisor_chain(u[:, tiling_slot(d, 0)], u[:, tiling_slot(d, 1)], size)
        tiling[:, 0, d], tiling[:, 1, d], tiling[:, 2, d] = t0, t1, t2
    return hw, orders, tiling


def to_mapping(order_row, tiling_rows) -> SwMapping:
    return SwMapping(
        tuple(int(x) for x in order_row),
        tuple(tuple(int(x) for x in row) for row in tiling_rows),
    )


def lattice_map(u, layer: LayerShape) -> DesignPoint:
    """Map a unit-cube point onto a design point that tiles ``layer`` exactly."""
    hw, orders, tiling = lattice_map_batch(np.asarray(u)[None, :], layer)
    return DesignPoint(HwConfig(*(int(x) for x in hw[0])), to_mapping(orders[0], tiling[0]), layer)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class EdpSample:
    features: np.ndarray
    design: DesignPoint
    energy_pj: float
    delay_cycles: float
    edp: float
    fidelity: str
    target: float | None = None

    def to_dict(self) -> dict:
        return {
            "features": [float(x) for x in self.features],
            "design": self.design.to_dict(),
            "energy_pj": self.energy_pj,
            "delay_cycles": self.delay_cycles,
            "edp": self.edp,
            "fidelity": self.fidelity,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EdpSample":
        return cls(
            np.asarray(obj["features"], dtype=np.float64),
            DesignPoint.from_dict(obj["design"]),
            float(obj["energy_pj"]),
            float(obj["delay_cycles"]),
            float(obj["edp"]),
            obj["fidelity"],
        )


TEST_FRACTION = 0.2
SEED_STRIDE = 1 << 16
MAX_SEED = (1 << 16) - 1


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint 80/20 train/test index split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(TEST_FRACTION * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass
class Dataset:
    samples: list[EdpSample]
    scaler_state: dict = field(
        default_factory=lambda: {
            "feature_min": FEATURE_LOW.tolist(),
            "feature_max": FEATURE_HIGH.tolist(),
        }
    )
    split_seed: int = 0
    seed: int = 0
    oracle: str = ""
    cost_model_hash: str = ""
    redraws: int = 0
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @property
    def fidelity(self) -> str:
        tags = {s.fidelity for s in self.samples}
        if len(tags) > 1:
            raise ValueError(f"mixed fidelities in one dataset: {sorted(tags)}")
        return tags.pop() if tags else self.oracle

    def features(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, N_FEATURES))
        return np.stack([s.features for s in self.samples])

    def edp(self) -> np.ndarray:
        return np.array([s.edp for s in self.samples], dtype=np.float64)

    def log_edp(self) -> np.ndarray:
        return np.log10(self.edp())

    def split(self, seed: int | None = None):
        return split_indices(len(self), self.split_seed if seed is None else seed)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            [self.samples[int(i)] for i in indices],
            dict(self.scaler_state),
            self.split_seed,
            self.seed,
            self.oracle,
            self.cost_model_hash,
            self.redraws,
            dict(self.provenance),
        )

    def header(self) -> dict:
        return {
            "format": "mfdse-dataset",
            "version": 1,
            "oracle": self.oracle,
            "seed": self.seed,
            "split_seed": self.split_seed,
            "n": len(self),
            "cost_model_hash": self.cost_model_hash,
            "redraws": self.redraws,
            "scaler_state": self.scaler_state,
            "provenance": self.provenance,
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(s.to_dict(), sort_keys=True) for s in self.samples]
        return lines

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path

    def content_hash(self) -> str:
        blob = "\n".join(self.to_lines()).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "mfdse-dataset":
                raise ValueError(f"{path}: not a dataset file")
            samples = [EdpSample.from_dict(json.loads(line)) for line in fh if line.strip()]
        if len(samples) != header["n"]:
            raise ValueError(f"{path}: header says {header['n']} samples, found {len(samples)}")
        return cls(
            samples,
            header["scaler_state"],
            header["split_seed"],
            header["seed"],
            header["oracle"],
            header["cost_model_hash"],
            header.get("redraws", 0),
            header.get("provenance", {}),
        )


def collect_dataset(oracle, layers, n: int, seed: int = 0, max_redraws: int = 1_000_000) -> Dataset:
    """Evaluate ``n`` Sobol-sampled feasible design points on ``oracle``.

    Sample ``i`` targets ``layers[i % len(layers)]`` and consumes Sobol
    points from a single stream until one fits.  The stream starts at
    ``seed * SEED_STRIDE`` so different seeds draw disjoint blocks.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    layers = list(layers)
    if not layers:
        raise ValueError("no layers to sample")
    if not 0 <= seed < MAX_SEED:
        raise ValueError(f"seed must be in [0, {MAX_SEED}), got {seed}")
    engine = SobolEngine(N_FEATURES, skip=seed * SEED_STRIDE)
    buffer, pos = np.zeros((0, N_FEATURES)), 0
    samples = []
    redraws = 0
    fidelity = getattr(oracle, "name", "low")
    for i in range(n):
        layer = layers[i % len(layers)]
        while True:
            if pos == len(buffer):
                buffer, pos = engine.draw(1024), 0
            dp = lattice_map(buffer[pos], layer)
            pos += 1
            if validate_fit(dp):
                break
            redraws += 1
            if redraws > max_redraws:
                raise RuntimeError(f"sample {i}: no feasible point after {max_redraws} redraws")
        try:
            cost = oracle(dp)
        except Exception as exc:
            raise RuntimeError(f"oracle failed on sample {i}: {exc}") from exc
        samples.append(
            EdpSample(encode_features(dp), dp, cost.energy_pj, cost.delay_cycles, cost.edp, fidelity)
        )
    log.info("collected %d %s-fidelity samples (%d infeasible redraws)", n, fidelity, redraws)
    model = getattr(oracle, "model", None)
    return Dataset(
        samples,
        split_seed=seed,
        seed=seed,
        oracle=fidelity,
        cost_model_hash=model.config_hash() if model is not None else "",
        redraws=redraws,
    )


def log_edp_stats(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std())
    return float(values.mean()), std if std > 0 else 1.0


def hash_layers(layers) -> str:
    blob = json.dumps([l.to_dict() for l in layers], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]

