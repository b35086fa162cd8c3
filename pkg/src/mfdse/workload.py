"""Layer shapes, the discrete hardware/software design space, and the
40-component feature encoding shared by every model.

Dimensions are always ordered ``N, K, C, P, Q, R, S``.  A software mapping
holds a loop order (dimension indices listed outermost first) and a
3 x 7 tiling table whose rows are memory levels: level 0 is the
accumulator/array tile, level 1 the scratchpad tile and level 2 the
outermost (DRAM) loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from itertools import product
from pathlib import Path

import numpy as np

DIMS = ("N", "K", "C", "P", "Q", "R", "S")
N, K, C, P, Q, R, S = range(7)
N_DIMS = 7
N_LEVELS = 3
N_FEATURES = 40

ARRAY_DIMS = (4, 8, 16, 32)
MEM_KB = tuple(range(8, 257, 8))
BYTES_PER_ELEMENT = 2

# Upper bounds of the layer-shape part of the design space.
DIM_MAX = (16, 4096, 4096, 256, 256, 7, 7)
STRIDE_MAX = 4
DILATION_MAX = 4

# Dimensions indexing each tensor.
WEIGHT_DIMS = (K, C, R, S)
INPUT_DIMS = (N, C, P, Q, R, S)
OUTPUT_DIMS = (N, K, P, Q)
TENSOR_DIMS = (WEIGHT_DIMS, INPUT_DIMS, OUTPUT_DIMS)
TENSORS = ("W", "I", "O")

# Feature layout.
HW_SLOTS = slice(0, 3)
ORDER_SLOTS = slice(3, 10)
TILING_SLOTS = slice(10, 31)
LAYER_SLOTS = slice(31, 38)
STRIDE_SLOT = 38
DILATION_SLOT = 39


def tiling_slot(dim: int, level: int) -> int:
    """Feature index of a tiling factor (dimension-major layout)."""
    return 10 + 3 * dim + level


class InvalidDesignError(ValueError):
    """Raised when a design point violates the design-space rules."""


@dataclass(frozen=True, order=True)
class LayerShape:
    N: int
    K: int
    C: int
    P: int
    Q: int
    R: int
    S: int
    stride: int = 1
    dilation: int = 1
    name: str = ""

    def __post_init__(self):
        for field in DIMS + ("stride", "dilation"):
            value = getattr(self, field)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise InvalidDesignError(f"{field} must be an integer, got {value!r}")
            if value < 1:
                raise InvalidDesignError(f"{field} must be >= 1, got {value}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.N, self.K, self.C, self.P, self.Q, self.R, self.S)

    @property
    def macs(self) -> int:
        return math.prod(self.dims)

    def in_bounds(self) -> bool:
        return (
            all(d <= m for d, m in zip(self.dims, DIM_MAX))
            and self.stride <= STRIDE_MAX
            and self.dilation <= DILATION_MAX
        )

    def to_dict(self) -> dict:
        out = {d: int(v) for d, v in zip(DIMS, self.dims)}
        out["stride"] = int(self.stride)
        out["dilation"] = int(self.dilation)
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "LayerShape":
        try:
            kwargs = {d: obj[d] for d in DIMS}
        except KeyError as exc:
            raise InvalidDesignError(f"layer is missing dimension {exc.args[0]}") from None
        kwargs["stride"] = obj.get("stride", 1)
        kwargs["dilation"] = obj.get("dilation", 1)
        kwargs["name"] = obj.get("name", "")
        return cls(**kwargs)


@dataclass(frozen=True, order=True)
class HwConfig:
    array_dim: int
    acc_kb: int
    spad_kb: int

    def is_valid(self) -> bool:
        return (
            self.array_dim in ARRAY_DIMS
            and self.acc_kb in MEM_KB
            and self.spad_kb in MEM_KB
        )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.array_dim, self.acc_kb, self.spad_kb)


@dataclass(frozen=True)
class SwMapping:
    loop_order: tuple[int, ...]
    tiling: tuple[tuple[int, ...], ...]

    @classmethod
    def single_tile(cls, layer: LayerShape, loop_order=tuple(range(N_DIMS))) -> "SwMapping":
        """Everything in the outermost level, unit tiles below."""
        ones = (1,) * N_DIMS
        return cls(tuple(loop_order), (ones, ones, layer.dims))

    def to_dict(self) -> dict:
        return {
            "loop_order": [int(x) for x in self.loop_order],
            "tiling": [[int(x) for x in row] for row in self.tiling],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SwMapping":
        return cls(
            tuple(int(x) for x in obj["loop_order"]),
            tuple(tuple(int(x) for x in row) for row in obj["tiling"]),
        )


@dataclass(frozen=True)
class DesignPoint:
    hw: HwConfig
    sw: SwMapping
    layer: LayerShape

    def to_dict(self) -> dict:
        return {
            "hw": list(self.hw.as_tuple()),
            "sw": self.sw.to_dict(),
            "layer": self.layer.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DesignPoint":
        return cls(
            HwConfig(*(int(x) for x in obj["hw"])),
            SwMapping.from_dict(obj["sw"]),
            LayerShape.from_dict(obj["layer"]),
        )


# ---------------------------------------------------------------------------
# design space


def enumerate_hw_space() -> list[HwConfig]:
    """All 4 x 32 x 32 hardware configurations in sorted order."""
    return [HwConfig(a, acc, sp) for a, acc, sp in product(ARRAY_DIMS, MEM_KB, MEM_KB)]


@lru_cache(maxsize=None)
def hw_space_array() -> np.ndarray:
    """The hardware space as an ``(4096, 3)`` integer array."""
    out = np.array([hw.as_tuple() for hw in enumerate_hw_space()], dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=4096)
def divisors(n: int) -> tuple[int, ...]:
    small, large = [], []
    i = 1
    while i * i <= n:
        if n % i == 0:
            small.append(i)
            if i != n // i:
                large.append(n // i)
        i += 1
    return tuple(small + large[::-1])


def validate_mapping(sw: SwMapping, layer: LayerShape) -> bool:
    """True iff the loop order is a permutation and tilings multiply out exactly."""
    order = tuple(sw.loop_order)
    if len(order) != N_DIMS or sorted(order) != list(range(N_DIMS)):
        return False
    if len(sw.tiling) != N_LEVELS or any(len(row) != N_DIMS for row in sw.tiling):
        return False
    for d, size in enumerate(layer.dims):
        factors = [sw.tiling[lvl][d] for lvl in range(N_LEVELS)]
        if any(int(f) != f or f < 1 for f in factors):
            return False
        if math.prod(factors) != size:
            return False
    return True


def cumulative_tiles(tiling: np.ndarray) -> np.ndarray:
    """Cumulative tile extents per level; works on ``(3, 7)`` or ``(n, 3, 7)``."""
    return np.cumprod(np.asarray(tiling, dtype=np.int64), axis=-2)


def tile_footprints(tiles: np.ndarray, layer: LayerShape) -> np.ndarray:
    """Element footprints of the weight, input and output tiles.

    ``tiles`` holds cumulative extents with dimensions on the last axis; the
    result has the same leading shape plus a trailing axis of length 3.
    """
    t = np.asarray(tiles, dtype=np.int64)
    n_, k_, c_, p_, q_, r_, s_ = (t[..., d] for d in range(N_DIMS))
    h = (p_ - 1) * layer.stride + (r_ - 1) * layer.dilation + 1
    w = (q_ - 1) * layer.stride + (s_ - 1) * layer.dilation + 1
    weight = k_ * c_ * r_ * s_
    inp = n_ * c_ * h * w
    out = n_ * k_ * p_ * q_
    return np.stack([weight, inp, out], axis=-1)


def fits_batch(hw: np.ndarray, tiling: np.ndarray, layer: LayerShape) -> np.ndarray:
    """Vectorised capacity check.

    ``hw`` is ``(3,)`` or ``(n, 3)``; ``tiling`` is ``(n, 3, 7)``.
    """
    hw = np.asarray(hw, dtype=np.int64)
    tiles = cumulative_tiles(tiling)
    acc_bytes = tile_footprints(tiles[:, 0, :], layer)[:, 2] * BYTES_PER_ELEMENT
    spad_bytes = tile_footprints(tiles[:, 1, :], layer).sum(axis=-1) * BYTES_PER_ELEMENT
    return (acc_bytes <= hw[..., 1] * 1024) & (spad_bytes <= hw[..., 2] * 1024)


def validate_fit(dp: DesignPoint) -> bool:
    """Level-0 outputs must fit the accumulator, level-1 working set the scratchpad."""
    tiling = np.asarray(dp.sw.tiling, dtype=np.int64)[None]
    return bool(fits_batch(np.asarray(dp.hw.as_tuple()), tiling, dp.layer)[0])


def check_design(dp: DesignPoint, *, fit: bool = True) -> None:
    """Raise :class:`InvalidDesignError` unless ``dp`` is a valid design point."""
    if not dp.hw.is_valid():
        raise InvalidDesignError(f"hardware config outside the design space: {dp.hw}")
    if not validate_mapping(dp.sw, dp.layer):
        raise InvalidDesignError("mapping does not tile the layer exactly")
    if fit and not validate_fit(dp):
        raise InvalidDesignError(f"tiles do not fit the memories of {dp.hw}")


# ---------------------------------------------------------------------------
# features
#
# Raw layout holds plain integers (factors, sizes, codes).  Scaling maps each
# slot to [0, 1] with fixed design-space bounds; tiling factors and layer
# dimensions are compared on a log2 scale.


def _feature_bounds():
    low = np.zeros(N_FEATURES)
    high = np.zeros(N_FEATURES)
    log_slot = np.zeros(N_FEATURES, dtype=bool)
    low[0:3] = (ARRAY_DIMS[0], MEM_KB[0], MEM_KB[0])
    high[0:3] = (ARRAY_DIMS[-1], MEM_KB[-1], MEM_KB[-1])
    low[ORDER_SLOTS] = 0
    high[ORDER_SLOTS] = N_DIMS - 1
    for d in range(N_DIMS):
        for lvl in range(N_LEVELS):
            i = tiling_slot(d, lvl)
            low[i], high[i], log_slot[i] = 1, DIM_MAX[d], True
        i = LAYER_SLOTS.start + d
        low[i], high[i], log_slot[i] = 1, DIM_MAX[d], True
    low[STRIDE_SLOT], high[STRIDE_SLOT] = 1, STRIDE_MAX
    low[DILATION_SLOT], high[DILATION_SLOT] = 1, DILATION_MAX
    return low, high, log_slot


FEATURE_LOW, FEATURE_HIGH, FEATURE_LOG = _feature_bounds()
for _arr in (FEATURE_LOW, FEATURE_HIGH, FEATURE_LOG):
    _arr.setflags(write=False)


def _transform(raw):
    raw = np.asarray(raw, dtype=np.float64)
    return np.where(FEATURE_LOG, np.log2(np.maximum(raw, 1e-300)), raw)


_T_LOW = _transform(FEATURE_LOW)
_T_SPAN = _transform(FEATURE_HIGH) - _T_LOW


def scale_raw(raw: np.ndarray) -> np.ndarray:
    """Min-max scale raw feature vectors (last axis of length 40)."""
    return (_transform(raw) - _T_LOW) / _T_SPAN


def unscale(features: np.ndarray) -> np.ndarray:
    """Inverse of :func:`scale_raw`, rounded back onto the integer lattice."""
    t = np.asarray(features, dtype=np.float64) * _T_SPAN + _T_LOW
    raw = np.where(FEATURE_LOG, np.exp2(t), t)
    return np.rint(raw).astype(np.int64)


def raw_features_batch(hw, loop_order, tiling, layer: LayerShape) -> np.ndarray:
    """Unscaled feature rows for a batch of mappings on one layer.

    ``hw`` may be a single ``(3,)`` config or one row per mapping.
    """
    loop_order = np.asarray(loop_order, dtype=np.int64)
    tiling = np.asarray(tiling, dtype=np.int64)
    n = loop_order.shape[0]
    out = np.empty((n, N_FEATURES), dtype=np.float64)
    out[:, HW_SLOTS] = np.broadcast_to(np.asarray(hw, dtype=np.float64), (n, 3))
    out[:, ORDER_SLOTS] = loop_order
    # (n, 3, 7) -> dimension-major (n, 7, 3)
    out[:, TILING_SLOTS] = tiling.transpose(0, 2, 1).reshape(n, 21)
    out[:, LAYER_SLOTS] = layer.dims
    out[:, STRIDE_SLOT] = layer.stride
    out[:, DILATION_SLOT] = layer.dilation
    return out


def encode_batch(hw, loop_order, tiling, layer: LayerShape) -> np.ndarray:
    if not layer.in_bounds():
        raise InvalidDesignError(f"layer outside the encodable range: {layer}")
    return scale_raw(raw_features_batch(hw, loop_order, tiling, layer))


def raw_features(dp: DesignPoint) -> np.ndarray:
    return raw_features_batch(
        dp.hw.as_tuple(), [dp.sw.loop_order], [dp.sw.tiling], dp.layer
    )[0]


def encode_features(dp: DesignPoint) -> np.ndarray:
    """Scaled 40-component feature vector of a valid design point."""
    check_design(dp, fit=False)
    if not dp.layer.in_bounds():
        raise InvalidDesignError(f"layer outside the encodable range: {dp.layer}")
    return scale_raw(raw_features(dp))


def decode_raw(raw) -> DesignPoint:
    raw = [int(round(float(x))) for x in raw]
    hw = HwConfig(*raw[0:3])
    order = tuple(raw[ORDER_SLOTS])
    tiling = tuple(
        tuple(raw[tiling_slot(d, lvl)] for d in range(N_DIMS)) for lvl in range(N_LEVELS)
    )
    layer = LayerShape(*raw[LAYER_SLOTS], stride=raw[STRIDE_SLOT], dilation=raw[DILATION_SLOT])
    return DesignPoint(hw, SwMapping(order, tiling), layer)


def decode_features(features) -> DesignPoint:
    return decode_raw(unscale(features))


# ---------------------------------------------------------------------------
# workload files


def _parse_workload(obj, source: str) -> tuple[str, list[LayerShape]]:
    if not isinstance(obj, dict) or "layers" not in obj:
        raise ValueError(f"{source}: workload must be an object with a 'layers' list")
    name = str(obj.get("name") or Path(source).stem)
    layers_obj = obj["layers"]
    if not isinstance(layers_obj, list) or not layers_obj:
        raise ValueError(f"{source}: workload {name!r} has no layers")
    layers = []
    for i, entry in enumerate(layers_obj):
        try:
            layers.append(LayerShape.from_dict(entry))
        except (InvalidDesignError, TypeError) as exc:
            raise ValueError(f"{source}: layer {i} of {name!r}: {exc}") from None
    return name, layers


def load_workload(path) -> list[tuple[str, list[LayerShape]]]:
    """Read a workload JSON file (one workload object or a list of them)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"{path}: empty workload file")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    items = obj if isinstance(obj, list) else [obj]
    if not items:
        raise ValueError(f"{path}: empty workload file")
    return [_parse_workload(item, str(path)) for item in items]


BUNDLED_WORKLOADS = ("resnet-like", "unet-like", "bert-like", "retinanet-like")


def bundled_workload_path(name: str) -> Path:
    fname = name.replace("-", "_") + ".json"
    return Path(str(resources.files("mfdse") / "data" / "workloads" / fname))


def bundled_workloads() -> dict[str, list[LayerShape]]:
    out = {}
    for name in BUNDLED_WORKLOADS:
        for wname, layers in load_workload(bundled_workload_path(name)):
            out[wname] = layers
    return out


def all_bundled_layers() -> list[LayerShape]:
    return [layer for layers in bundled_workloads().values() for layer in layers]
