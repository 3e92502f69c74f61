"""Visual-token grouping and positional-table interpolation as array ops.

Binary container layout (all little-endian)::

    8 bytes   magic b"MTGRID\\x00\\x01"
    3 x u64   h, w, d
    h*w*d f64 row-major values
"""

from dataclasses import dataclass
import json
import struct

import numpy as np

from . import kernels
from .errors import SchemaError, ValidationError

MAGIC = b"MTGRID\x00\x01"
_HEADER = struct.Struct("<8sQQQ")
GROUP_MODES = ("row-major-4", "block-2x2")


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """``tokens`` has shape ``(h * w, d)`` in row-major grid order."""

    tokens: np.ndarray
    h: int
    w: int

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != self.h * self.w:
            raise ValidationError(f"tokens shape {t.shape} does not match grid {self.h}x{self.w}")
        object.__setattr__(self, "tokens", t)

    @property
    def d(self):
        return self.tokens.shape[1]


@dataclass(frozen=True, eq=False)
class PosTable:
    """Positional grid of shape ``(s, s, d)`` plus an optional class-token row."""

    grid: np.ndarray
    cls: np.ndarray = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
            raise ValidationError(f"positional grid must be (s, s, d) with s >= 1, got {g.shape}")
        object.__setattr__(self, "grid", g)
        if self.cls is not None:
            c = np.asarray(self.cls, dtype=np.float64).reshape(-1)
            if c.shape[0] != g.shape[2]:
                raise ValidationError("class-token vector dimension differs from the grid")
            object.__setattr__(self, "cls", c)

    @property
    def side(self):
        return self.grid.shape[0]

    @classmethod
    def from_sequence(cls, seq, has_cls=False):
        """From a ViT-style ``(n, d)`` table, optionally led by the class token."""
        seq = np.asarray(seq, dtype=np.float64)
        head, body = (seq[0], seq[1:]) if has_cls else (None, seq)
        s = int(round(np.sqrt(body.shape[0])))
        if s * s != body.shape[0]:
            raise ValidationError(f"{body.shape[0]} positions do not form a square grid")
        return cls(body.reshape(s, s, -1), head)

    def to_sequence(self):
        body = self.grid.reshape(-1, self.grid.shape[2])
        return body if self.cls is None else np.vstack([self.cls[None, :], body])


def group_tokens(g, mode="row-major-4"):
    """Concatenate 4 adjacent tokens into one of dimension 4d.

    ``row-major-4`` takes sequence-consecutive quadruples. ``block-2x2``
    takes each 2x2 spatial block (row-major inside the block, blocks in
    row-major order). The output grid is ``(h, w/4)`` for row-major-4 when
    ``w`` is a multiple of 4, else ``(1, h*w/4)``; ``(h/2, w/2)`` for
    block-2x2.
    """
    h, w, d = g.h, g.w, g.d
    if mode == "row-major-4":
        if (h * w) % 4:
            raise ValidationError(f"row-major-4 grouping needs h*w divisible by 4, got {h}x{w}")
        out = g.tokens.reshape(h * w // 4, 4 * d)
        oh, ow = (h, w // 4) if w % 4 == 0 else (1, h * w // 4)
    elif mode == "block-2x2":
        if h % 2 or w % 2:
            raise ValidationError(f"block-2x2 grouping needs even h and w, got {h}x{w}")
        out = (
            g.tokens.reshape(h // 2, 2, w // 2, 2, d)
            .transpose(0, 2, 1, 3, 4)
            .reshape(h * w // 4, 4 * d)
        )
        oh, ow = h // 2, w // 2
    else:
        raise ValueError(f"unknown grouping mode {mode!r}; expected one of {GROUP_MODES}")
    return TokenGrid(np.ascontiguousarray(out), oh, ow)


def interpolate_pos(p, target_side):
    """Bilinear (align-corners) resize of the positional grid.

    Target index ``t`` samples source coordinate ``t * (s-1) / (T-1)``;
    ``T == 1`` samples the grid centre. The class-token row is copied.
    """
    if isinstance(target_side, bool) or not isinstance(target_side, (int, np.integer)) or target_side < 1:
        raise ValidationError(f"target side must be a positive integer, got {target_side!r}")
    grid = kernels.bilinear_resize(p.grid, int(target_side))
    return PosTable(grid, None if p.cls is None else p.cls.copy())


# -- containers ---------------------------------------------------------------


def write_grid(path, array):
    """Write an ``(h, w, d)`` array to the binary container."""
    a = np.asarray(array, dtype="<f8")
    if a.ndim != 3:
        raise ValidationError(f"container arrays are (h, w, d), got shape {a.shape}")
    h, w, d = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, d))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise SchemaError("truncated container header", path=path)
        magic, h, w, d = _HEADER.unpack(head)
        if magic != MAGIC:
            raise SchemaError(f"bad magic {magic!r}", path=path)
        body = fh.read()
    expected = h * w * d * 8
    if len(body) != expected:
        raise SchemaError(f"payload is {len(body)} bytes, header implies {expected}", path=path)
    return np.frombuffer(body, dtype="<f8").reshape(h, w, d).astype(np.float64)


def write_grid_json(path, array):
    a = np.asarray(array, dtype=np.float64)
    h, w, d = a.shape
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"h": h, "w": w, "d": d, "data": a.reshape(h * w, d).tolist()}, fh)
        fh.write("\n")


def read_grid_json(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        h, w, d = int(obj["h"]), int(obj["w"]), int(obj["d"])
        a = np.asarray(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad JSON grid: {exc}", path=path) from None
    if a.size != h * w * d:
        raise SchemaError(f"JSON grid holds {a.size} values, header implies {h * w * d}", path=path)
    return a.reshape(h, w, d)


def load_array(path):
    return read_grid_json(path) if str(path).endswith(".json") else read_grid(path)


def save_array(path, array):
    if str(path).endswith(".json"):
        write_grid_json(path, array)
    else:
        write_grid(path, array)
