"""Bounding boxes in pixel space and on the normalized [0,100] grid.

The textual form ``{<x_left><y_top><x_right><y_bottom>}`` is the wire format
for every box that appears in prompts, targets and model output.
"""

from dataclasses import dataclass
from fractions import Fraction
import math
import re

from .errors import (
    BoxOrderError,
    BoxRangeError,
    BoxSyntaxError,
    OutOfRangeError,
    ParseError,
    TrailingGarbageError,
    ValidationError,
)

GRID_MAX = 100
_FIELDS = ("x_left", "y_top", "x_right", "y_bottom")
_DIGITS = frozenset("0123456789")
# canonical form only; anything else goes through the character scanner
_CANONICAL = re.compile(r"\{<(0|[1-9]\d{0,2})><(0|[1-9]\d{0,2})><(0|[1-9]\d{0,2})><(0|[1-9]\d{0,2})>\}")
ROUNDING_MODES = ("half-up", "floor", "ceil")


@dataclass(frozen=True)
class PixelBox:
    x_left: float
    y_top: float
    x_right: float
    y_bottom: float

    def __post_init__(self):
        for name in _FIELDS:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, Fraction)):
                raise ValidationError(f"{name} must be a real number, got {v!r}")
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {v!r}")
        if self.x_left > self.x_right or self.y_top > self.y_bottom:
            raise ValidationError(f"inverted pixel box {tuple(self)}")

    def __iter__(self):
        return iter((self.x_left, self.y_top, self.x_right, self.y_bottom))

    @property
    def area(self):
        return (self.x_right - self.x_left) * (self.y_bottom - self.y_top)


@dataclass(frozen=True)
class NormBox:
    """Integer box on the [0,100] grid; compares equal only to NormBox."""

    x_left: int
    y_top: int
    x_right: int
    y_bottom: int

    def __post_init__(self):
        for name in _FIELDS:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValidationError(f"{name} must be an int, got {v!r}")
            if not 0 <= v <= GRID_MAX:
                raise ValidationError(f"{name}={v} outside [0, {GRID_MAX}]")
        if self.x_left > self.x_right or self.y_top > self.y_bottom:
            raise ValidationError(f"inverted box {tuple(self)}")

    def __iter__(self):
        return iter((self.x_left, self.y_top, self.x_right, self.y_bottom))

    @classmethod
    def _trusted(cls, a, b, c, d):
        # caller has already range- and order-checked the ints
        box = object.__new__(cls)
        box.__dict__.update(x_left=a, y_top=b, x_right=c, y_bottom=d)
        return box

    @classmethod
    def of(cls, coords):
        return cls(*(int(c) for c in coords))

    @property
    def area(self):
        return (self.x_right - self.x_left) * (self.y_bottom - self.y_top)

    @property
    def is_degenerate(self):
        return self.x_left == self.x_right or self.y_top == self.y_bottom

    def __str__(self):
        return serialize_box(self)


def _to_grid(coord, dim, rounding):
    if isinstance(coord, int) and rounding == "half-up":
        # floor(c*100/dim + 1/2) in integer arithmetic
        return (2 * GRID_MAX * coord + dim) // (2 * dim)
    q = Fraction(coord) * GRID_MAX / dim
    if rounding == "half-up":
        return math.floor(q + Fraction(1, 2))
    if rounding == "floor":
        return math.floor(q)
    if rounding == "ceil":
        return math.ceil(q)
    raise ValueError(f"unknown rounding mode {rounding!r}; expected one of {ROUNDING_MODES}")


def normalize_box(b, width, height, rounding="half-up"):
    """Quantize a pixel box inside a ``width`` x ``height`` image to the grid.

    Each coordinate becomes ``round(coord / dim * 100)`` (half-up by default)
    computed on exact rationals, then clamped to [0,100].
    """
    if not isinstance(b, PixelBox):
        b = PixelBox(*b)
    for dim_name, dim in (("width", width), ("height", height)):
        if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
            raise ValidationError(f"{dim_name} must be a positive integer, got {dim!r}")
    limits = (width, height, width, height)
    out = []
    for name, coord, dim in zip(_FIELDS, b, limits):
        if coord > dim:
            raise OutOfRangeError(name, coord, dim)
        out.append(min(GRID_MAX, max(0, _to_grid(coord, dim, rounding))))
    x0, y0, x1, y1 = out
    return NormBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def denormalize_box(n, width, height):
    """Map a grid box back to pixels: ``coord / 100 * dim``."""
    x0, y0, x1, y1 = n
    return PixelBox(
        x0 * width / GRID_MAX,
        y0 * height / GRID_MAX,
        x1 * width / GRID_MAX,
        y1 * height / GRID_MAX,
    )


def serialize_box(n):
    return f"{{<{n.x_left}><{n.y_top}><{n.x_right}><{n.y_bottom}>}}"


def scan_box(s, pos=0):
    """Strictly read one serialized box starting at ``s[pos]``.

    Returns ``(NormBox, end_index)``. Raises a :class:`ParseError` subclass
    carrying the byte offset of the first offending character.
    """
    m = _CANONICAL.match(s, pos)
    if m:
        a, b, c, d = map(int, m.groups())
        if a <= c <= GRID_MAX and b <= d <= GRID_MAX:
            return NormBox._trusted(a, b, c, d), m.end()

    def fail(cls, msg, i):
        raise cls(msg, BoxSyntaxError.byte_offset(s, i), s)

    n = len(s)
    i = pos
    if i >= n or s[i] != "{":
        fail(BoxSyntaxError, "expected '{'", i)
    i += 1
    values = []
    starts = []
    for name in _FIELDS:
        if i >= n or s[i] != "<":
            fail(BoxSyntaxError, f"expected '<' before {name}", i)
        i += 1
        start = i
        while i < n and s[i] in _DIGITS:
            i += 1
        if i == start:
            fail(BoxSyntaxError, f"expected digits for {name}", i)
        digits = s[start:i]
        if len(digits) > 1 and digits[0] == "0":
            fail(BoxSyntaxError, f"leading zero in {name}", start)
        if i >= n or s[i] != ">":
            fail(BoxSyntaxError, f"expected '>' after {name}", i)
        value = int(digits)
        if value > GRID_MAX:
            fail(BoxRangeError, f"{name}={value} exceeds {GRID_MAX}", start)
        values.append(value)
        starts.append(start)
        i += 1
    if i >= n or s[i] != "}":
        fail(BoxSyntaxError, "expected '}'", i)
    if values[0] > values[2]:
        fail(BoxOrderError, "x_left greater than x_right", starts[2])
    if values[1] > values[3]:
        fail(BoxOrderError, "y_top greater than y_bottom", starts[3])
    return NormBox(*values), i + 1


def parse_box(s):
    """Exact inverse of :func:`serialize_box`; rejects everything else."""
    m = _CANONICAL.fullmatch(s)
    if m:
        a, b, c, d = map(int, m.groups())
        if a <= c <= GRID_MAX and b <= d <= GRID_MAX:
            return NormBox._trusted(a, b, c, d)
    box, end = scan_box(s, 0)
    if end != len(s):
        raise TrailingGarbageError("trailing characters after box", BoxSyntaxError.byte_offset(s, end), s)
    return box


def find_first_box(s):
    """First well-formed box anywhere in ``s``, or ``None``.

    Lenient: malformed candidates are skipped, never raised.
    """
    pos = s.find("{")
    while pos != -1:
        try:
            return scan_box(s, pos)[0]
        except ParseError:
            pos = s.find("{", pos + 1)
    return None


def iou(a, b):
    """Intersection over union of two boxes as continuous rectangles.

    Zero-area unions (and zero-area boxes generally) give 0.0.
    """
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = iw * ih if iw > 0 and ih > 0 else 0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0 or inter == 0:
        return 0.0
    return inter / union
