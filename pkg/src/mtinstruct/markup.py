"""Grounded-caption markup: ``<p>phrase</p>{<a><b><c><d>}`` spans in text.

A phrase may carry several boxes written back to back:
``<p>two cats</p>{<0><0><40><40>}{<60><60><100><100>}``.
"""

from dataclasses import dataclass, field
import re

from .errors import MarkupError, ParseError, ValidationError
from .geometry import NormBox, scan_box, serialize_box

P_OPEN = "<p>"
P_CLOSE = "</p>"


@dataclass(frozen=True)
class PlainText:
    text: str

    def surface(self):
        return self.text


@dataclass(frozen=True)
class GroundedSpan:
    phrase: str
    boxes: tuple
    # Offsets [start, end) of the whole span in the parsed source; ignored by ==.
    char_range: tuple = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.phrase:
            raise ValidationError("grounded phrase must be non-empty")
        if P_OPEN in self.phrase or P_CLOSE in self.phrase:
            raise ValidationError(f"phrase contains a <p> marker: {self.phrase!r}")
        if not self.boxes:
            raise ValidationError(f"phrase {self.phrase!r} has no boxes")
        for b in self.boxes:
            if not isinstance(b, NormBox):
                raise ValidationError(f"expected NormBox, got {b!r}")

    def surface(self):
        return P_OPEN + self.phrase + P_CLOSE + "".join(serialize_box(b) for b in self.boxes)


@dataclass(frozen=True)
class GroundedText:
    segments: tuple = ()

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        prev = None
        for seg in segs:
            if isinstance(seg, PlainText):
                if not seg.text:
                    raise ValidationError("empty plain-text segment")
                if isinstance(prev, PlainText):
                    raise ValidationError("adjacent plain-text segments must be merged")
                if P_OPEN in seg.text or P_CLOSE in seg.text:
                    raise ValidationError(f"plain text contains a <p> marker: {seg.text!r}")
                if isinstance(prev, GroundedSpan) and seg.text.startswith("{"):
                    raise ValidationError("plain text right after a span may not start with '{'")
            elif not isinstance(seg, GroundedSpan):
                raise ValidationError(f"unexpected segment {seg!r}")
            prev = seg

    @property
    def spans(self):
        return [s for s in self.segments if isinstance(s, GroundedSpan)]


def parse_grounded(s):
    """Strictly parse grounded markup into a lossless :class:`GroundedText`."""
    segments = []
    n = len(s)
    i = 0
    plain_start = 0

    def err(msg, at):
        raise MarkupError(msg, ParseError.byte_offset(s, at), s)

    while True:
        j = s.find(P_OPEN, i)
        stray = s.find(P_CLOSE, i, n if j == -1 else j)
        if stray != -1:
            err("</p> without matching <p>", stray)
        if j == -1:
            break
        close = s.find(P_CLOSE, j + len(P_OPEN))
        if close == -1:
            err("unclosed <p>", j)
        nested = s.find(P_OPEN, j + len(P_OPEN), close)
        if nested != -1:
            err("nested <p> is not allowed", nested)
        phrase = s[j + len(P_OPEN):close]
        if not phrase:
            err("empty phrase", j)
        k = close + len(P_CLOSE)
        boxes = []
        while k < n and s[k] == "{":
            box, k = scan_box(s, k)
            boxes.append(box)
        if not boxes:
            err("<p>...</p> must be followed by at least one box", k)
        if j > plain_start:
            segments.append(PlainText(s[plain_start:j]))
        segments.append(GroundedSpan(phrase, boxes, (j, k)))
        i = plain_start = k
    if plain_start < n:
        segments.append(PlainText(s[plain_start:]))
    return GroundedText(segments)


def emit_grounded(g):
    return "".join(seg.surface() for seg in g.segments)


def strip_grounding(g):
    """Plain caption: spans contribute only their phrase."""
    return "".join(seg.phrase if isinstance(seg, GroundedSpan) else seg.text for seg in g.segments)


def extract_pairs(g):
    """``(phrase, box)`` in document order; a k-box span yields k pairs."""
    return [(span.phrase, box) for span in g.spans for box in span.boxes]


def ground_caption(caption, spans):
    """Build markup from a plain caption plus ``(start, end, boxes)`` phrase
    offsets, as carried by Flickr30k-entities style annotations."""
    segments = []
    cursor = 0
    for start, end, boxes in sorted(spans, key=lambda t: (t[0], t[1])):
        if start < cursor or end <= start or end > len(caption):
            raise ValidationError(f"bad or overlapping phrase offsets ({start}, {end})")
        if start > cursor:
            segments.append(PlainText(caption[cursor:start]))
        segments.append(GroundedSpan(caption[start:end], tuple(boxes)))
        cursor = end
    if cursor < len(caption):
        segments.append(PlainText(caption[cursor:]))
    return GroundedText(segments)


_LOOSE_MARKUP = re.compile(r"</?p>|\{<\d+><\d+><\d+><\d+>\}")


def strip_grounding_lenient(s):
    """Plain text from possibly malformed model output; never raises."""
    try:
        return strip_grounding(parse_grounded(s))
    except (ParseError, ValidationError):
        return _LOOSE_MARKUP.sub("", s)


def parse_grounded_lenient(s):
    """Scorer mode: a parse failure yields no spans instead of an error."""
    try:
        return parse_grounded(s).spans
    except (ParseError, ValidationError):
        return []
