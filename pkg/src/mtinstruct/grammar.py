"""Task identifiers, the ``[INST] ... [/INST]`` prompt template, and the
per-benchmark instruction registry."""

from dataclasses import dataclass
import enum
import json
import re

from .errors import (
    ConfigError,
    PromptSyntaxError,
    UnknownIdentifierError,
    ValidationError,
)

DEFAULT_IMAGE_SLOT = "<ImageHere>"
INST_OPEN = "[INST]"
INST_CLOSE = "[/INST]"
IMG_OPEN = "<Img>"
IMG_CLOSE = "</Img>"

# A bracketed token with no spaces or nested brackets, e.g. "[vqa]".
_BRACKET_TOKEN = re.compile(r"\[[^\[\]\s]+\]")


class TaskIdentifier(enum.Enum):
    VQA = "[vqa]"
    CAPTION = "[caption]"
    GROUNDING = "[grounding]"
    REFER = "[refer]"
    IDENTIFY = "[identify]"
    DETECTION = "[detection]"
    NONE = ""

    @property
    def surface(self):
        return self.value

    @classmethod
    def from_name(cls, name):
        """Accept ``vqa``, ``[vqa]``, ``VQA`` or ``none``/empty."""
        key = name.strip()
        if key in ("", "none", "NONE"):
            return cls.NONE
        bare = key[1:-1] if key.startswith("[") and key.endswith("]") else key
        try:
            return cls[bare.upper()]
        except KeyError:
            raise ValidationError(
                f"unknown task identifier {name!r}; expected one of "
                + ", ".join(t.name.lower() for t in cls)
            ) from None


class IdentifierRegistry:
    """Surface-form lookup; built once, read-only afterwards."""

    def __init__(self, identifiers=None):
        self._by_surface = {}
        for ident in identifiers if identifiers is not None else TaskIdentifier:
            if ident is TaskIdentifier.NONE:
                continue
            self.add(ident)
        self._frozen = True

    def add(self, ident):
        if getattr(self, "_frozen", False):
            raise ConfigError("identifier registry is read-only")
        if ident.surface in self._by_surface:
            raise ConfigError(f"duplicate identifier surface form {ident.surface!r}")
        self._by_surface[ident.surface] = ident

    def match(self, text, pos=0):
        """Longest registered surface form starting at ``pos``, or None."""
        best = None
        for surface, ident in self._by_surface.items():
            if text.startswith(surface, pos) and (best is None or len(surface) > len(best.surface)):
                best = ident
        return best

    def __len__(self):
        # NONE is implicit: it is the absence of a token.
        return len(self._by_surface) + 1

    def __iter__(self):
        return iter(list(self._by_surface.values()) + [TaskIdentifier.NONE])


REGISTRY = IdentifierRegistry()


@dataclass(frozen=True)
class PromptParts:
    instruction: str
    identifier: TaskIdentifier = TaskIdentifier.NONE
    has_image: bool = True
    image_slot: str = DEFAULT_IMAGE_SLOT

    def __post_init__(self):
        text = self.instruction.strip() if isinstance(self.instruction, str) else None
        if not text:
            raise ValidationError("instruction must be a non-empty string")
        object.__setattr__(self, "instruction", text)
        if not self.has_image and self.identifier is not TaskIdentifier.NONE:
            raise ValidationError("a prompt without an image cannot carry a task identifier")
        if not self.has_image:
            # the slot is not rendered, so canonicalize it for equality
            object.__setattr__(self, "image_slot", DEFAULT_IMAGE_SLOT)
        if IMG_CLOSE in self.image_slot:
            raise ValidationError(f"image slot may not contain {IMG_CLOSE!r}")
        if self.identifier is TaskIdentifier.NONE and _BRACKET_TOKEN.match(text):
            raise ValidationError(
                f"instruction without identifier may not start with a bracketed token: {text[:20]!r}"
            )
        if not self.has_image and text.startswith((IMG_OPEN, IMG_CLOSE)):
            raise ValidationError("instruction without image may not start with an image tag")


def render_prompt(p, separator=" "):
    """``[INST] <Img>SLOT</Img> [ident] instruction [/INST]``.

    Absent segments (no image, NONE identifier) are dropped together with
    their separating space.
    """
    parts = [INST_OPEN]
    if p.has_image:
        parts.append(f"{IMG_OPEN}{p.image_slot}{IMG_CLOSE}")
    if p.identifier is not TaskIdentifier.NONE:
        parts.append(p.identifier.surface)
    parts.append(p.instruction)
    parts.append(INST_CLOSE)
    return separator.join(parts)


def _offset(s, i):
    return PromptSyntaxError.byte_offset(s, i)


def _skip_spaces(s, i):
    while i < len(s) and s[i].isspace():
        i += 1
    return i


def parse_prompt(s, registry=REGISTRY):
    """Inverse of :func:`render_prompt`; whitespace runs between segments
    are tolerated and canonicalized."""
    start = _skip_spaces(s, 0)
    if not s.startswith(INST_OPEN, start):
        raise PromptSyntaxError(f"missing {INST_OPEN!r}", _offset(s, start), s)
    end = len(s.rstrip())
    if not s[:end].endswith(INST_CLOSE):
        raise PromptSyntaxError(f"missing {INST_CLOSE!r}", _offset(s, end), s)
    body_end = end - len(INST_CLOSE)
    i = start + len(INST_OPEN)
    if body_end < i:
        raise PromptSyntaxError("overlapping delimiters", _offset(s, body_end), s)
    i = _skip_spaces(s, i)

    has_image = False
    slot = DEFAULT_IMAGE_SLOT
    if s.startswith(IMG_OPEN, i):
        close = s.find(IMG_CLOSE, i + len(IMG_OPEN), body_end)
        if close == -1:
            raise PromptSyntaxError(f"unbalanced {IMG_OPEN!r}", _offset(s, i), s)
        has_image = True
        slot = s[i + len(IMG_OPEN):close]
        i = _skip_spaces(s, close + len(IMG_CLOSE))
    elif s.startswith(IMG_CLOSE, i):
        raise PromptSyntaxError(f"{IMG_CLOSE!r} without {IMG_OPEN!r}", _offset(s, i), s)

    identifier = TaskIdentifier.NONE
    token = _BRACKET_TOKEN.match(s, i, body_end)
    if token is not None:
        found = registry.match(s, i)
        if found is None or len(found.surface) != token.end() - i:
            raise UnknownIdentifierError(f"unknown task identifier {token.group()!r}", _offset(s, i), s)
        identifier = found
        i = _skip_spaces(s, token.end())

    instruction = s[i:body_end].strip()
    if not instruction:
        raise PromptSyntaxError("empty instruction", _offset(s, i), s)
    try:
        return PromptParts(instruction, identifier, has_image, slot)
    except ValidationError as exc:
        raise PromptSyntaxError(str(exc), _offset(s, i), s) from None


def split_identifier(text, registry=REGISTRY):
    """Split a leading identifier token off ``text``.

    Returns ``(identifier, rest)``; NONE when no registered token leads.
    """
    stripped = text.lstrip()
    token = _BRACKET_TOKEN.match(stripped)
    if token is not None:
        found = registry.match(stripped)
        if found is not None and len(found.surface) == token.end():
            return found, stripped[token.end():].strip()
    return TaskIdentifier.NONE, text.strip()


@dataclass(frozen=True)
class BenchmarkPrompt:
    name: str
    template: str
    identifier: TaskIdentifier
    kind: str = "vqa"

    HOLE = "{question}"

    def __post_init__(self):
        if self.template.count(self.HOLE) != 1:
            raise ConfigError(f"template for {self.name!r} must contain exactly one {self.HOLE}")
        if self.identifier is not TaskIdentifier.NONE and not self.template.startswith(
            self.identifier.surface + " "
        ):
            raise ConfigError(f"template for {self.name!r} must start with {self.identifier.surface!r}")

    def fill(self, question):
        return self.template.replace(self.HOLE, question)

    def match(self, text):
        """Recover the question from a filled template, or None."""
        prefix, suffix = self.template.split(self.HOLE)
        if text.startswith(prefix) and text.endswith(suffix) and len(text) >= len(prefix) + len(suffix):
            return text[len(prefix):len(text) - len(suffix)]
        return None


_SHORT_ANSWER = "[vqa] Based on the image, respond to this question with a single word or phrase: {question}"
_REC = "[refer] give me the location of {question}"

DEFAULT_BENCHMARKS = {
    "RefCOCO": (_REC, "rec"),
    "RefCOCO+": (_REC, "rec"),
    "RefCOCOg": (_REC, "rec"),
    "REC": (_REC, "rec"),
    "REG": ("[identify] what is in this location {question}", "reg"),
    "VQA": ("[vqa] {question}", "vqa"),
    "VizWiz": (
        _SHORT_ANSWER + ", and reply 'unanswerable' when the provided information is insufficient",
        "vqa",
    ),
    "HatefulMemes": ("[vqa] This is an image with: {question} written on it. Is it hateful? Answer:", "vqa"),
    "VSR": ("[vqa] Based on the image, is this statement true or false? {question}", "vqa"),
    "IconQA": (_SHORT_ANSWER, "vqa"),
    "GQA": (_SHORT_ANSWER, "vqa"),
    "OKVQA": (_SHORT_ANSWER, "vqa"),
}


class BenchmarkRegistry:
    def __init__(self, entries=None):
        self._entries = {}
        source = DEFAULT_BENCHMARKS if entries is None else entries
        for name, spec in source.items():
            self._entries[name] = _make_benchmark(name, spec)

    @classmethod
    def from_file(cls, path, include_defaults=True):
        """Load ``{name: {"template": ..., "identifier": ..., "kind": ...}}``."""
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read benchmark registry {path}: {exc}") from None
        return cls.from_mapping(data, include_defaults)

    @classmethod
    def from_mapping(cls, data, include_defaults=True):
        if not isinstance(data, dict):
            raise ConfigError("benchmark registry must be a JSON object")
        reg = cls() if include_defaults else cls({})
        for name, spec in data.items():
            reg._entries[name] = _make_benchmark(name, spec)
        return reg

    def __getitem__(self, name):
        try:
            return self._entries[name]
        except KeyError:
            raise ConfigError(
                f"unknown benchmark {name!r}; registered: {', '.join(sorted(self._entries))}"
            ) from None

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self.names())

    def __len__(self):
        return len(self._entries)

    def names(self):
        return sorted(self._entries)


def _make_benchmark(name, spec):
    if isinstance(spec, BenchmarkPrompt):
        return spec
    if isinstance(spec, (tuple, list)):
        template, kind = spec
        identifier = None
    elif isinstance(spec, dict):
        if "template" not in spec:
            raise ConfigError(f"benchmark {name!r} has no template")
        template = spec["template"]
        kind = spec.get("kind", "vqa")
        identifier = spec.get("identifier")
    else:
        raise ConfigError(f"benchmark {name!r}: unsupported entry {spec!r}")
    if identifier is None:
        identifier, _ = split_identifier(template)
    elif not isinstance(identifier, TaskIdentifier):
        try:
            identifier = TaskIdentifier.from_name(identifier)
        except ValidationError as exc:
            raise ConfigError(f"benchmark {name!r}: {exc}") from None
    return BenchmarkPrompt(name, template, identifier, kind)


BENCHMARKS = BenchmarkRegistry()


def benchmark_prompt(benchmark, question, registry=None):
    return (registry or BENCHMARKS)[benchmark].fill(question)
