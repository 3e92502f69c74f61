"""Corpus record schemas and dataset-construction transforms.

Records travel as JSONL, one object per line::

    {"id": ..., "task": "[refer]", "image": ..., "image_size": [w, h],
     "instruction": ..., "target": ..., "gold": {...} | null,
     "source": ..., "weak": false}

``gold`` is one of ``{"answers": [...]}``, ``{"boxes": [[a,b,c,d], ...]}``,
``{"grounded": "<markup>"}`` or ``{"objects": [...]}`` (CHAIR evaluation).
Conversation records replace ``task``/``instruction``/``target``/``gold`` with
``turns``.
"""

from collections import OrderedDict
from dataclasses import dataclass, field, replace
import json

from .errors import MTInstructError, SchemaError, ValidationError
from .geometry import NormBox, normalize_box, parse_box, serialize_box
from .grammar import BENCHMARKS, TaskIdentifier, split_identifier
from .markup import (
    GroundedSpan,
    GroundedText,
    emit_grounded,
    parse_grounded,
    strip_grounding,
)
from .rng import Xoshiro256

REC_BENCHMARK = "REC"
REG_BENCHMARK = "REG"
DETECTION_PREFIX = TaskIdentifier.DETECTION.surface + " "
MIN_GROUNDED_PHRASES = 5


def dumps(obj):
    """Canonical JSONL encoding: compact, UTF-8, insertion-ordered keys."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class Gold:
    """Structured answer for evaluation; exactly one field is set."""

    answers: tuple = None
    boxes: tuple = None
    grounded: GroundedText = None
    objects: tuple = None

    def __post_init__(self):
        set_fields = [n for n in ("answers", "boxes", "grounded", "objects") if getattr(self, n) is not None]
        if len(set_fields) != 1:
            raise ValidationError(f"gold must carry exactly one of answers/boxes/grounded/objects, got {set_fields}")
        if self.answers is not None:
            object.__setattr__(self, "answers", tuple(self.answers))
            if not self.answers or not all(isinstance(a, str) for a in self.answers):
                raise ValidationError("gold answers must be a non-empty list of strings")
        if self.boxes is not None:
            boxes = tuple(b if isinstance(b, NormBox) else NormBox.of(b) for b in self.boxes)
            if not boxes:
                raise ValidationError("gold boxes must be non-empty")
            object.__setattr__(self, "boxes", boxes)
        if self.objects is not None:
            object.__setattr__(self, "objects", tuple(self.objects))

    def to_json(self):
        if self.answers is not None:
            return {"answers": list(self.answers)}
        if self.boxes is not None:
            return {"boxes": [list(b) for b in self.boxes]}
        if self.grounded is not None:
            return {"grounded": emit_grounded(self.grounded)}
        return {"objects": list(self.objects)}

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict) or len(obj) != 1:
            raise ValidationError(f"gold must be an object with exactly one key, got {obj!r}")
        (key, value), = obj.items()
        if key == "answers":
            return cls(answers=value)
        if key == "boxes":
            if not isinstance(value, list) or not all(isinstance(b, list) and len(b) == 4 for b in value):
                raise ValidationError("gold boxes must be a list of [a,b,c,d]")
            return cls(boxes=tuple(NormBox(*b) for b in value))
        if key == "grounded":
            return cls(grounded=parse_grounded(value))
        if key == "objects":
            if not isinstance(value, list) or not all(isinstance(o, str) for o in value):
                raise ValidationError("gold objects must be a list of strings")
            return cls(objects=value)
        raise ValidationError(f"unknown gold kind {key!r}")


def _check_size(size):
    if (
        not isinstance(size, (tuple, list))
        or len(size) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in size)
    ):
        raise ValidationError(f"image_size must be [width, height] positive integers, got {size!r}")
    return tuple(size)


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    task: TaskIdentifier
    image_ref: str
    image_size: tuple
    instruction: str
    target: str
    gold: Gold = None
    source_dataset: str = ""
    weak_label: bool = False

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("record id must be a non-empty string")
        if not isinstance(self.task, TaskIdentifier):
            raise ValidationError(f"task must be a TaskIdentifier, got {self.task!r}")
        object.__setattr__(self, "image_size", _check_size(self.image_size))
        if not isinstance(self.instruction, str) or not self.instruction.strip():
            raise ValidationError(f"record {self.id}: empty instruction")
        if not isinstance(self.target, str):
            raise ValidationError(f"record {self.id}: target must be a string")
        if not self.target and self.gold is None:
            raise ValidationError(f"record {self.id}: needs a target (training) or gold (evaluation)")

    @property
    def phrase_instruction(self):
        """Instruction text without its leading identifier token."""
        ident, rest = split_identifier(self.instruction)
        return rest if ident is self.task and ident is not TaskIdentifier.NONE else self.instruction.strip()

    def to_json(self):
        return OrderedDict(
            id=self.id,
            task=self.task.surface,
            image=self.image_ref,
            image_size=list(self.image_size),
            instruction=self.instruction,
            target=self.target,
            gold=None if self.gold is None else self.gold.to_json(),
            source=self.source_dataset,
            weak=self.weak_label,
        )

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise ValidationError("record must be a JSON object")
        missing = [k for k in ("id", "task", "image", "image_size", "instruction") if k not in obj]
        if missing:
            raise ValidationError(f"missing keys: {', '.join(missing)}")
        task = _task_from_surface(obj["task"])
        gold = obj.get("gold")
        return cls(
            id=obj["id"],
            task=task,
            image_ref=obj["image"],
            image_size=obj["image_size"],
            instruction=obj["instruction"],
            target=obj.get("target", ""),
            gold=None if gold is None else Gold.from_json(gold),
            source_dataset=obj.get("source", ""),
            weak_label=bool(obj.get("weak", False)),
        )


def _task_from_surface(surface):
    if not isinstance(surface, str):
        raise ValidationError(f"task must be a string, got {surface!r}")
    for t in TaskIdentifier:
        if t.surface == surface:
            return t
    raise ValidationError(f"unknown task surface {surface!r}")


@dataclass(frozen=True)
class Turn:
    task: TaskIdentifier
    instruction: str
    target: str
    source_id: str = ""

    def to_json(self):
        return OrderedDict(task=self.task.surface, instruction=self.instruction,
                           target=self.target, source_id=self.source_id)


@dataclass(frozen=True)
class ConversationRecord:
    id: str
    image_ref: str
    image_size: tuple
    turns: tuple
    source_dataset: str = "multitask-conversation"

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "image_size", _check_size(self.image_size))
        if len(self.turns) < 2:
            raise ValidationError(f"conversation {self.id} needs at least 2 turns")
        for t in self.turns:
            if not t.instruction.strip() or not t.target:
                raise ValidationError(f"conversation {self.id}: every turn needs instruction and target")

    def to_json(self):
        return OrderedDict(
            id=self.id,
            image=self.image_ref,
            image_size=list(self.image_size),
            turns=[t.to_json() for t in self.turns],
            source=self.source_dataset,
        )

    @classmethod
    def from_json(cls, obj):
        turns = obj.get("turns")
        if not isinstance(turns, list):
            raise ValidationError("conversation needs a 'turns' list")
        try:
            parsed = tuple(
                Turn(_task_from_surface(t["task"]), t["instruction"], t["target"], t.get("source_id", ""))
                for t in turns
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed turn: {exc}") from None
        return cls(obj["id"], obj["image"], obj["image_size"], parsed, obj.get("source", "multitask-conversation"))


def record_from_json(obj):
    """Dispatch on shape: conversations carry ``turns``."""
    if isinstance(obj, dict) and "turns" in obj:
        return ConversationRecord.from_json(obj)
    return CorpusRecord.from_json(obj)


def read_jsonl(lines, path=None, strict=True, on_error=None, parse=record_from_json):
    """Yield ``(line_number, record)``; blank lines are skipped.

    Schema problems raise :class:`SchemaError` when ``strict``; otherwise
    ``on_error(SchemaError)`` is called and the line skipped.
    """
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            yield lineno, parse(obj)
        except (json.JSONDecodeError, MTInstructError, KeyError, TypeError, ValueError) as exc:
            error = SchemaError(str(exc), lineno, path)
            if strict:
                raise error from None
            if on_error is not None:
                on_error(error)


# -- REC / REG ---------------------------------------------------------------


def make_rec_record(phrase, box, width, height, *, id, image_ref, source="", weak=False,
                    eval_record=False, rounding="half-up"):
    """Referring-expression record: phrase in, serialized grid box out."""
    nb = normalize_box(box, width, height, rounding=rounding)
    return CorpusRecord(
        id=id,
        task=TaskIdentifier.REFER,
        image_ref=image_ref,
        image_size=(width, height),
        instruction=BENCHMARKS[REC_BENCHMARK].fill(phrase),
        target=serialize_box(nb),
        gold=Gold(boxes=(nb,)) if eval_record else None,
        source_dataset=source,
        weak_label=weak,
    )


def make_rec_records(phrase, boxes, width, height, *, id, image_ref, **kwargs):
    """One record per annotated box; ids get ``-k`` suffixes when exploded."""
    boxes = list(boxes)
    if len(boxes) == 1:
        return [make_rec_record(phrase, boxes[0], width, height, id=id, image_ref=image_ref, **kwargs)]
    return [
        make_rec_record(phrase, b, width, height, id=f"{id}-{k}", image_ref=image_ref, **kwargs)
        for k, b in enumerate(boxes)
    ]


def _rec_payload(rec):
    phrase = BENCHMARKS[REC_BENCHMARK].match(rec.instruction)
    if phrase is None:
        raise ValidationError(f"record {rec.id}: REC instruction does not follow the REC template")
    if rec.gold is not None and rec.gold.boxes is not None:
        if len(rec.gold.boxes) != 1:
            raise ValidationError(f"record {rec.id}: multi-box REC records cannot be inverted")
        box = rec.gold.boxes[0]
    else:
        box = parse_box(rec.target)
    return phrase, box


def _reg_payload(reg):
    tmpl = BENCHMARKS[REG_BENCHMARK]
    box_text = tmpl.match(reg.instruction)
    if box_text is None:
        raise ValidationError(f"record {reg.id}: REG instruction does not follow the REG template")
    phrase = reg.target
    if not phrase and reg.gold is not None and reg.gold.answers:
        phrase = reg.gold.answers[0]
    return phrase, parse_box(box_text)


def invert_to_reg(rec):
    """Swap phrase -> box into box -> phrase.

    Applied to a REG record it performs the reverse swap, so applying it
    twice restores the original (phrase, box) payload.
    """
    if rec.task is TaskIdentifier.REFER:
        phrase, box = _rec_payload(rec)
        return replace(
            rec,
            id=rec.id + "-reg",
            task=TaskIdentifier.IDENTIFY,
            instruction=BENCHMARKS[REG_BENCHMARK].fill(serialize_box(box)),
            target=phrase,
            gold=None if rec.gold is None else Gold(answers=(phrase,)),
        )
    if rec.task is TaskIdentifier.IDENTIFY:
        phrase, box = _reg_payload(rec)
        new_id = rec.id[:-4] if rec.id.endswith("-reg") else rec.id + "-rec"
        return replace(
            rec,
            id=new_id,
            task=TaskIdentifier.REFER,
            instruction=BENCHMARKS[REC_BENCHMARK].fill(phrase),
            target=serialize_box(box),
            gold=None if rec.gold is None else Gold(boxes=(box,)),
        )
    raise ValidationError(f"record {rec.id}: only [refer] records can be inverted, got {rec.task.surface!r}")


def rec_payload(record):
    """``(phrase, box)`` carried by a REC or REG record."""
    if record.task is TaskIdentifier.REFER:
        return _rec_payload(record)
    if record.task is TaskIdentifier.IDENTIFY:
        return _reg_payload(record)
    raise ValidationError(f"record {record.id} is neither REC nor REG")


# -- grounded captions ---------------------------------------------------------


def grounded_of(record):
    """The grounded caption a record carries (gold first, then target)."""
    if record.gold is not None and record.gold.grounded is not None:
        return record.gold.grounded
    return parse_grounded(record.target)


def select_grounded_captions(items, min_phrases=MIN_GROUNDED_PHRASES, key=None):
    """Keep captions with at least ``min_phrases`` grounded spans, in order."""
    for item in items:
        g = item if key is None else key(item)
        if len(g.spans) >= min_phrases:
            yield item


def make_detection_records(g, mode, *, id, image_ref, image_size, source="", eval_record=False):
    """Object parsing and grounding records.

    ``caption`` mode: the whole plain caption in, the grounded caption out.
    ``phrase`` mode: one record per span, phrase in, ``<p>phrase</p>{boxes}`` out.
    """
    spans = g.spans
    if not spans:
        raise ValidationError(f"record {id}: detection records need at least one grounded phrase")
    if mode in ("caption", "caption-to-phrases"):
        return [CorpusRecord(
            id=id,
            task=TaskIdentifier.DETECTION,
            image_ref=image_ref,
            image_size=image_size,
            instruction=DETECTION_PREFIX + strip_grounding(g),
            target=emit_grounded(g),
            gold=Gold(grounded=g) if eval_record else None,
            source_dataset=source,
        )]
    if mode in ("phrase", "phrase-to-phrase"):
        out = []
        for k, span in enumerate(spans):
            single = GroundedText((GroundedSpan(span.phrase, span.boxes),))
            out.append(CorpusRecord(
                id=f"{id}-p{k}",
                task=TaskIdentifier.DETECTION,
                image_ref=image_ref,
                image_size=image_size,
                instruction=DETECTION_PREFIX + span.phrase,
                target=emit_grounded(single),
                gold=Gold(grounded=single) if eval_record else None,
                source_dataset=source,
            ))
        return out
    raise ValueError(f"unknown detection mode {mode!r}; expected 'caption' or 'phrase'")


# -- multi-round mixing --------------------------------------------------------


def build_multiround(records, turns_per_conv, seed):
    """Group same-image records from distinct tasks into conversations.

    Groups keyed by ``image_ref`` are visited in first-appearance order. Each
    group is shuffled with one seeded xoshiro256** stream, then greedily cut
    into conversations of up to ``turns_per_conv`` turns with pairwise
    distinct tasks. Conversations shorter than two turns are dropped and
    their records left unused, as are records without a target.
    """
    if turns_per_conv < 2:
        raise ValueError("turns_per_conv must be at least 2")
    groups = OrderedDict()
    for r in records:
        if r.target:
            groups.setdefault(r.image_ref, []).append(r)
    rng = Xoshiro256(seed)
    conversations = []
    for image_ref, group in groups.items():
        if len({r.task for r in group}) < 2:
            continue
        pool = list(group)
        rng.shuffle(pool)
        conv_index = 0
        while pool:
            taken = []
            tasks = set()
            rest = []
            for r in pool:
                if len(taken) < turns_per_conv and r.task not in tasks:
                    taken.append(r)
                    tasks.add(r.task)
                else:
                    rest.append(r)
            if len(taken) < 2:
                break
            conversations.append(ConversationRecord(
                id=f"{group[0].id}-mr{conv_index}",
                image_ref=image_ref,
                image_size=taken[0].image_size,
                turns=tuple(Turn(r.task, r.instruction, r.target, r.id) for r in taken),
            ))
            conv_index += 1
            pool = rest
    return conversations


def used_record_ids(conversations):
    return {t.source_id for c in conversations for t in c.turns}
