"""Three-stage training plans and the deterministic weighted sampler.

Sampling contract, step by step:

* the main stream is xoshiro256** seeded from the plan seed via splitmix64;
  each step takes one 64-bit output and maps it through a Vose alias table
  built over the included, positive-weight entries (in plan order);
* the j-th such entry owns a record stream equal to the main stream's
  initial state jumped ``j + 1`` times; it walks Fisher-Yates permutations
  of its shard, drawing a new one on exhaustion.
"""

from dataclasses import dataclass
import json
import math
import os
import re

import numpy as np

from . import kernels
from .corpus import ConversationRecord, dumps, read_jsonl
from .errors import PlanValidationError, SchemaError, ValidationError
from .grammar import (
    DEFAULT_IMAGE_SLOT,
    INST_CLOSE,
    INST_OPEN,
    PromptParts,
    TaskIdentifier,
    render_prompt,
    split_identifier,
)
from .rng import MASK64, Xoshiro256, build_alias_table

# Data-type rows and the training stages in which each is used.
STAGE_MATRIX = {
    "weakly-labeled": frozenset({1}),
    "grounded-caption": frozenset({1}),
    "caption": frozenset({1, 2, 3}),
    "rec": frozenset({1, 2, 3}),
    "reg": frozenset({1, 2, 3}),
    "vqa": frozenset({1, 2, 3}),
    "multimodal-instruction": frozenset({3}),
    "language": frozenset({3}),
}

_KNOWN_DATASETS = {
    "weakly-labeled": [
        "GRIT-20M", "GRIT-20M (REC)", "GRIT-20M (REG)", "GRIT-20M-REC", "GRIT-20M-REG",
        "GRIT-20M weak", "LAION", "CC3M", "SBU",
    ],
    "grounded-caption": ["GRIT-20M grounded caption", "GRIT-20M-grounded", "GRIT-20M (grounded caption)"],
    "caption": ["COCO caption", "COCO", "Text Captions", "TextCaps"],
    "rec": ["RefCOCO", "RefCOCO+", "RefCOCOg", "Visual Genome", "VG"],
    "reg": ["RefCOCO-REG", "RefCOCO+-REG", "RefCOCOg-REG", "RefCOCO (REG)", "RefCOCO+ (REG)", "RefCOCOg (REG)"],
    "vqa": ["GQA", "VQAv2", "VQA-v2", "OCR-VQA", "OK-VQA", "OKVQA", "AOK-VQA", "A-OKVQA"],
    "multimodal-instruction": [
        "LLaVA", "LLaVA detail", "LLaVA reasoning", "Flickr30k", "Flickr30k grounded caption",
        "Flickr30k detection", "Multi-task conversation", "multitask-conversation",
    ],
    "language": ["Unnatural Instructions", "Unnatural Instruction"],
}


def dataset_key(name):
    return re.sub(r"[^a-z0-9]", "", name.lower().replace("+", "plus"))


DATASET_CATEGORIES = {dataset_key(n): cat for cat, names in _KNOWN_DATASETS.items() for n in names}


def dataset_category(name, override=None):
    if override is not None:
        return override
    return DATASET_CATEGORIES.get(dataset_key(name))


@dataclass(frozen=True)
class PlanEntry:
    dataset: str
    weight: float = 1.0
    included: bool = True
    path: str = None
    category: str = None


@dataclass(frozen=True)
class StagePlan:
    stage: int
    entries: tuple
    seed: int = 0
    total_steps: int = 1
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def active(self):
        """Included entries with positive weight, in plan order."""
        return [e for e in self.entries if e.included and e.weight > 0]

    @classmethod
    def from_mapping(cls, obj, base_dir=None):
        """Build from a config mapping: ``stage``, ``seed``, ``steps``,
        ``entries: [{dataset, path, weight, included, category?}]``."""
        if not isinstance(obj, dict):
            raise PlanValidationError(["plan must be a JSON object"])
        try:
            entries = []
            for e in obj.get("entries", []):
                path = e.get("path")
                if path is not None and base_dir is not None and not os.path.isabs(path):
                    path = os.path.join(base_dir, path)
                entries.append(PlanEntry(
                    dataset=e["dataset"],
                    weight=e.get("weight", 1.0),
                    included=e.get("included", True),
                    path=path,
                    category=e.get("category"),
                ))
            return cls(
                stage=obj.get("stage"),
                entries=entries,
                seed=obj.get("seed", 0),
                total_steps=obj.get("steps", 1),
                name=obj.get("name", ""),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise PlanValidationError([f"malformed plan entry: {exc}"]) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlanValidationError([f"{path}: invalid JSON: {exc}"]) from None
        return cls.from_mapping(obj, os.path.dirname(os.path.abspath(path)))


def plan_violations(p, strict_paper=False):
    """All structural (and, optionally, inclusion-matrix) problems."""
    problems = []
    if p.stage not in (1, 2, 3) or isinstance(p.stage, bool):
        problems.append(f"stage must be 1, 2 or 3, got {p.stage!r}")
    if isinstance(p.seed, bool) or not isinstance(p.seed, int) or not 0 <= p.seed <= MASK64:
        problems.append(f"seed must be a 64-bit unsigned integer, got {p.seed!r}")
    if isinstance(p.total_steps, bool) or not isinstance(p.total_steps, int) or p.total_steps < 1:
        problems.append(f"steps must be a positive integer, got {p.total_steps!r}")
    seen = set()
    for e in p.entries:
        if not isinstance(e.dataset, str) or not e.dataset:
            problems.append(f"dataset name must be a non-empty string, got {e.dataset!r}")
            continue
        if e.dataset in seen:
            problems.append(f"duplicate dataset {e.dataset!r}")
        seen.add(e.dataset)
        w = e.weight
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not math.isfinite(w) or w < 0:
            problems.append(f"{e.dataset}: weight must be a finite non-negative number, got {w!r}")
        if not isinstance(e.included, bool):
            problems.append(f"{e.dataset}: included must be a boolean")
        if e.category is not None and e.category not in STAGE_MATRIX:
            problems.append(f"{e.dataset}: unknown category {e.category!r}")
    if not problems and not p.active:
        problems.append("plan has no included dataset with positive weight")
    if strict_paper and p.stage in (1, 2, 3):
        for e in p.entries:
            if not e.included or not isinstance(e.dataset, str):
                continue
            cat = dataset_category(e.dataset, e.category)
            if cat is None:
                problems.append(f"({e.dataset}, stage {p.stage}): unknown dataset; give it a category")
            elif cat in STAGE_MATRIX and p.stage not in STAGE_MATRIX[cat]:
                problems.append(f"({e.dataset}, stage {p.stage}): {cat} data is not used in stage {p.stage}")
    return problems


def validate_plan(p, strict_paper=False):
    problems = plan_violations(p, strict_paper)
    if problems:
        raise PlanValidationError(problems)
    return p


@dataclass(eq=False)
class SampleTrace:
    names: list
    choices: np.ndarray
    records: np.ndarray

    def __len__(self):
        return len(self.choices)

    def __eq__(self, other):
        return (
            isinstance(other, SampleTrace)
            and self.names == other.names
            and np.array_equal(self.choices, other.choices)
            and np.array_equal(self.records, other.records)
        )

    def __iter__(self):
        names = self.names
        for step, (d, r) in enumerate(zip(self.choices.tolist(), self.records.tolist())):
            yield step, names[d], r

    def counts(self):
        tally = np.bincount(self.choices, minlength=len(self.names))
        return {name: int(c) for name, c in zip(self.names, tally)}

    def frequencies(self):
        n = len(self)
        return {name: c / n for name, c in self.counts().items()}

    def lines(self, ids=None):
        """JSONL rows ``{"step", "dataset", "record"[, "id"]}``."""
        for step, name, r in self:
            row = {"step": step, "dataset": name, "record": r}
            if ids is not None:
                row["id"] = ids[name][r]
            yield dumps(row)


def stream_states(seed, k):
    """Main alias-draw state and ``k`` per-dataset states (jumped copies)."""
    main = Xoshiro256(seed)
    states = []
    g = main.copy()
    for _ in range(k):
        g.jump()
        states.append(g.state)
    return main.state, states


def sample_schedule(p, catalogs, steps=None):
    """Draw the dataset/record trace for a plan.

    ``catalogs`` maps every included dataset to its record count.
    """
    validate_plan(p)
    known = {e.dataset for e in p.entries}
    unknown = sorted(set(catalogs) - known)
    if unknown:
        raise ValidationError(f"catalog names not in plan: {', '.join(unknown)}")
    active = p.active
    for e in active:
        if e.dataset not in catalogs:
            raise ValidationError(f"no catalog entry for included dataset {e.dataset!r}")
        if int(catalogs[e.dataset]) < 1:
            raise ValidationError(f"dataset {e.dataset!r} has no records")
    steps = p.total_steps if steps is None else steps
    prob, alias = build_alias_table([float(e.weight) for e in active])
    main_state, states = stream_states(p.seed, len(active))
    choices, _ = kernels.alias_draws(main_state, np.asarray(prob), np.asarray(alias, dtype=np.int64), steps)
    counts = np.asarray([int(catalogs[e.dataset]) for e in active], dtype=np.int64)
    records = kernels.assign_records(choices, counts, states)
    return SampleTrace([e.dataset for e in active], np.asarray(choices, dtype=np.int64), np.asarray(records))


class ShardIndex:
    """Byte offsets of the valid records in one JSONL shard.

    Memory is 8 bytes per record; records are re-read on demand.
    """

    def __init__(self, path, strict=True, on_error=None):
        self.path = path
        offsets = []
        ids = []
        with open(path, "rb") as fh:
            lineno = 0
            pos = fh.tell()
            for raw in iter(fh.readline, b""):
                lineno += 1
                start = pos
                pos += len(raw)
                if not raw.strip():
                    continue
                try:
                    line = raw.decode("utf-8")
                    (_, rec), = read_jsonl([line], path=path, strict=True)
                except UnicodeDecodeError as exc:
                    err = SchemaError(str(exc), lineno, path)
                except SchemaError as exc:
                    err = SchemaError(str(exc).split(": ", 1)[-1], lineno, path)
                else:
                    offsets.append(start)
                    ids.append(rec.id)
                    continue
                if strict:
                    raise err
                if on_error is not None:
                    on_error(err)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.ids = ids

    def __len__(self):
        return len(self.offsets)

    def fetch(self, fh, index):
        fh.seek(int(self.offsets[index]))
        (_, rec), = read_jsonl([fh.readline().decode("utf-8")], path=self.path)
        return rec


def render_record(rec, image_slot=DEFAULT_IMAGE_SLOT):
    """``(prompt, target, task surface)`` for a corpus or conversation record.

    Conversations render as alternating ``[INST] ... [/INST] answer`` turns;
    only the first turn carries the image block, and the final answer is
    the target.
    """
    has_image = bool(rec.image_ref)
    if isinstance(rec, ConversationRecord):
        pieces = []
        for k, turn in enumerate(rec.turns):
            text = _strip_own_identifier(turn.task, turn.instruction)
            if k == 0:
                pieces.append(render_prompt(_parts(rec.id, turn.task, text, has_image, image_slot)))
            else:
                ident = turn.task.surface + " " if turn.task is not TaskIdentifier.NONE else ""
                pieces.append(f"{INST_OPEN} {ident}{text} {INST_CLOSE}")
            if k < len(rec.turns) - 1:
                pieces.append(turn.target)
        last = rec.turns[-1]
        return " ".join(pieces), last.target, last.task.surface
    text = _strip_own_identifier(rec.task, rec.instruction)
    return render_prompt(_parts(rec.id, rec.task, text, has_image, image_slot)), rec.target, rec.task.surface


def _strip_own_identifier(task, instruction):
    ident, rest = split_identifier(instruction)
    return rest if ident is task and task is not TaskIdentifier.NONE else instruction


def _parts(rec_id, task, text, has_image, slot):
    try:
        return PromptParts(text, task, has_image, slot)
    except ValidationError as exc:
        raise ValidationError(f"record {rec_id}: {exc}") from None


def compile_stage(p, shards=None, *, strict=True, on_error=None, image_slot=DEFAULT_IMAGE_SLOT,
                  trace_out=None):
    """Yield one JSONL line per sampled record, in trace order.

    ``shards`` maps dataset name to JSONL path and defaults to the plan
    entries' paths. ``trace_out``, if given, is a callable fed the trace.
    """
    validate_plan(p)
    shards = dict(shards or {})
    for e in p.active:
        shards.setdefault(e.dataset, e.path)
    indexes = {}
    for e in p.active:
        path = shards.get(e.dataset)
        if not path:
            raise ValidationError(f"no shard path for included dataset {e.dataset!r}")
        idx = ShardIndex(path, strict=strict, on_error=on_error)
        if len(idx) == 0:
            raise SchemaError(f"shard for included dataset {e.dataset!r} has no valid records", path=path)
        indexes[e.dataset] = idx
    trace = sample_schedule(p, {name: len(idx) for name, idx in indexes.items()})
    if trace_out is not None:
        trace_out(trace, {name: idx.ids for name, idx in indexes.items()})
    handles = {name: open(idx.path, "rb") for name, idx in indexes.items()}
    try:
        for _, name, r in trace:
            rec = indexes[name].fetch(handles[name], r)
            prompt, target, task = render_record(rec, image_slot)
            yield dumps({"prompt": prompt, "target": target, "task": task, "source": name})
    finally:
        for fh in handles.values():
            fh.close()
