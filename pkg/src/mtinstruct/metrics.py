"""Scoring: REC accuracy, VQA top-1 accuracy, CHAIR hallucination rates.

Scorers never raise on model output; malformed output is simply wrong.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from importlib import resources
import json
import logging
import re
import string

import numpy as np

from . import kernels
from .corpus import CorpusRecord, read_jsonl
from .errors import ConfigError, SchemaError
from .geometry import find_first_box, iou
from .grammar import BENCHMARKS
from .markup import strip_grounding_lenient

log = logging.getLogger(__name__)

REC_THRESHOLD = 0.5
ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = str.maketrans("", "", string.punctuation)
_WS = re.compile(r"\s+")


# -- REC -----------------------------------------------------------------------


def passes_threshold(value, inclusive=False, threshold=REC_THRESHOLD):
    return value >= threshold if inclusive else value > threshold


def score_rec(output, gold, inclusive=False):
    """Correct iff the first well-formed box in ``output`` has IoU > 0.5
    with ``gold`` (>= with ``inclusive``)."""
    box = find_first_box(output)
    return box is not None and passes_threshold(iou(box, gold), inclusive)


# -- VQA -----------------------------------------------------------------------


def normalize_answer(s, *, lowercase=True, strip_punctuation=True, collapse_whitespace=True,
                     drop_articles=True):
    """Canonical answer text; every step can be switched off.

    Leading articles are dropped only while another word follows, so a bare
    "a" (a multiple-choice option, say) survives.
    """
    if lowercase:
        s = s.lower()
    if strip_punctuation:
        s = s.translate(_PUNCT)
    if collapse_whitespace:
        s = _WS.sub(" ", s)
    s = s.strip()
    if drop_articles:
        words = s.split()
        k = 0
        while len(words) - k > 1 and words[k].lower() in ARTICLES:
            k += 1
        for _ in range(k):
            s = s.split(None, 1)[1]
    return s


def score_vqa(output, answers, **norm):
    pred = normalize_answer(output, **norm)
    return any(pred == normalize_answer(a, **norm) for a in answers)


# -- CHAIR ---------------------------------------------------------------------

_IRREGULAR = {
    "men": "man", "women": "woman", "children": "child", "mice": "mouse", "knives": "knife",
    "teeth": "tooth", "feet": "foot", "geese": "goose", "oxen": "ox", "wolves": "wolf",
    "calves": "calf", "leaves": "leaf", "shelves": "shelf", "ladies": "lady", "babies": "baby",
}
_TOKEN = re.compile(r"[a-z0-9]+")


def _singular_candidates(word):
    if word in _IRREGULAR:
        yield _IRREGULAR[word]
    if word.endswith("s") and not word.endswith("ss"):
        yield word[:-1]
    if word.endswith("es"):
        yield word[:-2]
    if word.endswith("ies"):
        yield word[:-3] + "y"
    if word.endswith("ves"):
        yield word[:-3] + "f"
        yield word[:-3] + "fe"


@dataclass
class ChairLexicon:
    vocabulary: frozenset
    synonyms: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vocabulary = frozenset(v.lower() for v in self.vocabulary)
        self.synonyms = {k.lower(): v.lower() for k, v in self.synonyms.items()}
        bad = sorted(k for k, v in self.synonyms.items() if v not in self.vocabulary)
        if bad:
            raise ConfigError(f"synonyms map outside the vocabulary: {', '.join(bad)}")
        surfaces = {v: v for v in self.vocabulary}
        surfaces.update(self.synonyms)
        self._words = {w for s in surfaces for w in s.split()}
        self._phrases = {tuple(self._fold(w) for w in s.split()): c for s, c in surfaces.items()}
        self._max_len = max((len(p) for p in self._phrases), default=1)

    @classmethod
    def default(cls):
        data = json.loads(resources.files("mtinstruct.data").joinpath("chair_lexicon.json").read_text("utf-8"))
        return cls(frozenset(data["vocabulary"]), data.get("synonyms", {}))

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            return cls(frozenset(data["vocabulary"]), data.get("synonyms", {}))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load CHAIR lexicon {path}: {exc}") from None

    def _fold(self, word):
        if word in self._words:
            return word
        for cand in _singular_candidates(word):
            if cand in self._words:
                return cand
        return word

    def mentions(self, caption):
        """Distinct canonical objects mentioned, longest phrase first."""
        tokens = [self._fold(t) for t in _TOKEN.findall(caption.lower())]
        found = set()
        i = 0
        while i < len(tokens):
            for n in range(min(self._max_len, len(tokens) - i), 0, -1):
                hit = self._phrases.get(tuple(tokens[i:i + n]))
                if hit is not None:
                    found.add(hit)
                    i += n
                    break
            else:
                i += 1
        return found


@dataclass
class ChairScores:
    chair_i: float
    chair_s: float
    length: float
    mentioned: list
    hallucinated: list


def score_chair(captions, lexicon):
    """CHAIR_i, CHAIR_s and mean whitespace length over ``(caption, gold)`` pairs."""
    mentioned, hallucinated, lengths = [], [], []
    for caption, gold in captions:
        gold = {g.lower() for g in gold}
        outside = sorted(gold - lexicon.vocabulary)
        if outside:
            raise ConfigError(f"gold objects outside the CHAIR vocabulary: {', '.join(outside)}")
        m = lexicon.mentions(caption)
        mentioned.append(m)
        hallucinated.append(m - gold)
        lengths.append(len(caption.split()))
    n_mentioned = sum(len(m) for m in mentioned)
    n_hall = sum(len(h) for h in hallucinated)
    n = len(mentioned)
    return ChairScores(
        chair_i=n_hall / n_mentioned if n_mentioned else 0.0,
        chair_s=sum(1 for h in hallucinated if h) / n if n else 0.0,
        length=sum(lengths) / n if n else 0.0,
        mentioned=mentioned,
        hallucinated=hallucinated,
    )


# -- evaluation run ------------------------------------------------------------


@dataclass
class EvalReport:
    benchmark: str
    kind: str
    metrics: dict
    verdicts: "OrderedDict[str, bool]"
    counts: dict
    warnings: list = field(default_factory=list)

    def to_json(self):
        return {
            "benchmark": self.benchmark,
            "kind": self.kind,
            "metrics": self.metrics,
            "counts": self.counts,
            "verdicts": [{"id": k, "correct": v} for k, v in self.verdicts.items()],
            "warnings": self.warnings,
        }

    def to_text(self):
        rows = [("benchmark", self.benchmark), ("kind", self.kind)]
        rows += [(k, f"{v:.4f}") for k, v in self.metrics.items()]
        rows += [(k, str(v)) for k, v in self.counts.items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def benchmark_kind(benchmark, registry=None):
    if benchmark.lower() == "chair":
        return "chair"
    return (registry or BENCHMARKS)[benchmark].kind


def load_predictions(lines, path=None):
    """``{"id": ..., "output": ...}`` rows into a dict; duplicates are errors."""
    preds = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            pid, output = obj["id"], obj["output"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaError(f"bad prediction row: {exc}", lineno, path) from None
        if not isinstance(output, str):
            raise SchemaError("prediction output must be a string", lineno, path)
        if pid in preds:
            raise SchemaError(f"duplicate prediction id {pid!r}", lineno, path)
        preds[pid] = output
    return preds


def run_eval(eval_lines, pred_lines, benchmark, *, registry=None, lexicon=None, inclusive=False,
             eval_path=None, pred_path=None, norm=None):
    """Score predictions against an evaluation set.

    ``eval_lines`` / ``pred_lines`` are iterables of JSONL lines. Missing
    predictions count as incorrect and are reported as warnings.
    """
    kind = benchmark_kind(benchmark, registry)
    norm = norm or {}
    preds = load_predictions(pred_lines, pred_path)
    warnings = []
    verdicts = OrderedDict()
    seen = set()
    rec_ids, rec_pred, rec_gold = [], [], []
    chair_ids, chair_items = [], []
    missing = 0
    for lineno, rec in read_jsonl(eval_lines, path=eval_path, parse=CorpusRecord.from_json):
        if rec.id in seen:
            raise SchemaError(f"duplicate eval id {rec.id!r}", lineno, eval_path)
        seen.add(rec.id)
        if rec.gold is None:
            raise SchemaError(f"eval record {rec.id!r} has no gold", lineno, eval_path)
        output = preds.get(rec.id)
        if output is None:
            missing += 1
            warnings.append(f"missing prediction for {rec.id}")
            if kind != "chair":
                verdicts[rec.id] = False
            continue
        if kind == "rec":
            if rec.gold.boxes is None:
                raise SchemaError(f"REC record {rec.id!r} needs gold boxes", lineno, eval_path)
            box = find_first_box(output)
            verdicts[rec.id] = False
            if box is not None:
                rec_ids.append(rec.id)
                rec_pred.append(tuple(box))
                rec_gold.append(tuple(rec.gold.boxes[0]))
        elif kind == "chair":
            if rec.gold.objects is None:
                raise SchemaError(f"CHAIR record {rec.id!r} needs gold objects", lineno, eval_path)
            chair_ids.append(rec.id)
            chair_items.append((strip_grounding_lenient(output), rec.gold.objects))
        else:
            if rec.gold.answers is None:
                raise SchemaError(f"record {rec.id!r} needs gold answers", lineno, eval_path)
            verdicts[rec.id] = score_vqa(output, rec.gold.answers, **norm)

    extra = sorted(set(preds) - seen)
    for pid in extra:
        warnings.append(f"prediction {pid} has no eval record")

    metrics = OrderedDict()
    if kind == "rec" and rec_ids:
        ious = kernels.iou_pairs(np.asarray(rec_pred, dtype=np.float64), np.asarray(rec_gold, dtype=np.float64))
        for rid, value in zip(rec_ids, ious.tolist()):
            verdicts[rid] = passes_threshold(value, inclusive)
    if kind == "chair":
        scores = score_chair(chair_items, lexicon or ChairLexicon.default())
        for rid, h in zip(chair_ids, scores.hallucinated):
            verdicts[rid] = not h
        metrics["CHAIR_i"] = scores.chair_i
        metrics["CHAIR_s"] = scores.chair_s
        metrics["Len"] = scores.length
    else:
        total = len(verdicts)
        correct = sum(verdicts.values())
        metrics["accuracy"] = correct / total if total else 0.0
    for w in warnings:
        log.warning(w)
    counts = OrderedDict(
        total=len(seen),
        scored=len(verdicts),
        correct=sum(verdicts.values()),
        missing=missing,
        extra=len(extra),
    )
    return EvalReport(benchmark, kind, dict(metrics), verdicts, dict(counts), warnings)
