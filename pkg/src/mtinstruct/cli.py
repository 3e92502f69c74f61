"""Command-line front end.

Exit codes: 0 success, 1 data error, 2 usage or configuration error.
Every option can also be set through ``MTINSTRUCT_<OPTION>`` environment
variables (e.g. ``MTINSTRUCT_SEED=7``); explicit flags win.
"""

import argparse
from collections import OrderedDict
from dataclasses import dataclass, field
import datetime as _dt
import hashlib
import itertools
import json
import logging
import multiprocessing
import os
import sys

from . import __version__, kernels
from .corpus import (
    CorpusRecord,
    build_multiround,
    dumps,
    grounded_of,
    invert_to_reg,
    make_detection_records,
    make_rec_records,
    read_jsonl,
    record_from_json,
    select_grounded_captions,
    used_record_ids,
)
from .errors import (
    ConfigError,
    MTInstructError,
    ParseError,
    PlanValidationError,
    SchemaError,
    ValidationError,
)
from .geometry import ROUNDING_MODES, PixelBox, parse_box
from .grammar import (
    DEFAULT_IMAGE_SLOT,
    BenchmarkRegistry,
    PromptParts,
    TaskIdentifier,
    parse_prompt,
    render_prompt,
)
from .markup import emit_grounded, extract_pairs, parse_grounded

ENV_PREFIX = "MTINSTRUCT_"
EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("mtinstruct")


class UsageError(Exception):
    pass


# -- config & manifest ---------------------------------------------------------


def load_config(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def file_digest(path):
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
            size += len(chunk)
    return {"path": os.fspath(path), "sha256": h.hexdigest(), "bytes": size}


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: list
    config_hash: str
    seeds: dict
    inputs: list
    jobs: int = 1
    tool_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = None
    outputs: dict = field(default_factory=dict)

    def finish(self, **outputs):
        self.outputs.update(outputs)
        self.finished = _now()

    def to_json(self):
        return OrderedDict(
            tool_version=self.tool_version,
            command=self.command,
            config_hash=self.config_hash,
            seeds=self.seeds,
            inputs=self.inputs,
            jobs=self.jobs,
            kernel_backend=kernels.BACKEND,
            started=self.started,
            finished=self.finished,
            outputs=self.outputs,
        )

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _open_out(path):
    if path in (None, "-"):
        return _Unclosing(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="\n")


class _Unclosing:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def _manifest_path(args):
    if getattr(args, "manifest", None):
        return args.manifest
    if args.out and args.out != "-":
        return args.out + ".manifest.json"
    return None


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _registry(cfg):
    if "benchmarks_file" in cfg:
        return BenchmarkRegistry.from_file(cfg["benchmarks_file"])
    if "benchmarks" in cfg:
        return BenchmarkRegistry.from_mapping(cfg["benchmarks"])
    return None


# -- render / parse ------------------------------------------------------------


def cmd_render(args, cfg):
    try:
        task = TaskIdentifier.from_name(args.task)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    slot = args.image_slot or cfg.get("image_slot", DEFAULT_IMAGE_SLOT)
    try:
        parts = PromptParts(args.instruction, task, not args.no_image, slot)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    print(render_prompt(parts, separator=cfg.get("separator", " ")))
    return EXIT_OK


def cmd_parse(args, cfg):
    texts = [args.text] if args.text is not None else None
    if texts is None:
        if not args.input:
            raise UsageError("give TEXT or --in FILE")
        _require_file(args.input, "input")
        with open(args.input, encoding="utf-8") as fh:
            texts = [line.rstrip("\n") for line in fh if line.strip()]
    status = EXIT_OK
    with _open_out(args.out) as out:
        for text in texts:
            try:
                out.write(dumps(_parse_one(args.kind, text)) + "\n")
            except ParseError as exc:
                out.write(dumps({"error": type(exc).kind, "offset": exc.offset, "message": str(exc)}) + "\n")
                status = EXIT_DATA
    return status


def _parse_one(kind, text):
    if kind == "prompt":
        p = parse_prompt(text)
        return OrderedDict(
            identifier=p.identifier.surface, instruction=p.instruction,
            has_image=p.has_image, image_slot=p.image_slot if p.has_image else None,
        )
    if kind == "box":
        return {"box": list(parse_box(text))}
    g = parse_grounded(text)
    return OrderedDict(
        spans=[{"phrase": s.phrase, "boxes": [list(b) for b in s.boxes], "range": list(s.char_range)}
               for s in g.spans],
        pairs=[[ph, list(b)] for ph, b in extract_pairs(g)],
    )


# -- compile -------------------------------------------------------------------


def _t_rec(rec_obj, opts):
    obj = rec_obj
    for key in ("id", "image", "image_size", "phrase"):
        if key not in obj:
            raise ValidationError(f"annotation missing {key!r}")
    boxes = obj.get("boxes")
    if boxes is None and "bbox" in obj:
        boxes = [obj["bbox"]]
    if not boxes:
        raise ValidationError("annotation has no boxes")
    w, h = obj["image_size"]
    recs = make_rec_records(
        obj["phrase"], [PixelBox(*b) for b in boxes], w, h,
        id=obj["id"], image_ref=obj["image"], source=obj.get("source", ""),
        weak=bool(obj.get("weak", False)), eval_record=opts["eval"], rounding=opts["rounding"],
    )
    return [r.to_json() for r in recs]


def _t_reg(obj, opts):
    return [invert_to_reg(CorpusRecord.from_json(obj)).to_json()]


def _t_select(obj, opts):
    rec = CorpusRecord.from_json(obj)
    g = grounded_of(rec)
    return [obj] if list(select_grounded_captions([g], opts["min_phrases"])) else []


def _t_detection(obj, opts):
    rec = CorpusRecord.from_json(obj)
    recs = make_detection_records(
        grounded_of(rec), opts["mode"], id=rec.id, image_ref=rec.image_ref,
        image_size=rec.image_size, source=rec.source_dataset, eval_record=opts["eval"],
    )
    return [r.to_json() for r in recs]


TRANSFORMS = {"rec": _t_rec, "reg": _t_reg, "grounded-select": _t_select, "detection": _t_detection}


def _apply_chunk(payload):
    name, opts, chunk = payload
    fn = TRANSFORMS[name]
    results = []
    for lineno, line in chunk:
        try:
            obj = json.loads(line)
            results.append((lineno, [dumps(o) for o in fn(obj, opts)], None))
        except (json.JSONDecodeError, MTInstructError, KeyError, TypeError, ValueError) as exc:
            results.append((lineno, None, str(exc)))
    return results


def _numbered(fh):
    for lineno, line in enumerate(fh, 1):
        if line.strip():
            yield lineno, line


def _chunks(it, size):
    while True:
        chunk = list(itertools.islice(it, size))
        if not chunk:
            return
        yield chunk


def cmd_compile(args, cfg):
    _require_file(args.input, "input")
    opts = {
        "eval": args.eval,
        "rounding": args.rounding or cfg.get("rounding", "half-up"),
        "min_phrases": args.min_phrases,
        "mode": args.mode,
    }
    manifest = RunManifest(
        command=sys.argv[:1] + list(args.argv),
        config_hash=config_hash(cfg),
        seeds={"seed": args.seed},
        inputs=[file_digest(args.input)],
        jobs=args.jobs,
    )
    path = args.input
    if args.transform == "multiround":
        written, skipped = _compile_multiround(args, path)
    else:
        written, skipped = _compile_stream(args, opts, path)
    manifest.finish(records=written, skipped=skipped, path=args.out or "-")
    mpath = _manifest_path(args)
    if mpath:
        manifest.write(mpath)
    log.info("compile %s: %d records written, %d skipped", args.transform, written, skipped)
    return EXIT_OK


def _report(error, strict):
    if strict:
        raise error
    log.warning("skipping %s", error)


def _compile_stream(args, opts, path):
    written = skipped = 0
    with open(path, encoding="utf-8") as fh, _open_out(args.out) as out:
        chunks = ((args.transform, opts, c) for c in _chunks(_numbered(fh), 2048))
        if args.jobs > 1:
            pool = multiprocessing.get_context("spawn").Pool(args.jobs)
            results = pool.imap(_apply_chunk, chunks)
        else:
            pool = None
            results = map(_apply_chunk, chunks)
        try:
            for batch in results:
                for lineno, lines, err in batch:
                    if err is not None:
                        skipped += 1
                        _report(SchemaError(err, lineno, path), args.strict)
                        continue
                    for line in lines:
                        out.write(line)
                        out.write("\n")
                    written += len(lines)
        finally:
            if pool is not None:
                pool.terminate()
    return written, skipped


def _compile_multiround(args, path):
    skipped = 0
    records = []

    def on_error(err):
        nonlocal skipped
        skipped += 1
        log.warning("skipping %s", err)

    with open(path, encoding="utf-8") as fh:
        for _, rec in read_jsonl(fh, path=path, strict=args.strict, on_error=on_error,
                                 parse=CorpusRecord.from_json):
            records.append(rec)
    convs = build_multiround(records, args.turns, args.seed)
    written = 0
    with _open_out(args.out) as out:
        for c in convs:
            out.write(dumps(c.to_json()) + "\n")
            written += 1
        if args.keep_unused:
            used = used_record_ids(convs)
            for r in records:
                if r.id not in used:
                    out.write(dumps(r.to_json()) + "\n")
                    written += 1
    return written, skipped


# -- mix -----------------------------------------------------------------------


def cmd_mix(args, cfg):
    from dataclasses import replace

    from .mixer import StagePlan, compile_stage, validate_plan

    if args.steps is not None and args.steps < 1:
        raise UsageError(f"--steps must be a positive integer, got {args.steps}")
    _require_file(args.plan, "plan")
    plan = StagePlan.load(args.plan)
    if args.steps is not None:
        plan = replace(plan, total_steps=args.steps)
    if args.seed is not None:
        plan = replace(plan, seed=args.seed)
    validate_plan(plan, strict_paper=args.strict_paper)
    if not args.out:
        raise UsageError("mix needs --out")
    for e in plan.active:
        _require_file(e.path, f"shard for {e.dataset}")

    manifest = RunManifest(
        command=sys.argv[:1] + list(args.argv),
        config_hash=config_hash(cfg),
        seeds={"seed": plan.seed},
        inputs=[file_digest(args.plan)] + [file_digest(e.path) for e in plan.active],
        jobs=args.jobs,
    )
    trace_path = args.trace or args.out + ".trace.jsonl"
    counts = {}

    def write_trace(trace, ids):
        counts.update(trace.counts())
        with open(trace_path, "w", encoding="utf-8", newline="\n") as tf:
            for line in trace.lines(ids):
                tf.write(line + "\n")

    def on_error(err):
        log.warning("skipping %s", err)

    slot = args.image_slot or cfg.get("image_slot", DEFAULT_IMAGE_SLOT)
    written = 0
    with _open_out(args.out) as out:
        for line in compile_stage(plan, strict=args.strict, on_error=on_error, image_slot=slot,
                                  trace_out=write_trace):
            out.write(line + "\n")
            written += 1
    manifest.finish(records=written, path=args.out, trace=trace_path, per_dataset=counts)
    mpath = _manifest_path(args)
    if mpath:
        manifest.write(mpath)
    log.info("mix stage %d: %d records", plan.stage, written)
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def cmd_eval(args, cfg):
    from .metrics import ChairLexicon, run_eval

    _require_file(args.gold, "eval set")
    _require_file(args.pred, "predictions file")
    registry = _registry(cfg)
    lexicon_path = args.lexicon or cfg.get("lexicon")
    lexicon = ChairLexicon.from_file(lexicon_path) if lexicon_path else None
    inclusive = args.inclusive or bool(cfg.get("iou_inclusive", False))
    with open(args.gold, encoding="utf-8") as gf, open(args.pred, encoding="utf-8") as pf:
        report = run_eval(gf, pf, args.benchmark, registry=registry, lexicon=lexicon, inclusive=inclusive,
                          eval_path=args.gold, pred_path=args.pred, norm=cfg.get("answer_normalization"))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report.to_json(), fh, indent=2)
            fh.write("\n")
        text_path = os.path.splitext(args.out)[0] + ".txt"
        with open(text_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_text())
    for name, value in report.metrics.items():
        print(f"{name}: {value:.4f}")
    return EXIT_OK


# -- tensors -------------------------------------------------------------------


def cmd_tensors(args, cfg):
    import numpy as np

    from .tensorops import PosTable, TokenGrid, group_tokens, interpolate_pos, load_array, save_array

    _require_file(args.input, "input")
    if not args.out:
        raise UsageError("tensors needs --out")
    a = load_array(args.input)
    h, w, d = a.shape
    if args.op == "group":
        out = group_tokens(TokenGrid(a.reshape(h * w, d), h, w), args.mode)
        save_array(args.out, out.tokens.reshape(out.h, out.w, out.d))
    else:
        if args.side is None or args.side < 1:
            raise UsageError("interp needs --side >= 1")
        if args.has_cls:
            table = PosTable.from_sequence(a.reshape(h * w, d), has_cls=True)
            res = interpolate_pos(table, args.side)
            seq = res.to_sequence()
            save_array(args.out, seq.reshape(1, seq.shape[0], d))
        else:
            if h != w:
                raise UsageError(f"positional grid must be square, got {h}x{w}")
            res = interpolate_pos(PosTable(a), args.side)
            save_array(args.out, np.asarray(res.grid))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--out", help="output file ('-' or omitted: stdout where supported)")
    g.add_argument("--strict", action="store_true", help="fail fast on the first bad record")
    g.add_argument("--jobs", type=int, default=1, help="worker processes (order is preserved)")
    g.add_argument("--manifest", help="run manifest path (default OUT.manifest.json)")
    g.add_argument("--log-level", default="INFO")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="mtinstruct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common], help="render one instruction prompt")
    p.add_argument("--task", default="none", help="vqa, caption, grounding, refer, identify, detection or none")
    p.add_argument("--instruction", required=True)
    p.add_argument("--no-image", action="store_true")
    p.add_argument("--image-slot")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("parse", parents=[common], help="parse a prompt, box or grounded caption")
    p.add_argument("text", nargs="?")
    p.add_argument("--in", dest="input")
    p.add_argument("--kind", choices=("prompt", "box", "grounded"), default="prompt")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("compile", parents=[common], help="apply a dataset-construction transform")
    p.add_argument("transform", choices=sorted(TRANSFORMS) + ["multiround"])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--eval", action="store_true", help="attach gold answers (evaluation records)")
    p.add_argument("--rounding", choices=ROUNDING_MODES)
    p.add_argument("--min-phrases", type=int, default=5)
    p.add_argument("--mode", choices=("caption", "phrase"), default="caption")
    p.add_argument("--turns", type=int, default=3)
    p.add_argument("--keep-unused", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("mix", parents=[common], help="sample and render one training stage")
    p.add_argument("--plan", required=True)
    p.add_argument("--strict-paper", action="store_true", help="enforce the three-stage inclusion matrix")
    p.add_argument("--steps", type=int)
    p.add_argument("--trace")
    p.add_argument("--image-slot")
    p.set_defaults(func=cmd_mix, seed=None)

    p = sub.add_parser("eval", parents=[common], help="score predictions")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--gold", "--eval-set", dest="gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--inclusive", action="store_true", help="count IoU == 0.5 as correct")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tensors", parents=[common], help="token grouping / positional interpolation")
    p.add_argument("op", choices=("group", "interp"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=("row-major-4", "block-2x2"), default="row-major-4")
    p.add_argument("--side", type=int)
    p.add_argument("--has-cls", action="store_true")
    p.set_defaults(func=cmd_tensors)

    _apply_env(parser, os.environ)
    return parser


def _truthy(value):
    return value.strip().lower() in ("1", "true", "yes", "on")


def _apply_env(parser, environ):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for subparser in action.choices.values():
                _apply_env(subparser, environ)
            continue
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        value = environ.get(ENV_PREFIX + action.dest.upper())
        if value is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = _truthy(value)
        elif action.type is not None:
            action.default = action.type(value)
        else:
            action.default = value
        action.required = False


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlanValidationError as exc:
        print("error: plan rejected:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MTInstructError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
