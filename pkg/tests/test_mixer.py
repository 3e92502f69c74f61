import json

from hypothesis import given, settings, strategies as st
import pytest

from mtinstruct.corpus import ConversationRecord, CorpusRecord, Turn, dumps, make_rec_record
from mtinstruct.errors import PlanValidationError, SchemaError, ValidationError
from mtinstruct.geometry import PixelBox
from mtinstruct.grammar import TaskIdentifier as T
from mtinstruct.mixer import (
    STAGE_MATRIX,
    PlanEntry,
    StagePlan,
    compile_stage,
    dataset_category,
    plan_violations,
    render_record,
    sample_schedule,
    validate_plan,
)

from fixtures import STAGE_ROWS


def plan(*entries, stage=1, seed=0, steps=10):
    return StagePlan(stage, [e if isinstance(e, PlanEntry) else PlanEntry(*e) for e in entries], seed, steps)


def test_matrix_matches_table():
    assert set(STAGE_MATRIX) == set(STAGE_ROWS)
    for cat, (names, marks) in STAGE_ROWS.items():
        assert STAGE_MATRIX[cat] == {s for s, m in zip((1, 2, 3), marks) if m}
        for name in names:
            assert dataset_category(name) == cat, name


@pytest.mark.parametrize("cat", sorted(STAGE_ROWS))
@pytest.mark.parametrize("stage", [1, 2, 3])
def test_strict_cell(cat, stage):
    names, marks = STAGE_ROWS[cat]
    p = plan(*[(n, 1.0) for n in names], stage=stage)
    problems = plan_violations(p, strict_paper=True)
    if marks[stage - 1]:
        assert problems == []
    else:
        assert len(problems) == len(names)
        assert all(f"stage {stage}" in m for m in problems)
        assert names[0] in problems[0]
    assert plan_violations(p, strict_paper=False) == []


def test_examples():
    with pytest.raises(PlanValidationError) as exc:
        validate_plan(plan(("GRIT-20M weak", 1.0), ("RefCOCO", 1.0), stage=2), strict_paper=True)
    assert exc.value.violations == [
        "(GRIT-20M weak, stage 2): weakly-labeled data is not used in stage 2"
    ]
    validate_plan(plan(("Unnatural Instructions", 1.0), stage=3), strict_paper=True)
    with pytest.raises(PlanValidationError):
        validate_plan(plan(("RefCOCO", 0.0), ("GQA", 0.0)))


def test_excluded_entries_are_not_checked():
    p = plan(PlanEntry("LAION", 1.0, included=False), ("GQA", 1.0), stage=2)
    assert plan_violations(p, strict_paper=True) == []


def test_structural_checks():
    assert plan_violations(plan(("a", -1.0)))
    assert plan_violations(plan(("a", 1.0), ("a", 2.0)))
    assert plan_violations(plan(("a", 1.0), stage=4))
    assert plan_violations(plan(("a", 1.0), steps=0))
    assert plan_violations(plan(("a", float("nan"))))
    assert plan_violations(plan(PlanEntry("a", category="bogus")))
    assert "unknown dataset" in plan_violations(plan(("MyData", 1.0)), strict_paper=True)[0]
    assert plan_violations(plan(PlanEntry("MyData", category="vqa")), strict_paper=True) == []


def test_shipped_example_plans(tmp_path):
    from importlib import resources

    root = resources.files("mtinstruct.data").joinpath("plans")
    for k in (1, 2, 3):
        obj = json.loads(root.joinpath(f"stage{k}.json").read_text("utf-8"))
        assert "illustrative" in obj["note"].lower()
        p = StagePlan.from_mapping(obj, str(tmp_path))
        assert plan_violations(p, strict_paper=True) == []
        cats = {dataset_category(e.dataset) for e in p.active}
        assert cats == {c for c, stages in STAGE_MATRIX.items() if k in stages}


def test_single_dataset():
    t = sample_schedule(plan(("only", 3.0), steps=25), {"only": 4})
    assert t.counts() == {"only": 25}
    assert len(t) == 25


def test_deterministic_and_seed_sensitive():
    p = plan(("a", 0.7), ("b", 0.2), ("c", 0.1), steps=2000, seed=5)
    cat = {"a": 10, "b": 3, "c": 7}
    t1, t2 = sample_schedule(p, cat), sample_schedule(p, cat)
    assert t1 == t2
    assert list(t1.lines()) == list(t2.lines())
    other = sample_schedule(plan(("a", 0.7), ("b", 0.2), ("c", 0.1), steps=2000, seed=6), cat)
    assert other != t1


def test_frequencies_converge():
    p = plan(("a", 0.7), ("b", 0.2), ("c", 0.1), steps=200_000, seed=1)
    f = sample_schedule(p, {"a": 1, "b": 1, "c": 1}).frequencies()
    for name, w in zip("abc", (0.7, 0.2, 0.1)):
        assert abs(f[name] - w) < 0.005


def test_unnormalized_weights_equivalent():
    cat = {"a": 3, "b": 3}
    t1 = sample_schedule(plan(("a", 7), ("b", 3), steps=500), cat)
    t2 = sample_schedule(plan(("a", 0.7), ("b", 0.3), steps=500), cat)
    assert t1 == t2


@given(st.lists(st.integers(1, 9), min_size=1, max_size=4), st.integers(0, 2**64 - 1))
@settings(max_examples=50)
def test_epoch_fairness(counts, seed):
    names = [f"d{i}" for i in range(len(counts))]
    p = plan(*[(n, 1.0) for n in names], steps=200, seed=seed)
    trace = sample_schedule(p, dict(zip(names, counts)))
    per = {n: [] for n in names}
    for _, name, r in trace:
        per[name].append(r)
    for n, c in zip(names, counts):
        seq = per[n]
        for k in range(0, len(seq) - len(seq) % c, c):
            assert sorted(seq[k:k + c]) == list(range(c))
        tail = seq[len(seq) - len(seq) % c:]
        assert len(set(tail)) == len(tail)


def test_catalog_errors():
    p = plan(("a", 1.0), ("b", 1.0))
    with pytest.raises(ValidationError):
        sample_schedule(p, {"a": 1, "b": 1, "zzz": 1})
    with pytest.raises(ValidationError):
        sample_schedule(p, {"a": 1})
    with pytest.raises(ValidationError):
        sample_schedule(p, {"a": 1, "b": 0})


def test_zero_weight_dataset_never_drawn():
    t = sample_schedule(plan(("a", 1.0), ("b", 0.0), steps=500), {"a": 2, "b": 2})
    assert t.names == ["a"]


# -- compile ------------------------------------------------------------------


def vqa_record(i, image="img.jpg"):
    return CorpusRecord(f"v{i}", T.VQA, image, (448, 448), f"[vqa] what is {i}?", f"ans{i}")


def write_shard(path, records):
    path.write_text("".join(dumps(r.to_json()) + "\n" for r in records), encoding="utf-8")
    return str(path)


def test_compile_vqa(tmp_path):
    shard = write_shard(tmp_path / "v.jsonl", [vqa_record(0)])
    p = plan(PlanEntry("GQA", 1.0, path=shard), steps=1)
    (line,) = list(compile_stage(p))
    obj = json.loads(line)
    assert obj["prompt"] == "[INST] <Img><ImageHere></Img> [vqa] what is 0? [/INST]"
    assert obj["prompt"].startswith("[INST] <Img>")
    assert obj == {"prompt": obj["prompt"], "target": "ans0", "task": "[vqa]", "source": "GQA"}


def test_compile_rec(tmp_path):
    r = make_rec_record("the dog", PixelBox(0, 0, 10, 10), 100, 100, id="r", image_ref="i.jpg")
    shard = write_shard(tmp_path / "r.jsonl", [r])
    (line,) = list(compile_stage(plan(PlanEntry("RefCOCO", 1.0, path=shard), steps=1)))
    obj = json.loads(line)
    assert "[refer] give me the location of" in obj["prompt"]
    assert obj["prompt"].count("[refer]") == 1
    assert obj["target"] == "{<0><0><10><10>}"


def test_compile_language_record_has_no_image():
    r = CorpusRecord("u", T.NONE, "", (1, 1), "Write a haiku.", "ok")
    assert render_record(r)[0] == "[INST] Write a haiku. [/INST]"


def test_compile_conversation():
    c = ConversationRecord("c", "i.jpg", (10, 10), (
        Turn(T.VQA, "[vqa] what?", "a cat", "x"),
        Turn(T.REFER, "[refer] give me the location of the cat", "{<0><0><5><5>}", "y"),
    ))
    prompt, target, task = render_record(c)
    assert prompt == ("[INST] <Img><ImageHere></Img> [vqa] what? [/INST] a cat "
                      "[INST] [refer] give me the location of the cat [/INST]")
    assert target == "{<0><0><5><5>}"
    assert task == "[refer]"


def test_compile_trace_order_and_determinism(tmp_path):
    a = write_shard(tmp_path / "a.jsonl", [vqa_record(i) for i in range(5)])
    b = write_shard(tmp_path / "b.jsonl", [vqa_record(i + 100) for i in range(3)])
    p = plan(PlanEntry("GQA", 2.0, path=a), PlanEntry("VQAv2", 1.0, path=b), steps=40, seed=3)
    seen = []
    out1 = list(compile_stage(p, trace_out=lambda t, ids: seen.append((t, ids))))
    out2 = list(compile_stage(p))
    assert out1 == out2
    trace, ids = seen[0]
    for line, (_, name, r) in zip(out1, trace):
        obj = json.loads(line)
        assert obj["source"] == name
        rid = ids[name][r]
        assert obj["target"] == "ans" + rid[1:]


def test_compile_empty_shard(tmp_path):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    with pytest.raises(SchemaError):
        list(compile_stage(plan(PlanEntry("GQA", 1.0, path=str(empty)))))


def test_compile_bad_lines(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text(dumps(vqa_record(0).to_json()) + "\n{broken\n")
    p = plan(PlanEntry("GQA", 1.0, path=str(path)), steps=3)
    with pytest.raises(SchemaError) as exc:
        list(compile_stage(p))
    assert exc.value.line == 2
    errors = []
    assert len(list(compile_stage(p, strict=False, on_error=errors.append))) == 3
    assert [e.line for e in errors] == [2]


def test_plan_file_paths_relative(tmp_path):
    write_shard(tmp_path / "v.jsonl", [vqa_record(0)])
    (tmp_path / "plan.json").write_text(json.dumps(
        {"stage": 2, "seed": 1, "steps": 4, "entries": [{"dataset": "GQA", "path": "v.jsonl", "weight": 1}]}
    ))
    p = StagePlan.load(str(tmp_path / "plan.json"))
    assert len(list(compile_stage(p))) == 4
    assert p.total_steps == 4
