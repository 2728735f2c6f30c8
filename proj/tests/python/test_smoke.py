import json
import os
import random
from pathlib import Path

import pytest

import cotasks

SOURCE_DIR = Path(os.environ.get("COTASKS_SOURCE_DIR", Path(__file__).resolve().parents[2]))
GOLDEN = SOURCE_DIR / "tests" / "fixtures" / "golden"


def vidor_doc():
    frames = [[] for _ in range(64)]
    for fid in range(0, 64, 4):
        frames[fid].append({"tid": 0, "bbox": {"xmin": 10, "ymin": 20, "xmax": 200, "ymax": 300}})
        frames[fid].append({"tid": 1, "bbox": {"xmin": 300, "ymin": 40, "xmax": 400, "ymax": 140}})
    return {
        "video_id": "kitchen",
        "frame_count": 64,
        "width": 640,
        "height": 360,
        "subject/objects": [{"tid": 0, "category": "adult"}, {"tid": 1, "category": "cup"}],
        "trajectories": frames,
        "relation_instances": [
            {"subject_tid": 0, "object_tid": 1, "predicate": "next_to", "begin_fid": 0, "end_fid": 32},
            {"subject_tid": 0, "object_tid": 1, "predicate": "hold", "begin_fid": 16, "end_fid": 64},
        ],
    }


def question():
    return {
        "qid": "kitchen_0",
        "video_id": "kitchen",
        "question": "why does the adult pick up the cup?",
        "answer": "to drink",
        "qtype": "CW",
        "source": "nextqa",
    }


def test_sampling_matches_definition():
    for n in range(1, 200):
        for k in (1, 7, 32, 64):
            got = cotasks.uniform_sample(n, k)
            want = list(range(n)) if n < k else [i * n // k for i in range(k)]
            assert got == want
    assert cotasks.map_span(0, 10, 640, 64) == (1, 1)
    assert cotasks.map_span(3, 9, 640, 64) is None
    with pytest.raises(ValueError):
        cotasks.map_span(5, 5, 640, 64)


def test_parse_build_check_expand():
    annotation, quarantined = cotasks.parse_vidor(vidor_doc())
    assert quarantined == []
    assert cotasks.validate_annotation(annotation) == []
    bundle = cotasks.build_bundle(annotation, question())
    assert bundle["a1"]["entities"] == ["0_adult", "1_cup"]
    assert 1 <= len(bundle["a1"]["timestamps"]) <= 16
    assert [f["frame"] for f in bundle["a2"]] == bundle["a1"]["timestamps"]
    assert cotasks.check_bundle(bundle) == []
    instances = cotasks.expand([bundle], "val")
    assert [i["task_index"] for i in instances] == [1, 2, 3, 4]

    bundle["a2"] = bundle["a2"][:-1]
    assert "CHAIN_MISMATCH" in {code for code, _ in cotasks.check_bundle(bundle)}


def test_ungroundable_question_raises():
    annotation, _ = cotasks.parse_vidor(vidor_doc())
    q = question()
    q["question"] = "what happens next?"
    with pytest.raises(cotasks.ConstructionError):
        cotasks.build_bundle(annotation, q)


def test_golden_prompts_render():
    slots = json.loads((GOLDEN / "slots.json").read_text())
    for tid in cotasks.template_ids():
        entry = slots[tid]
        rendered = cotasks.render_prompt(tid, entry["slots"]) + entry.get("completion", "")
        golden = (GOLDEN / f"{tid}.txt").read_text()
        golden = "\n".join(line.rstrip(" \t") for line in golden.replace("\r\n", "\n").split("\n")).rstrip("\n")
        assert rendered == golden, tid


def test_judge_and_scores():
    assert cotasks.parse_judge("Your mark: 4") == 4
    with pytest.raises(cotasks.ResponseParseError):
        cotasks.parse_judge("excellent")
    assert cotasks.scaled_score(1) == 0.0
    assert cotasks.scaled_score(3) == 50.0
    assert cotasks.scaled_score(5) == 100.0
    assert cotasks.parse_response("cotask1_eval", "{'entities': ['0_adult'], 'timestamps': [2]}") == {
        "entities": ["0_adult"],
        "timestamps": [2],
    }


def test_aggregate_and_compare():
    def record(qid, qtype, score):
        return {
            "qid": qid, "condition": "baseline", "model_id": "m", "qtype": qtype, "category": None,
            "prediction": "x", "reference": "x", "judge_score": score,
            "prediction_invalid": False, "inference_failed": False, "error": "",
        }

    records = [record("a", "CW", 3), record("b", "TN", 5), record("c", "DO", 1)]
    report = cotasks.aggregate(records)
    assert report["overall"]["mean"] == 50.0
    rng = random.Random(0)
    for _ in range(20):
        rng.shuffle(records)
        assert cotasks.aggregate(records) == report
    table, text = cotasks.compare_reports([report, report])
    assert table["columns"][-1] == "Avg"
    assert "| baseline |" in text
    other = cotasks.aggregate([record("z", "CW", 5)])
    with pytest.raises(cotasks.IntegrityError):
        cotasks.compare_reports([report, other])


def test_bad_json_is_value_error():
    with pytest.raises(ValueError):
        cotasks.validate_annotation("{not json")
    with pytest.raises(cotasks.ParseError):
        cotasks.validate_annotation({"video_id": "x"})
