import math
import os
from pathlib import Path

import pytest

import evrank

ROOT = Path(os.environ.get("EVRANK_SOURCE_DIR", Path(__file__).resolve().parents[2]))
PROMPTS = ROOT / "assets" / "prompts"


def test_edit_similarity():
    assert evrank.levenshtein("kitten", "sitting") == 3
    assert evrank.similarity("kitten", "sitting") == pytest.approx(0.25)
    assert evrank.similarity("abc", "abc") == 1.0


def test_retrieval_is_causal():
    history = [(1.0, "rain"), (2.0, "storm"), (3.0, "rain"), (5.0, "rain")]
    idx = evrank.retrieve(history, ["rain"], d=2, proposal_time=4.0)
    assert idx == [0, 2]
    assert all(history[i][0] < 4.0 for i in idx)


def test_metrics():
    recs = [evrank.EvalRecord(["b", "a", "c"], ["a"]), evrank.EvalRecord(["a", "b"], ["a", "b"])]
    assert evrank.mean_rank(recs) == pytest.approx((2 + 1 + 2) / 3)
    assert evrank.mar_at_m(recs, 1) <= evrank.mar_at_m(recs, 2)
    assert evrank.map_at_m([evrank.EvalRecord(["x"], ["z"])], 1) is None
    timed = [evrank.EvalRecord(["a"], ["a"], true_time=1.0, predicted_time=3.0)]
    assert evrank.rmse_time(timed) == pytest.approx(2.0)


def test_hawkes_constant_rate():
    h = evrank.Hawkes([0.7], [0.0], 1.0)
    events = [(0.5, 0), (1.5, 0)]
    assert h.log_likelihood(events, 0.0, 4.0) == pytest.approx(2 * math.log(0.7) - 0.7 * 4.0, abs=1e-12)
    draws = h.sample_next([], 0.0, 20000, seed=3)
    assert sum(draws) / len(draws) == pytest.approx(1 / 0.7, rel=0.05)
    with pytest.raises(evrank.EvrankError):
        h.intensity(events, 0, 1.0)


def test_prompt_and_parser_round_trip():
    t = evrank.load_template(PROMPTS / "gdelt" / "template.txt", PROMPTS / "gdelt" / "demos_p1.txt")
    assert t.demonstrations == 10
    p = evrank.build_prompt(t, ("US", "COOPERATE", "UKRAINE"), 66.25, "2022-01-01")
    assert (ROOT / "tests" / "data" / "golden_gdelt_10shot.txt").read_text() == p
    causes, warnings = evrank.parse_causes(
        "cause event 1\npredicate: THREATEN\ntime: 2022-03-06\nsubject: RUSSIA\nobject: UKRAINE\n", "structured")
    assert warnings == []
    assert causes[0]["type"] == "THREATEN" and causes[0]["time"] == "2022-03-06"


def test_synthetic_generation():
    seqs = evrank.generate_synthetic(types=10, sequences=5, horizon=20.0, seed=1)
    assert len(seqs) == 5
    for s in seqs:
        times = [t for t, _ in s]
        assert times == sorted(times)
        assert all(0 <= t < 20.0 for t in times)


def test_pipeline_stage_error_names_upstream(tmp_path):
    with pytest.raises(evrank.EvrankError, match="train-base"):
        evrank.run_stage("propose", str(ROOT / "configs" / "synthetic.cfg"), {"out": str(tmp_path)})


def test_small_pipeline(tmp_path):
    overrides = {
        "out": str(tmp_path), "synthetic.sequences": "30", "synthetic.horizon": "15", "base.epochs": "1",
        "queries.max_train": "100", "queries.max_dev": "30", "queries.max_test": "30", "ranker.epochs": "1",
        "eval.bootstrap": "20",
    }
    lines = evrank.run_all(ROOT / "configs" / "synthetic.cfg", overrides)
    assert any(l.startswith("evaluate:") for l in lines)
    assert (tmp_path / "report" / "report.csv").exists()
    _, calls = evrank.run_stage("abduce", str(ROOT / "configs" / "synthetic.cfg"), overrides)
    assert calls == 0
