"""Smoke test for the qa_ensemble_py extension.

Build the module first, either with maturin:

    pip install maturin && maturin develop -m crates/python/Cargo.toml --features extension-module

or by copying the cdylib next to this script:

    cargo build --release -p qa-ensemble-py --features extension-module
    cp target/release/libqa_ensemble_py.so python/qa_ensemble_py.so
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import qa_ensemble_py as qe  # noqa: E402


def profile(classes, seed):
    return json.dumps({
        "per_class": {c: 1.0 for c in classes},
        "corruption": "disjoint_token",
        "seed": seed,
    })


def main():
    assert qe.normalize_answer("The Denver Broncos!") == ["denver", "broncos"]
    assert abs(qe.token_f1("Broncos", ["Denver Broncos"]) - 2 / 3) < 1e-12
    assert qe.em("the  Broncos", ["Broncos"])
    assert qe.classify("What time does it start?") == "what_time"
    assert qe.classify("Which river is longest?") == "what"
    assert qe.classify("Name the river.") == "undefined"
    assert qe.classify_by_length("one two three", [2, 5]) == 1

    corpus = qe.synth_corpus(20, 7)
    assert len(corpus) == 20 * 14
    train, pre_eval = qe.split(corpus, 0.3, 1)
    assert len(train) + len(pre_eval) == len(corpus)

    groups = [
        ("m1", ["when", "who", "why"]),
        ("m2", ["what", "where", "undefined"]),
        ("m3", ["date", "during", "how_are", "how_big_size", "how_much_many", "how_old", "what_time", "whom"]),
    ]
    models = [qe.synth_predictions(corpus, profile(cls, i), name) for i, (name, cls) in enumerate(groups)]

    table = qe.compute_weights(pre_eval, models)
    assert table.models == ["m1", "m2", "m3"]
    assert table.class_weight("m1", "when") == 1.0
    assert table.class_weight("m2", "when") == 0.0

    ensemble, traces = qe.run_ensemble(train, models, table, undefined_special_case=False)
    report = qe.evaluate(ensemble, train)
    assert report["overall"]["em_rate"] == 1.0, report["overall"]
    assert len(traces) == len(train)

    trace = qe.vote([("m1", "y"), ("m2", "x"), ("m3", "y")], "when", table)
    assert trace["winner"] == "y" and trace["reason"] == "merged_duplicates"

    sim = qe.pairwise_similarity(models[0], models[0], train)
    assert sim["overall"]["equal_em"] == sim["overall"]["total"] == len(train)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "w.json")
        table.save(path)
        assert qe.WeightTable.load(path).to_json() == table.to_json()
        preds_path = os.path.join(d, "p.json")
        ensemble.save(preds_path)
        assert qe.PredictionSet.load(preds_path, "e").answers() == ensemble.answers()
        try:
            qe.Dataset.load(os.path.join(d, "missing.json"))
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing file should raise FileNotFoundError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
