from dataclasses import replace

import numpy as np
import pytest

from tedpolicy.corpus import Corpus, GenerationConfig, generate_corpus, split, validate_corpus
from tedpolicy.evaluation import (
    CurvePoint, compute_metrics, curve_table, digression_attention, digression_robustness, evaluate,
    insert_digression, insertion_sites, learning_curve, parse_curve_table, subsample,
)
from tedpolicy.featurizer import build_vocab
from tedpolicy.model import TedConfig, TedModel

FAST = TedConfig(width=16, n_heads=2, ff_width=16, epochs=2)


def _records(pairs, dialogue_ids=None):
    ids = dialogue_ids or ["d"] * len(pairs)
    return [{"dialogue_id": d, "turn": i, "gold": g, "predicted": p} for i, ((g, p), d) in enumerate(zip(pairs, ids))]


def test_all_correct():
    r = compute_metrics(_records([("a", "a"), ("b", "b")]))
    assert (r.full_dialogue_accuracy, r.action_accuracy, r.macro_f1) == (1.0, 1.0, 1.0)


def test_one_wrong_action_halves_full_dialogue_accuracy():
    pairs = [("a", "a"), ("b", "b"), ("a", "a"), ("b", "a")]
    r = compute_metrics(_records(pairs, ["d1", "d1", "d2", "d2"]))
    assert r.full_dialogue_accuracy == 0.5
    assert r.action_accuracy == 0.75


def test_macro_f1_confusion_oracle():
    pairs = [("A", "A"), ("A", "B"), ("B", "B"), ("B", "B"), ("C", "A"), ("C", "C")]
    r = compute_metrics(_records(pairs))
    oracle = (0.5 + 0.8 + 2 / 3) / 3
    assert abs(r.macro_f1 - oracle) <= 1e-12
    assert r.per_label["B"]["precision"] == pytest.approx(2 / 3)
    assert r.per_label["C"]["support"] == 2


def test_unknown_labels_counted_wrong():
    r = compute_metrics(_records([("x", "a"), ("a", "a")]), unknown_labels={"x"})
    assert r.n_unknown_label_turns == 1 and r.action_accuracy == 0.5
    assert "unknown-label turns" in r.to_text()


def test_full_dialogue_bounded_by_action_accuracy_for_equal_lengths():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pairs = [(str(rng.integers(3)), str(rng.integers(3))) for _ in range(12)]
        ids = [f"d{i // 3}" for i in range(12)]
        r = compute_metrics(_records(pairs, ids))
        assert 0 <= r.full_dialogue_accuracy <= r.action_accuracy <= 1
        assert 0 <= r.macro_f1 <= 1


def test_micro_accuracy_can_fall_below_full_dialogue_accuracy():
    # a short correct dialogue next to a long wrong one
    pairs = [("a", "a"), ("a", "b"), ("a", "b"), ("a", "b")]
    r = compute_metrics(_records(pairs, ["d1", "d2", "d2", "d2"]))
    assert (r.full_dialogue_accuracy, r.action_accuracy) == (0.5, 0.25)


def test_curve_point_stats():
    p = CurvePoint("transformer", 10, [0], [0.7])
    assert p.std == 0.0 and p.mean == 0.7
    p = CurvePoint("lstm", 10, [0, 1, 2], [0.2, 0.5, 0.8])
    assert 0.2 <= p.mean <= 0.8 and p.std == pytest.approx(np.std([0.2, 0.5, 0.8]))


def test_curve_table_round_trip():
    points = [CurvePoint("transformer", 25, [0, 1], [0.5, 0.75]), CurvePoint("lstm", 25, [0, 1], [0.25, 0.5])]
    back = parse_curve_table(curve_table(points))
    assert [(p.encoder, p.train_size, p.values) for p in back] == [(p.encoder, p.train_size, p.values) for p in points]


@pytest.fixture(scope="module")
def data():
    corpus = generate_corpus(GenerationConfig(n_dialogues=40, seed=6))
    return split(corpus, 0.75, 0)


def test_learning_curve_shape_and_threads(data, tmp_path):
    train, test = data
    points = learning_curve(train, test, FAST, [5, 10], [0], checkpoint_dir=tmp_path)
    assert len(points) == 4 and all(p.std == 0 for p in points)
    assert len(list(tmp_path.glob("*.ckpt"))) == 4
    threaded = learning_curve(train, test, FAST, [5, 10], [0], workers=2)
    assert curve_table(threaded) == curve_table(points)
    with pytest.raises(ValueError):
        learning_curve(train, test, FAST, [500], [0])


def test_subsample_deterministic(data):
    train, _ = data
    a, b = subsample(train, 7, 1), subsample(train, 7, 1)
    assert [d.id for d in a.dialogues] == [d.id for d in b.dialogues]
    assert len(a) == 7


def test_insert_digression_keeps_corpus_valid(data):
    _, test = data
    for dlg in test.dialogues:
        for site in insertion_sites(dlg):
            new = insert_digression(dlg, site, "chitchat_joke")
            assert len(new.turns) == len(dlg.turns) + 2
            assert validate_corpus(Corpus([new])).ok
            assert new.turns[site + 1].system_action == "answer_chitchat_joke"
            assert new.turns[site + 2].system_action == dlg.turns[site].system_action


def test_probes_run_on_untrained_model(data):
    train, test = data
    model = TedModel.initialize(FAST, build_vocab(train))
    att = digression_attention(model, test)
    assert att["n_rows"] > 0 and att["chitchat_mass"] >= 0 and att["task_mass"] > 0
    rob = digression_robustness(model, test, ["chitchat_joke", "chitchat_time"], seed=0)
    assert rob["sites"] > 0 and 0 <= rob["change_rate"] <= 1
    lstm = TedModel.initialize(replace(FAST, encoder_kind="lstm"), build_vocab(train))
    assert digression_robustness(lstm, test, ["chitchat_joke"])["sites"] == rob["sites"]


def test_evaluate_report(data):
    train, test = data
    model = TedModel.initialize(FAST, build_vocab(train))
    report, records = evaluate(model, test)
    assert report.n_dialogues == len(test)
    assert report.n_turns == sum(len(d.turns) for d in test.dialogues) == len(records)
