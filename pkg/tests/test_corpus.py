import json

import pytest
from hypothesis import given, settings, strategies as st

from tedpolicy.corpus import (
    Corpus, CorpusFormatError, Dialogue, GenerationConfig, Turn, dumps, generate_corpus, is_question,
    load, loads, save, split, validate_corpus,
)


def small(**kw):
    return GenerationConfig(**{"n_dialogues": 40, **kw})


def test_no_digressions_when_p_zero():
    corpus = generate_corpus(small(digression_probability=0.0))
    report = validate_corpus(corpus)
    assert report.ok and report.n_digressions == 0 and report.n_noncooperative_turns == 0
    assert all(t.cooperative for d in corpus.dialogues for t in d.turns)


def test_same_seed_identical_bytes():
    assert dumps(generate_corpus(small(seed=4))) == dumps(generate_corpus(small(seed=4)))
    assert dumps(generate_corpus(small(seed=4))) != dumps(generate_corpus(small(seed=5)))


def test_p_one_fixed_length_walker():
    corpus = generate_corpus(small(digression_probability=1.0, digression_length_range=(2, 2)))
    n_questions = 0
    for d in corpus.dialogues:
        turns = d.turns
        for i, t in enumerate(turns):
            if t.cooperative and is_question(t.system_action):
                n_questions += 1
                assert [x.user_intent.startswith("chitchat_") for x in turns[i + 1:i + 3]] == [True, True]
                assert turns[i + 3].user_intent == "no_input"
                assert turns[i + 3].system_action == t.system_action
                assert turns[i + 4].cooperative
    assert n_questions > 0
    assert all(validate_corpus(Corpus([d])).n_digressions >= 1 for d in corpus.dialogues)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.integers(1, 3), st.integers(0, 2))
def test_generator_output_always_validates(seed, p, lo, extra):
    cfg = GenerationConfig(n_dialogues=15, seed=seed, digression_probability=p,
                           digression_length_range=(lo, lo + extra))
    report = validate_corpus(generate_corpus(cfg))
    assert report.violations == []


def test_dialogue_structure():
    for d in generate_corpus(small()).dialogues:
        assert d.turns[0].system_action == "greet"
        assert d.turns[-1].system_action == f"confirm_{d.domain}"
        assert all(t.user_intent and t.system_action for t in d.turns)
        assert all(not t.user_entities for t in d.turns if not t.cooperative)


def _dialogue(actions, did="d1"):
    turns = [Turn("hi", "greet", {}, "greet", "hello", True),
             Turn("hotel", "request_hotel", {}, "ask_location_hotel", "where?", True)]
    for intent, action in actions:
        coop = not (intent.startswith("chitchat_") or intent == "no_input")
        ents = {"location": "north"} if intent == "inform" else {}
        turns.append(Turn("x", intent, ents, action, "y", coop))
    return Dialogue(did, "hotel", turns)


def test_validator_flags_chitchat_answered_by_other_question():
    bad = _dialogue([("chitchat_joke", "ask_nights_hotel"), ("no_input", "ask_location_hotel"),
                     ("inform", "confirm_hotel")])
    report = validate_corpus(Corpus([bad]))
    assert len(report.violations) == 1
    assert report.violations[0].turn_index == 2


def test_validator_flags_wrong_repair():
    bad = _dialogue([("chitchat_joke", "answer_chitchat_joke"), ("no_input", "ask_people_hotel"),
                     ("inform", "confirm_hotel")])
    report = validate_corpus(Corpus([bad]))
    assert [v.turn_index for v in report.violations] == [3]


def test_validator_structural_defects():
    good = _dialogue([("inform", "confirm_hotel")])
    report = validate_corpus(Corpus([good, _dialogue([("inform", "confirm_hotel")]),
                                     Dialogue("empty", "hotel", [])]))
    messages = sorted(v.message for v in report.violations)
    assert messages == ["dialogue has no turns", "duplicate dialogue id"]


def test_validator_empty_corpus():
    report = validate_corpus(Corpus([]))
    assert report.violations == [] and report.warnings == ["empty"]


def test_split_sizes_and_disjoint():
    corpus = generate_corpus(small(n_dialogues=10))
    train, test = split(corpus, 0.8, 0)
    assert (len(train), len(test)) == (8, 2)
    ids_train, ids_test = {d.id for d in train.dialogues}, {d.id for d in test.dialogues}
    assert not ids_train & ids_test


def test_split_determinism():
    corpus = generate_corpus(small(n_dialogues=30))
    a, b = split(corpus, 0.5, 3), split(corpus, 0.5, 3)
    assert [d.id for d in a[0].dialogues] == [d.id for d in b[0].dialogues]
    c = split(corpus, 0.5, 4)
    assert [d.id for d in a[0].dialogues] != [d.id for d in c[0].dialogues]


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_union_is_original(n, f, seed):
    corpus = generate_corpus(small(n_dialogues=n, seed=seed))
    train, test = split(corpus, f, seed)
    assert {d.id for d in train.dialogues} | {d.id for d in test.dialogues} == {d.id for d in corpus.dialogues}
    assert len(train) + len(test) == n


def test_split_errors():
    corpus = generate_corpus(small(n_dialogues=1))
    with pytest.raises(ValueError):
        split(corpus, 0.5, 0)
    with pytest.raises(ValueError):
        split(generate_corpus(small(n_dialogues=4)), 1.0, 0)


def test_round_trip(tmp_path):
    one = generate_corpus(small(n_dialogues=1))
    save(one, tmp_path / "one.jsonl")
    back = load(tmp_path / "one.jsonl")
    assert back.dialogues == one.dialogues and back.metadata == one.metadata
    big = generate_corpus(small(n_dialogues=500))
    text = dumps(big)
    assert dumps(loads(text)) == text
    assert len(text.splitlines()) == 501


def test_load_errors_name_line():
    corpus = generate_corpus(small(n_dialogues=3))
    lines = dumps(corpus).splitlines()
    record = json.loads(lines[2])
    del record["turns"][1]["system_action"]
    lines[2] = json.dumps(record)
    with pytest.raises(CorpusFormatError, match="line 3.*system_action"):
        loads("\n".join(lines))
    meta = json.loads(lines[0])
    meta["format_version"] = 99
    with pytest.raises(CorpusFormatError, match="line 1"):
        loads("\n".join([json.dumps(meta)] + lines[1:]))
    with pytest.raises(CorpusFormatError, match="line 2"):
        loads(lines[0] + "\n{not json\n")


def test_config_validation():
    with pytest.raises(ValueError):
        generate_corpus(GenerationConfig(required_slots={"hotel": (), "restaurant": ("location",)}))
    with pytest.raises(ValueError):
        GenerationConfig(digression_probability=1.5).validate()
    with pytest.raises(ValueError):
        GenerationConfig(digression_length_range=(3, 1)).validate()
    with pytest.raises(ValueError):
        GenerationConfig(n_dialogues=0).validate()


def test_config_round_trip():
    cfg = small(seed=9, digression_length_range=(2, 4))
    assert GenerationConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
