"""Binary turn features for the policy.

Each turn becomes three 0/1 vectors: the user input (intent + entity bits in
modular mode, bag of words in end-to-end mode), the tracked slots (two bits
per slot: filled, dont_care) and the previous system action (one-hot, or the
bag of words of its text in end-to-end mode).
"""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from tedpolicy.corpus import DONTCARE

logger = logging.getLogger(__name__)

MODULAR = "modular"
END_TO_END = "e2e"
MODES = (MODULAR, END_TO_END)
VOCAB_VERSION = 1

ABSENT, FILLED, DONT_CARE = "absent", "filled", "dont_care"

_TOKEN = re.compile(r"[a-z0-9]+")


class FeaturizationError(ValueError):
    pass


def tokenize(text):
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


def _index(symbols):
    return {s: i for i, s in enumerate(sorted(set(symbols)))}


@dataclass(frozen=True)
class FeatureVocab:
    mode: str
    intent_index: dict
    entity_index: dict
    action_index: dict
    slot_index: dict
    token_index: dict = field(default_factory=dict)
    # canonical system text per action, used for end-to-end action features
    action_text: dict = field(default_factory=dict)

    @property
    def actions(self):
        return sorted(self.action_index, key=self.action_index.get)

    @property
    def user_dim(self):
        if self.mode == MODULAR:
            return len(self.intent_index) + len(self.entity_index)
        return len(self.token_index)

    @property
    def slot_dim(self):
        return 2 * len(self.slot_index)

    @property
    def action_dim(self):
        return len(self.action_index) if self.mode == MODULAR else len(self.token_index)

    @property
    def input_dim(self):
        return self.user_dim + self.slot_dim + self.action_dim

    def to_text(self):
        out = [f"tedpolicy-vocab {VOCAB_VERSION}", f"mode {self.mode}"]
        for name in ("intent", "entity", "action", "slot", "token"):
            table = getattr(self, f"{name}_index")
            out.append(f"[{name}]")
            out.extend(f"{i}\t{s}" for s, i in sorted(table.items(), key=lambda kv: kv[1]))
        out.append("[action_text]")
        out.extend(f"{a}\t{self.action_text[a]}" for a in sorted(self.action_text))
        return "\n".join(out) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or lines[0] != f"tedpolicy-vocab {VOCAB_VERSION}":
            raise FeaturizationError("not a version-1 vocab manifest")
        if not lines[1].startswith("mode "):
            raise FeaturizationError("vocab manifest lacks a mode line")
        mode = lines[1].split(" ", 1)[1]
        tables = {}
        section = None
        for line in lines[2:]:
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                tables[section] = {}
                continue
            left, right = line.split("\t", 1)
            if section == "action_text":
                tables[section][left] = right
            else:
                tables[section][right] = int(left)
        return cls(mode, tables["intent"], tables["entity"], tables["action"], tables["slot"],
                   tables["token"], tables["action_text"])


def build_vocab(corpus, mode=MODULAR):
    """Index every symbol in ``corpus``; indices follow lexicographic order."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not corpus.dialogues:
        raise FeaturizationError("cannot build a vocab from an empty corpus")
    intents, entities, actions, tokens = set(), set(), set(), set()
    action_text = {}
    for dlg in corpus.dialogues:
        for turn in dlg.turns:
            intents.add(turn.user_intent)
            entities.update(turn.user_entities)
            actions.add(turn.system_action)
            action_text.setdefault(turn.system_action, turn.system_text)
            if mode == END_TO_END:
                tokens.update(tokenize(turn.user_text))
                tokens.update(tokenize(turn.system_text))
    return FeatureVocab(mode, _index(intents), _index(entities), _index(actions), _index(entities),
                        _index(tokens), dict(sorted(action_text.items())))


@dataclass
class SlotState:
    status: dict = field(default_factory=dict)
    last_value: dict = field(default_factory=dict)

    def update(self, entities):
        for slot, value in entities.items():
            self.status[slot] = DONT_CARE if value == DONTCARE else FILLED
            self.last_value[slot] = value

    def get(self, slot):
        return self.status.get(slot, ABSENT)


@dataclass
class TurnFeatures:
    user_vec: np.ndarray
    slot_vec: np.ndarray
    prev_action_vec: np.ndarray
    action_target_index: int

    def input_vec(self):
        return np.concatenate([self.user_vec, self.slot_vec, self.prev_action_vec])


def _bag_of_words(text, vocab, unknown):
    vec = np.zeros(len(vocab.token_index))
    for tok in tokenize(text):
        i = vocab.token_index.get(tok)
        if i is None:
            unknown.append(tok)
        else:
            vec[i] = 1.0
    return vec


def featurize_action(label, vocab):
    """Binary feature vector of one action label."""
    if label not in vocab.action_index:
        raise FeaturizationError(f"unknown action {label!r}")
    if vocab.mode == MODULAR:
        vec = np.zeros(len(vocab.action_index))
        vec[vocab.action_index[label]] = 1.0
        return vec
    return _bag_of_words(vocab.action_text[label], vocab, [])


def action_matrix(vocab):
    """Features of every action, one row per action in index order."""
    return np.stack([featurize_action(a, vocab) for a in vocab.actions])


def _user_vec(turn, vocab, strict, unknown):
    if vocab.mode == END_TO_END:
        return _bag_of_words(turn.user_text, vocab, unknown)
    vec = np.zeros(vocab.user_dim)
    i = vocab.intent_index.get(turn.user_intent)
    if i is None:
        if strict:
            raise FeaturizationError(f"unknown intent {turn.user_intent!r}")
        unknown.append(turn.user_intent)
    else:
        vec[i] = 1.0
    offset = len(vocab.intent_index)
    for name in turn.user_entities:
        j = vocab.entity_index.get(name)
        if j is None:
            if strict:
                raise FeaturizationError(f"unknown entity {name!r}")
            unknown.append(name)
        else:
            vec[offset + j] = 1.0
    return vec


def _slot_vec(state, vocab):
    vec = np.zeros(vocab.slot_dim)
    for slot, i in vocab.slot_index.items():
        status = state.get(slot)
        if status == FILLED:
            vec[2 * i] = 1.0
        elif status == DONT_CARE:
            vec[2 * i + 1] = 1.0
    return vec


def featurize_dialogue(dialogue, vocab, strict=True):
    """Features for every turn of ``dialogue``; turn t only looks at turns <= t.

    A turn with an empty ``system_action`` gets target index -1 (used for the
    turn being predicted). With ``strict=False`` unknown labels become zero
    features and target -1 instead of raising.
    """
    turns = dialogue.turns if hasattr(dialogue, "turns") else dialogue
    state = SlotState()
    out = []
    unknown = []
    prev = np.zeros(vocab.action_dim)
    for turn in turns:
        user = _user_vec(turn, vocab, strict, unknown)
        state.update(turn.user_entities)
        action = turn.system_action
        if not action:
            target = -1
        elif action in vocab.action_index:
            target = vocab.action_index[action]
        elif strict:
            raise FeaturizationError(f"unknown action {action!r}")
        else:
            target = -1
            unknown.append(action)
        out.append(TurnFeatures(user, _slot_vec(state, vocab), prev, target))
        if action in vocab.action_index:
            prev = featurize_action(action, vocab)
        else:
            prev = np.zeros(vocab.action_dim)
    if unknown:
        logger.warning("dropped %d unknown symbol(s) while featurizing", len(unknown))
    return out
