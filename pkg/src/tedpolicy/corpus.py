"""Synthetic slot-filling dialogues with chit-chat digressions.

A dialogue is a greeting, a booking request, then one question per required
slot. Before the user answers a question, a digression may start: a few
chit-chat turns, each answered by the matching ``answer_<intent>`` action,
closed by a repair turn (user intent ``no_input``) in which the system asks the
pending question again. The last action confirms the booking.

Corpora are stored as UTF-8 JSON lines; the first line is a metadata record.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GENERATOR_VERSION = "1.0"

NO_INPUT = "no_input"
GREET = "greet"
INFORM = "inform"
DONTCARE = "dontcare"
CHITCHAT_PREFIX = "chitchat_"

DEFAULT_SLOTS = {
    "restaurant": ("location", "people", "cuisine", "price"),
    "hotel": ("location", "people", "nights"),
}

DEFAULT_VALUES = {
    "location": ("north", "south", "centre", "east", "west"),
    "people": ("two", "three", "four", "five", "six"),
    "cuisine": ("italian", "chinese", "indian", "french", "thai"),
    "price": ("cheap", "moderate", "expensive"),
    "nights": ("one", "two", "three", "four"),
}

# intent -> (user templates, system answer)
CHITCHAT = {
    "chitchat_weather": (("what is the weather like", "is it going to rain today"),
                         "sorry, i cannot check the weather."),
    "chitchat_bot": (("are you a bot", "am i talking to a human"),
                     "i am a booking assistant."),
    "chitchat_how_are_you": (("how are you", "how is your day going"),
                             "i am doing great, thanks for asking."),
    "chitchat_joke": (("tell me a joke", "say something funny"),
                      "why did the chef quit? he ran out of thyme."),
    "chitchat_time": (("what time is it", "do you know the time"),
                      "i do not have a clock, sorry."),
    "chitchat_thanks": (("thanks", "thank you so much"),
                        "you are welcome!"),
    "chitchat_name": (("what is your name", "do you have a name"),
                      "you can call me ted."),
    "chitchat_help": (("what can you do", "what are your skills"),
                      "i can book restaurants and hotels."),
}

GREET_TEXTS = ("hi", "hello there", "good morning")
GREET_REPLY = "hello! how can i help you?"

REQUEST_TEXTS = {
    "restaurant": ("i want to book a table at a restaurant", "can you find me a restaurant"),
    "hotel": ("i need a hotel room", "please book me a hotel"),
}

INFORM_TEMPLATES = {
    "location": ("somewhere in the {v}", "the {v} please"),
    "people": ("for {v} people", "we are {v}"),
    "cuisine": ("{v} food", "i would like {v} cuisine"),
    "price": ("something {v}", "{v} price range"),
    "nights": ("{v} nights", "for {v} nights"),
}
DONTCARE_TEXTS = ("i don't care", "any is fine", "it does not matter")

QUESTION_TEXTS = {
    ("location", "restaurant"): "where should the restaurant be?",
    ("location", "hotel"): "in which area should the hotel be?",
    ("people", "restaurant"): "how many people is the table for?",
    ("people", "hotel"): "how many guests will stay at the hotel?",
    ("cuisine", "restaurant"): "what cuisine would you like?",
    ("price", "restaurant"): "what price range?",
    ("nights", "hotel"): "how many nights will you stay?",
}


def ask_action(slot, domain):
    return f"ask_{slot}_{domain}"


def confirm_action(domain):
    return f"confirm_{domain}"


def answer_action(intent):
    return f"answer_{intent}"


def is_question(action):
    return action.startswith("ask_")


def is_chitchat_intent(intent):
    return intent.startswith(CHITCHAT_PREFIX)


def question_text(slot, domain):
    return QUESTION_TEXTS.get((slot, domain), f"what {slot} should the {domain} have?")


def chitchat_templates(intent):
    if intent in CHITCHAT:
        return CHITCHAT[intent]
    words = intent[len(CHITCHAT_PREFIX):].replace("_", " ") if is_chitchat_intent(intent) else intent
    return (f"let us talk about {words}",), f"i am happy to chat about {words}."


class CorpusFormatError(ValueError):
    pass


@dataclass
class Turn:
    user_text: str
    user_intent: str
    user_entities: dict
    system_action: str
    system_text: str
    cooperative: bool

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Dialogue:
    id: str
    domain: str
    turns: list

    def to_dict(self):
        return {"id": self.id, "domain": self.domain, "turns": [t.to_dict() for t in self.turns]}


@dataclass
class GenerationConfig:
    n_dialogues: int = 800
    domains: tuple = ("hotel", "restaurant")
    required_slots: dict = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_SLOTS.items()})
    slot_values: dict = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_VALUES.items()})
    digression_probability: float = 0.5
    digression_length_range: tuple = (1, 3)
    chitchat_intent_pool: tuple = tuple(sorted(CHITCHAT))
    dontcare_probability: float = 0.1
    seed: int = 0

    def validate(self):
        if self.n_dialogues < 1:
            raise ValueError("n_dialogues must be >= 1")
        if not 0.0 <= self.digression_probability <= 1.0:
            raise ValueError("digression_probability must lie in [0, 1]")
        if not 0.0 <= self.dontcare_probability <= 1.0:
            raise ValueError("dontcare_probability must lie in [0, 1]")
        lo, hi = self.digression_length_range
        if lo < 1 or lo > hi:
            raise ValueError("digression_length_range needs 1 <= min <= max")
        if not self.domains:
            raise ValueError("no domains configured")
        for d in self.domains:
            if not self.required_slots.get(d):
                raise ValueError(f"domain {d!r} has no required slots")
            for s in self.required_slots[d]:
                if not self.slot_values.get(s):
                    raise ValueError(f"slot {s!r} has no values")
        if self.digression_probability > 0 and not self.chitchat_intent_pool:
            raise ValueError("digressions need a non-empty chitchat_intent_pool")
        for intent in self.chitchat_intent_pool:
            if not is_chitchat_intent(intent):
                raise ValueError(f"chit-chat intents must start with {CHITCHAT_PREFIX!r}: {intent}")

    def to_dict(self):
        d = asdict(self)
        d["domains"] = list(self.domains)
        d["required_slots"] = {k: list(v) for k, v in sorted(self.required_slots.items())}
        d["slot_values"] = {k: list(v) for k, v in sorted(self.slot_values.items())}
        d["digression_length_range"] = list(self.digression_length_range)
        d["chitchat_intent_pool"] = list(self.chitchat_intent_pool)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("domains", "chitchat_intent_pool", "digression_length_range"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("required_slots", "slot_values"):
            if key in d:
                d[key] = {k: tuple(v) for k, v in d[key].items()}
        return cls(**d)


@dataclass
class Corpus:
    dialogues: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.dialogues)

    def by_id(self, dialogue_id):
        for d in self.dialogues:
            if d.id == dialogue_id:
                return d
        raise KeyError(dialogue_id)

    def subset(self, dialogues, **extra):
        return Corpus(list(dialogues), {**self.metadata, **extra})


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def _generate_dialogue(rng, cfg, index):
    domain = _pick(rng, list(cfg.domains))
    slots = list(cfg.required_slots[domain])
    turns = [Turn(_pick(rng, GREET_TEXTS), GREET, {}, GREET, GREET_REPLY, True)]
    first = ask_action(slots[0], domain)
    turns.append(Turn(_pick(rng, REQUEST_TEXTS.get(domain, (f"i want to book a {domain}",))),
                      f"request_{domain}", {}, first, question_text(slots[0], domain), True))
    lo, hi = cfg.digression_length_range
    for j, slot in enumerate(slots):
        if cfg.digression_probability > 0 and rng.random() < cfg.digression_probability:
            for _ in range(int(rng.integers(lo, hi + 1))):
                intent = _pick(rng, list(cfg.chitchat_intent_pool))
                texts, answer = chitchat_templates(intent)
                turns.append(Turn(_pick(rng, texts), intent, {}, answer_action(intent), answer, False))
            turns.append(Turn("", NO_INPUT, {}, ask_action(slot, domain), question_text(slot, domain), False))
        if rng.random() < cfg.dontcare_probability:
            value, text = DONTCARE, _pick(rng, DONTCARE_TEXTS)
        else:
            value = _pick(rng, list(cfg.slot_values[slot]))
            text = _pick(rng, INFORM_TEMPLATES.get(slot, ("{v}",))).format(v=value)
        if j + 1 < len(slots):
            action, reply = ask_action(slots[j + 1], domain), question_text(slots[j + 1], domain)
        else:
            action, reply = confirm_action(domain), f"great, your {domain} booking is confirmed."
        turns.append(Turn(text, INFORM, {slot: value}, action, reply, True))
    return Dialogue(f"dlg{index:05d}", domain, turns)


def generate_corpus(config):
    """Generate ``config.n_dialogues`` dialogues; output depends only on ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    dialogues = [_generate_dialogue(rng, config, i) for i in range(config.n_dialogues)]
    meta = {"generator_version": GENERATOR_VERSION, "seed": config.seed, "config": config.to_dict()}
    return Corpus(dialogues, meta)


@dataclass
class Violation:
    dialogue_id: str
    turn_index: int
    message: str

    def __str__(self):
        where = f"turn {self.turn_index}" if self.turn_index >= 0 else "dialogue"
        return f"{self.dialogue_id} {where}: {self.message}"


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    n_dialogues: int = 0
    n_digressions: int = 0
    n_noncooperative_turns: int = 0

    @property
    def ok(self):
        return not self.violations


def validate_corpus(corpus):
    """Check structure and the repeat-the-question rule; never raises.

    A digression is a maximal run of chit-chat turns. It must be closed by a
    ``no_input`` turn whose action equals the question pending before the
    digression started.
    """
    report = ValidationReport(n_dialogues=len(corpus.dialogues))
    if not corpus.dialogues:
        report.warnings.append("empty")
        return report
    seen = set()
    for dlg in corpus.dialogues:
        bad = report.violations.append
        if dlg.id in seen:
            bad(Violation(dlg.id, -1, "duplicate dialogue id"))
        seen.add(dlg.id)
        if not dlg.turns:
            bad(Violation(dlg.id, -1, "dialogue has no turns"))
            continue
        pending = None
        in_digression = False
        for i, turn in enumerate(dlg.turns):
            if not turn.user_intent or not turn.system_action:
                bad(Violation(dlg.id, i, "empty user_intent or system_action"))
            if not turn.cooperative:
                report.n_noncooperative_turns += 1
                if turn.user_entities:
                    bad(Violation(dlg.id, i, "non-cooperative turn carries entities"))
            if is_chitchat_intent(turn.user_intent):
                if not in_digression:
                    report.n_digressions += 1
                    in_digression = True
                if is_question(turn.system_action):
                    bad(Violation(dlg.id, i, f"chit-chat answered with question {turn.system_action}"))
                continue
            if turn.user_intent == NO_INPUT:
                if not in_digression:
                    bad(Violation(dlg.id, i, "repair turn without a preceding digression"))
                elif turn.system_action != pending:
                    bad(Violation(dlg.id, i, f"digression closed with {turn.system_action}, "
                                             f"expected pending question {pending}"))
                in_digression = False
                continue
            if in_digression:
                bad(Violation(dlg.id, i, "digression not closed by repeating the pending question"))
                in_digression = False
            if is_question(turn.system_action):
                pending = turn.system_action
        if in_digression:
            bad(Violation(dlg.id, len(dlg.turns) - 1, "dialogue ends inside a digression"))
        if not dlg.turns[-1].system_action.startswith("confirm_"):
            bad(Violation(dlg.id, len(dlg.turns) - 1, "final action is not a confirmation"))
    return report


def split(corpus, train_fraction, seed):
    """Shuffle dialogues with ``seed`` and cut into ceil(n*f) train / rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(corpus.dialogues)
    if n < 2:
        raise ValueError("need at least 2 dialogues to split")
    n_train = math.ceil(round(n * train_fraction, 9))
    order = np.random.default_rng(seed).permutation(n)
    train = [corpus.dialogues[i] for i in order[:n_train]]
    test = [corpus.dialogues[i] for i in order[n_train:]]
    return (corpus.subset(train, split="train", split_seed=seed, train_fraction=train_fraction),
            corpus.subset(test, split="test", split_seed=seed, train_fraction=train_fraction))


def _dump(obj):
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dumps(corpus):
    lines = [_dump({"format_version": FORMAT_VERSION, **corpus.metadata})]
    lines.extend(_dump(d.to_dict()) for d in corpus.dialogues)
    return "\n".join(lines) + "\n"


def save(corpus, path):
    Path(path).write_text(dumps(corpus), encoding="utf-8")


_TURN_FIELDS = [f.name for f in fields(Turn)]


def _parse_dialogue(record, lineno):
    try:
        turns = []
        for k, t in enumerate(record["turns"]):
            missing = [name for name in _TURN_FIELDS if name not in t]
            if missing:
                raise CorpusFormatError(f"line {lineno}: turn {k} missing field(s) {', '.join(missing)}")
            turns.append(Turn(str(t["user_text"]), str(t["user_intent"]), dict(t["user_entities"]),
                              str(t["system_action"]), str(t["system_text"]), bool(t["cooperative"])))
        return Dialogue(str(record["id"]), str(record["domain"]), turns)
    except CorpusFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusFormatError(f"line {lineno}: malformed dialogue record ({exc!r})") from None


def loads(text):
    lines = text.splitlines()
    if not lines:
        raise CorpusFormatError("line 1: missing metadata record")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line 1: invalid JSON ({exc.msg})") from None
    if not isinstance(meta, dict) or "format_version" not in meta:
        raise CorpusFormatError("line 1: metadata record lacks format_version")
    if meta["format_version"] != FORMAT_VERSION:
        raise CorpusFormatError(f"line 1: format_version {meta['format_version']} "
                                f"is not supported (expected {FORMAT_VERSION})")
    meta = {k: v for k, v in meta.items() if k != "format_version"}
    dialogues = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(record, dict):
            raise CorpusFormatError(f"line {lineno}: expected an object")
        dialogues.append(_parse_dialogue(record, lineno))
    return Corpus(dialogues, meta)


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))
