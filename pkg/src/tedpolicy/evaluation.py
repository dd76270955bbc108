"""Metrics, learning curves and probes of trained policies."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from tedpolicy.corpus import (
    NO_INPUT, Turn, chitchat_templates, answer_action, is_chitchat_intent, is_question,
)
from tedpolicy.featurizer import featurize_dialogue
from tedpolicy.model import (
    attention_maps, save_checkpoint, score_turns,
)
from tedpolicy.training import train

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    full_dialogue_accuracy: float
    action_accuracy: float
    macro_f1: float
    per_label: dict
    n_dialogues: int
    n_turns: int
    n_unknown_label_turns: int = 0

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        lines = [
            f"dialogues               {self.n_dialogues}",
            f"turns                   {self.n_turns}",
            f"full-dialogue accuracy  {self.full_dialogue_accuracy:.4f}",
            f"action accuracy         {self.action_accuracy:.4f}",
            f"macro F1                {self.macro_f1:.4f}",
        ]
        if self.n_unknown_label_turns:
            lines.append(f"unknown-label turns     {self.n_unknown_label_turns} (counted wrong)")
        lines.append("")
        lines.append(f"{'label':<32}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}")
        for label, s in sorted(self.per_label.items()):
            lines.append(f"{label:<32}{s['precision']:>10.4f}{s['recall']:>10.4f}"
                         f"{s['f1']:>10.4f}{s['support']:>9d}")
        return "\n".join(lines) + "\n"


def compute_metrics(records, unknown_labels=()):
    """Metrics from per-turn records holding ``dialogue_id``, ``gold`` and ``predicted``.

    Action accuracy is micro over turns. Macro F1 averages over labels with
    non-zero gold support.
    """
    unknown_labels = set(unknown_labels)
    if not records:
        return EvalReport(0.0, 0.0, 0.0, {}, 0, 0)
    by_dialogue = {}
    tp, pred_count, gold_count = {}, {}, {}
    correct = 0
    for r in records:
        ok = r["gold"] == r["predicted"]
        correct += ok
        by_dialogue[r["dialogue_id"]] = by_dialogue.get(r["dialogue_id"], True) and ok
        gold_count[r["gold"]] = gold_count.get(r["gold"], 0) + 1
        pred_count[r["predicted"]] = pred_count.get(r["predicted"], 0) + 1
        if ok:
            tp[r["gold"]] = tp.get(r["gold"], 0) + 1
    per_label = {}
    for label, support in gold_count.items():
        hits = tp.get(label, 0)
        precision = hits / pred_count[label] if pred_count.get(label) else 0.0
        recall = hits / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_label[label] = {"precision": precision, "recall": recall, "f1": f1, "support": support}
    return EvalReport(
        full_dialogue_accuracy=sum(by_dialogue.values()) / len(by_dialogue),
        action_accuracy=correct / len(records),
        macro_f1=float(np.mean([s["f1"] for s in per_label.values()])),
        per_label=per_label,
        n_dialogues=len(by_dialogue),
        n_turns=len(records),
        n_unknown_label_turns=sum(1 for r in records if r["gold"] in unknown_labels),
    )


def predict_corpus(model, corpus):
    """Top-1 prediction for every turn; one record per turn."""
    actions = model.vocab.actions
    records = []
    for dlg in corpus.dialogues:
        feats = featurize_dialogue(dlg, model.vocab, strict=False)
        scores = score_turns(model, feats)
        for t, turn in enumerate(dlg.turns):
            best = int(np.argmax(scores[t]))
            records.append({"dialogue_id": dlg.id, "turn": t, "gold": turn.system_action,
                            "predicted": actions[best], "score": float(scores[t, best])})
    return records


def evaluate(model, corpus):
    records = predict_corpus(model, corpus)
    unknown = {r["gold"] for r in records} - set(model.vocab.action_index)
    return compute_metrics(records, unknown), records


# -- learning curves -----------------------------------------------------------

@dataclass
class CurvePoint:
    encoder: str
    train_size: int
    seeds: list
    values: list
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        self.mean = float(np.mean(self.values))
        # population std: 0 for a single run
        self.std = float(np.std(self.values))


def subsample(corpus, size, seed):
    if size > len(corpus.dialogues):
        raise ValueError(f"train size {size} exceeds the {len(corpus.dialogues)} available dialogues")
    order = np.random.default_rng([seed, 2]).permutation(len(corpus.dialogues))[:size]
    return corpus.subset([corpus.dialogues[i] for i in sorted(order)], train_size=size)


def cell_name(encoder, size, seed):
    return f"{encoder}_n{size}_s{seed}"


def run_cell(train_corpus, test_corpus, config, encoder, size, seed, checkpoint_dir=None):
    cfg = replace(config, encoder_kind=encoder, seed=seed)
    model, _ = train(subsample(train_corpus, size, seed), cfg)
    report, _ = evaluate(model, test_corpus)
    if checkpoint_dir is not None:
        save_checkpoint(model, Path(checkpoint_dir) / f"{cell_name(encoder, size, seed)}.ckpt")
    logger.info("%s: full-dialogue accuracy %.4f", cell_name(encoder, size, seed),
                report.full_dialogue_accuracy)
    return report


def learning_curve(train_corpus, test_corpus, config, sizes, seeds,
                   encoders=("transformer", "lstm"), checkpoint_dir=None, workers=1):
    """Train every (encoder, size, seed) cell and aggregate full-dialogue accuracy."""
    for size in sizes:
        if size > len(train_corpus.dialogues):
            raise ValueError(f"train size {size} exceeds the {len(train_corpus.dialogues)} available dialogues")
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    cells = [(e, n, s) for e in encoders for n in sizes for s in seeds]

    def job(cell):
        return run_cell(train_corpus, test_corpus, config, *cell, checkpoint_dir=checkpoint_dir)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(job, cells))
    else:
        reports = [job(c) for c in cells]
    results = dict(zip(cells, reports))
    return [CurvePoint(e, n, list(seeds), [results[(e, n, s)].full_dialogue_accuracy for s in seeds])
            for e in encoders for n in sizes]


def curve_table(points):
    seeds = points[0].seeds if points else []
    head = ["encoder", "train_size", "mean", "std"] + [f"seed_{s}" for s in seeds]
    rows = ["\t".join(head)]
    for p in points:
        rows.append("\t".join([p.encoder, str(p.train_size), f"{p.mean:.6f}", f"{p.std:.6f}"]
                              + [f"{v:.6f}" for v in p.values]))
    return "\n".join(rows) + "\n"


def parse_curve_table(text):
    lines = text.strip().splitlines()
    head = lines[0].split("\t")
    seeds = [int(h.split("_", 1)[1]) for h in head[4:]]
    points = []
    for line in lines[1:]:
        cols = line.split("\t")
        points.append(CurvePoint(cols[0], int(cols[1]), seeds, [float(v) for v in cols[4:]]))
    return points


# -- probes --------------------------------------------------------------------

def _task_question_rows(dialogue):
    """Cooperative turns answered by a task question, after some chit-chat."""
    rows = []
    seen_chitchat = False
    for t, turn in enumerate(dialogue.turns):
        if is_chitchat_intent(turn.user_intent):
            seen_chitchat = True
        elif turn.cooperative and is_question(turn.system_action) and seen_chitchat:
            rows.append(t)
    return rows


def digression_attention(model, corpus):
    """Attention mass from task-question rows onto chit-chat versus task turns.

    Weights are averaged over layers and heads. Chit-chat columns are turns
    with a chit-chat intent; task columns are cooperative turns.
    """
    chit = task = 0.0
    n_rows = 0
    for dlg in corpus.dialogues:
        rows = _task_question_rows(dlg)
        if not rows:
            continue
        maps = attention_maps(model, featurize_dialogue(dlg, model.vocab, strict=False))
        mean_map = maps.mean(axis=(0, 1))
        is_chit = np.array([is_chitchat_intent(t.user_intent) for t in dlg.turns])
        is_task = np.array([t.cooperative for t in dlg.turns])
        for t in rows:
            chit += float(mean_map[t, :t + 1][is_chit[:t + 1]].sum())
            task += float(mean_map[t, :t + 1][is_task[:t + 1]].sum())
            n_rows += 1
    ratio = chit / task if task > 0 else math.inf
    return {"chitchat_mass": chit, "task_mass": task, "ratio": ratio, "n_rows": n_rows}


def insert_digression(dialogue, after, intent):
    """Copy of ``dialogue`` with one chit-chat exchange and its repair after turn ``after``."""
    texts, answer = chitchat_templates(intent)
    pending = dialogue.turns[after].system_action
    extra = [
        Turn(texts[0], intent, {}, answer_action(intent), answer, False),
        Turn("", NO_INPUT, {}, pending, dialogue.turns[after].system_text, False),
    ]
    turns = dialogue.turns[:after + 1] + extra + dialogue.turns[after + 1:]
    return type(dialogue)(f"{dialogue.id}+{after}", dialogue.domain, turns)


def _argmax_actions(model, dialogue):
    return score_turns(model, featurize_dialogue(dialogue, model.vocab, strict=False)).argmax(axis=1)


def _is_task_action(label):
    return is_question(label) or label.startswith("confirm_")


def insertion_sites(dialogue):
    """Turns that ask a question the user answers right away."""
    return [i for i in range(len(dialogue.turns) - 1)
            if is_question(dialogue.turns[i].system_action) and dialogue.turns[i + 1].cooperative]


def digression_robustness(model, corpus, intents, seed=0):
    """Share of insertion sites where any later task-action argmax changes."""
    rng = np.random.default_rng(seed)
    changed = sites = 0
    for dlg in corpus.dialogues:
        base = _argmax_actions(model, dlg)
        for i in insertion_sites(dlg):
            intent = intents[int(rng.integers(len(intents)))]
            new = _argmax_actions(model, insert_digression(dlg, i, intent))
            later = [j for j in range(i + 1, len(dlg.turns)) if _is_task_action(dlg.turns[j].system_action)]
            sites += 1
            changed += any(base[j] != new[j + 2] for j in later)
    return {"change_rate": changed / sites if sites else 0.0, "changed": changed, "sites": sites}
