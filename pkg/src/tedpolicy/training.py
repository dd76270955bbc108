"""Training loop around the dot-product loss with sampled negatives."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from tedpolicy.featurizer import build_vocab, featurize_dialogue
from tedpolicy.model import (
    TedModel, embed_actions, embed_dialogue, encode_windows, position_inputs, window_start,
)
from tedpolicy.tensor import (
    AdamState, NumericError, Tape, Tensor, adam_step, backward, candidate_loss, gather_rows,
    logsumexp, matmul, mul, sub, sum_all, transpose,
)

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def ted_loss(s_plus, s_minus=()):
    """Loss of one time step: ``-(S+ - log(exp(S+) + sum(exp(S-))))``.

    Accepts floats or tensors; a tensor ``s_plus`` of shape (1+k,) is read as
    the positive score followed by the negatives. Non-finite scores raise
    :class:`NumericError`.
    """
    if isinstance(s_plus, Tensor):
        scores = s_plus
    else:
        scores = Tensor(np.concatenate([[float(s_plus)], np.asarray(s_minus, dtype=np.float64)]))
    first = Tensor._wrap(np.zeros(scores.shape))
    first.data[0] = 1.0
    return sub(logsumexp(scores), sum_all(mul(scores, first)))


def negative_mask(gold, n_actions, k, rng):
    """0/1 matrix with k distinct non-gold columns per row, uniform without replacement."""
    gold = np.asarray(gold, dtype=np.int64)
    if k >= n_actions:
        raise ValueError(f"cannot draw {k} negatives from {n_actions} actions")
    rows = np.arange(len(gold))
    keys = rng.random((len(gold), n_actions))
    keys[rows, gold] = np.inf
    picked = np.argpartition(keys, k - 1, axis=1)[:, :k] if k > 0 else np.zeros((len(gold), 0), int)
    mask = np.zeros((len(gold), n_actions), dtype=np.uint8)
    mask[rows[:, None], picked] = 1
    return mask


def sample_negatives(gold_label, vocab, k, rng):
    """k distinct action labels other than ``gold_label``."""
    n = len(vocab.action_index)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of actions ({n})")
    mask = negative_mask([vocab.action_index[gold_label]], n, k, rng)[0]
    actions = vocab.actions
    return {actions[i] for i in np.flatnonzero(mask)}


def repeat_factors(label_lists, max_repeat=4):
    """How often each dialogue appears per epoch.

    A dialogue is repeated ``median_count / count(rarest label)`` times
    (rounded, clipped to ``[1, max_repeat]``), where counts are turn-level
    label frequencies over the whole corpus.
    """
    counts = Counter(label for labels in label_lists for label in labels)
    if not counts:
        return np.ones(len(label_lists), dtype=np.int64)
    reference = float(np.median(list(counts.values())))
    out = []
    for labels in label_lists:
        rarest = min((counts[x] for x in labels), default=reference)
        out.append(int(np.clip(round(reference / rarest), 1, max_repeat)))
    return np.array(out, dtype=np.int64)


def _label_lists(corpus_or_labels):
    if hasattr(corpus_or_labels, "dialogues"):
        return [[t.system_action for t in d.turns] for d in corpus_or_labels.dialogues]
    return list(corpus_or_labels)


def balanced_batches(train_corpus, batch_size, rng, max_repeat=4, factors=None):
    """One epoch of batches (lists of dialogue indices) with rare labels oversampled."""
    labels = _label_lists(train_corpus)
    if not labels:
        raise ValueError("balanced_batches needs a non-empty corpus")
    if factors is None:
        factors = repeat_factors(labels, max_repeat)
    pool = np.repeat(np.arange(len(labels)), factors)
    order = pool[rng.permutation(len(pool))]
    return [order[i:i + batch_size].tolist() for i in range(0, len(order), batch_size)]


@dataclass
class Encoded:
    x: np.ndarray
    readout: np.ndarray
    targets: np.ndarray


def encode_corpus(corpus, vocab, interleave=False, strict=True):
    out = []
    for dlg in corpus.dialogues:
        feats = featurize_dialogue(dlg, vocab, strict=strict)
        x, readout = position_inputs(feats, vocab, interleave)
        out.append(Encoded(x, readout, np.array([f.action_target_index for f in feats])))
    return out


def build_batch(items, span, own_windows=False):
    """Stack the windows needed to predict every turn of ``items``.

    With ``own_windows`` every turn gets its own left-padded window ending at
    the turn (transformer). Otherwise turns in the first ``span`` positions
    share one right-padded window from position 0 and later turns get their
    own (LSTM, whose state only looks backwards).
    Returns windows, valid lengths, window index, position index, gold, weights.
    """
    windows, win_idx, pos_idx, gold, weights = [], [], [], [], []
    per_dialogue = 1.0 / len(items)
    for item in items:
        n_valid = int((item.targets >= 0).sum())
        if not n_valid:
            continue
        w = per_dialogue / n_valid
        early = None
        for pos, target in zip(item.readout, item.targets):
            if target < 0:
                continue
            start = window_start(pos, span)
            if start == 0 and not own_windows:
                if early is None:
                    early = len(windows)
                    windows.append(item.x[:min(len(item.x), span)])
                win_idx.append(early)
                pos_idx.append(pos)
            else:
                win_idx.append(len(windows))
                windows.append(item.x[start:pos + 1])
                pos_idx.append(-1)
            gold.append(target)
            weights.append(w)
    length = max(len(w) for w in windows)
    batch = np.zeros((len(windows), length, windows[0].shape[1]))
    valid = np.array([len(w) for w in windows])
    for i, w in enumerate(windows):
        if own_windows:
            batch[i, length - len(w):] = w
        else:
            batch[i, :len(w)] = w
    pos_idx = np.array(pos_idx)
    last = pos_idx < 0
    pos_idx[last] = length - 1 if own_windows else valid[np.array(win_idx)[last]] - 1
    return batch, valid, np.array(win_idx), pos_idx, np.array(gold), np.array(weights)


def batch_loss(model, items, rng, k):
    own = model.is_transformer
    windows, valid, win_idx, pos_idx, gold, weights = build_batch(items, model.config.span, own)
    drop_rng = rng if model.config.dropout > 0 else None
    states = encode_windows(model, windows, valid if own else None, rng=drop_rng)
    h_dialogue = embed_dialogue(model, gather_rows(states, win_idx, pos_idx))
    h_action = embed_actions(model)
    scores = matmul(h_dialogue, transpose(h_action))
    n_actions = scores.shape[1]
    cand = negative_mask(gold, n_actions, k, rng)
    cand[np.arange(len(gold)), gold] = 1
    return candidate_loss(scores, gold, cand, weights)


def effective_negatives(config, vocab):
    n = len(vocab.action_index)
    if n < 2:
        raise TrainingError("training needs at least two distinct actions")
    k = min(config.n_negatives, n - 1)
    if k < config.n_negatives:
        logger.info("n_negatives=%d clipped to %d (only %d actions)", config.n_negatives, k, n)
    return k


def train(train_corpus, config, vocab=None, on_epoch=None):
    """Fit a fresh model; returns ``(model, per-epoch mean batch loss)``."""
    config.validate()
    if not train_corpus.dialogues:
        raise TrainingError("empty training corpus")
    if vocab is None:
        vocab = build_vocab(train_corpus, config.mode)
    model = TedModel.initialize(config, vocab)
    k = effective_negatives(config, vocab)
    items = encode_corpus(train_corpus, vocab, config.interleave)
    factors = repeat_factors(_label_lists(train_corpus), config.balance_max_repeat)
    rng = np.random.default_rng([config.seed, 1])
    params = model.arrays()
    state = AdamState()
    history = []
    for epoch in range(config.epochs):
        losses = []
        for b, batch in enumerate(balanced_batches(train_corpus, config.batch_size, rng, factors=factors)):
            try:
                with Tape() as tape:
                    loss = batch_loss(model, [items[i] for i in batch], rng, k)
                backward(tape, loss)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            grads = {name: t.grad for name, t in model.params.items()}
            adam_step(params, grads, state, lr=config.learning_rate)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        logger.debug("epoch %d loss %.6f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return model, history
