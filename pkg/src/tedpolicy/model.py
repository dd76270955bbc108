"""Dialogue and action towers of the TED policy and its LSTM twin.

The dialogue tower reads a window of the most recent ``max_history`` turns.
With the transformer encoder the window is processed by causal self-attention
and the state of the newest turn is read out; the LSTM encoder runs a single
recurrent cell over the same window. Both towers end in a linear map into a
20-dimensional space where actions are ranked by dot product.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from tedpolicy.featurizer import MODES, FeatureVocab, action_matrix
from tedpolicy.tensor import (
    ShapeError, Tensor, add, gather_rows, glorot_uniform, lstm_cell, masked_softmax,
    matmul, mul, relu, scale, slice_last, slice_rows, stack, transpose,
)

TRANSFORMER = "transformer"
LSTM = "lstm"
ENCODERS = (TRANSFORMER, LSTM)
CHECKPOINT_VERSION = 1
_MAGIC = "tedpolicy-checkpoint"


@dataclass
class TedConfig:
    embed_dim: int = 20
    width: int = 128
    n_layers: int = 1
    n_heads: int = 4
    ff_width: int = 256
    max_history: int = 10
    n_negatives: int = 20
    batch_size: int = 32
    epochs: int = 40
    learning_rate: float = 1e-3
    seed: int = 0
    encoder_kind: str = TRANSFORMER
    mode: str = "modular"
    interleave: bool = False
    dropout: float = 0.0
    balance_max_repeat: int = 4
    embed_init_scale: float = 0.1

    def validate(self):
        if self.encoder_kind not in ENCODERS:
            raise ValueError(f"encoder_kind must be one of {ENCODERS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("embed_dim", "width", "n_layers", "n_heads", "ff_width", "max_history",
                     "n_negatives", "batch_size", "balance_max_repeat"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.width % self.n_heads:
            raise ValueError("width must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return self

    @property
    def stride(self):
        return 2 if self.interleave else 1

    @property
    def span(self):
        """Window length in encoder positions."""
        return self.max_history * self.stride

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown TedConfig field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def parameter_shapes(config, vocab):
    """Name -> shape of every parameter, in creation order."""
    d, f = config.width, vocab.input_dim
    shapes = {"input/W": (f, d), "input/b": (d,)}
    if config.encoder_kind == TRANSFORMER:
        dk = d // config.n_heads
        shapes["position"] = (config.span, d)
        for layer in range(config.n_layers):
            for head in range(config.n_heads):
                for w in ("Wq", "Wk", "Wv"):
                    shapes[f"layer{layer}/head{head}/{w}"] = (d, dk)
                shapes[f"layer{layer}/head{head}/Wo"] = (dk, d)
            shapes[f"layer{layer}/attn_b"] = (d,)
            shapes[f"layer{layer}/ff/W1"] = (d, config.ff_width)
            shapes[f"layer{layer}/ff/b1"] = (config.ff_width,)
            shapes[f"layer{layer}/ff/W2"] = (config.ff_width, d)
            shapes[f"layer{layer}/ff/b2"] = (d,)
    else:
        shapes["lstm/Wx"] = (d, 4 * d)
        shapes["lstm/Wh"] = (d, 4 * d)
        shapes["lstm/b"] = (4 * d,)
    shapes["dialogue_embed/W"] = (d, config.embed_dim)
    shapes["dialogue_embed/b"] = (config.embed_dim,)
    shapes["action/W"] = (vocab.action_dim, d)
    shapes["action/b"] = (d,)
    shapes["action_embed/W"] = (d, config.embed_dim)
    shapes["action_embed/b"] = (config.embed_dim,)
    return shapes


class TedModel:
    """Parameters, config and vocab of one policy."""

    def __init__(self, config, vocab, params):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.action_features = action_matrix(vocab)

    @classmethod
    def initialize(cls, config, vocab):
        """Glorot-uniform weights, zero biases; the two embedding maps are scaled
        by ``embed_init_scale`` so that initial similarities are near zero."""
        config.validate()
        rng = np.random.default_rng(config.seed)
        params = {}
        for name, shape in parameter_shapes(config, vocab).items():
            if len(shape) == 1:
                value = np.zeros(shape)
            else:
                value = glorot_uniform(rng, *shape)
                if name.endswith("embed/W"):
                    value *= config.embed_init_scale
            params[name] = Tensor(value, requires_grad=True, name=name)
        return cls(config, vocab, params)

    @property
    def is_transformer(self):
        return self.config.encoder_kind == TRANSFORMER

    def arrays(self):
        return {k: t.data for k, t in self.params.items()}

    def p(self, name):
        return self.params[name]


# -- sequence layout -----------------------------------------------------------

def position_inputs(features, vocab, interleave=False):
    """Encoder input rows and the readout position of each turn.

    Without interleaving each turn is one position holding
    ``user | slots | previous action``. With interleaving turn t occupies two
    positions: the previous system action, then the user input and slots.
    """
    if not features:
        return np.zeros((0, vocab.input_dim)), np.zeros(0, dtype=np.int64)
    rows = np.stack([f.input_vec() for f in features])
    if not interleave:
        return rows, np.arange(len(features))
    cut = vocab.user_dim + vocab.slot_dim
    out = np.zeros((2 * len(features), rows.shape[1]))
    out[0::2, cut:] = rows[:, cut:]
    out[1::2, :cut] = rows[:, :cut]
    return out, 2 * np.arange(len(features)) + 1


def window_start(readout_pos, span):
    return max(0, int(readout_pos) - span + 1)


# -- encoders ------------------------------------------------------------------

def _dropout(x, rate, rng):
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor._wrap(keep))


def _attention_mask(length, valid):
    """Causal mask over a left-padded window; pad rows only see themselves."""
    tril = np.tril(np.ones((length, length), dtype=np.uint8))
    if valid is None:
        return tril
    first = length - np.asarray(valid)[:, None, None]
    keys = np.arange(length)[None, None, :] >= first
    rows = np.arange(length)[None, :, None] >= first
    eye = np.eye(length, dtype=bool)[None]
    return np.where(rows, tril.astype(bool) & keys, eye).astype(np.uint8)


def _transformer(model, x, valid=None, attention=None, rng=None):
    cfg = model.config
    p = model.p
    length = x.shape[1]
    mask = _attention_mask(length, valid)
    dk = cfg.width // cfg.n_heads
    # positions count back from the newest turn, which always sits at span-1
    pos = slice_rows(p("position"), cfg.span - length, cfg.span)
    h = add(add(matmul(x, p("input/W")), p("input/b")), pos)
    h = _dropout(h, cfg.dropout, rng)
    for layer in range(cfg.n_layers):
        attn = None
        for head in range(cfg.n_heads):
            pre = f"layer{layer}/head{head}/"
            q = matmul(h, p(pre + "Wq"))
            k = matmul(h, p(pre + "Wk"))
            v = matmul(h, p(pre + "Wv"))
            probs = masked_softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dk)), mask)
            if attention is not None:
                attention.append(probs.data)
            out = matmul(matmul(probs, v), p(pre + "Wo"))
            attn = out if attn is None else add(attn, out)
        h = add(h, _dropout(add(attn, p(f"layer{layer}/attn_b")), cfg.dropout, rng))
        ff = relu(add(matmul(h, p(f"layer{layer}/ff/W1")), p(f"layer{layer}/ff/b1")))
        ff = add(matmul(ff, p(f"layer{layer}/ff/W2")), p(f"layer{layer}/ff/b2"))
        h = add(h, _dropout(ff, cfg.dropout, rng))
    return h


def _lstm(model, x, rng=None):
    cfg = model.config
    p = model.p
    n, length = x.shape[0], x.shape[1]
    d = cfg.width
    u = _dropout(add(matmul(x, p("input/W")), p("input/b")), cfg.dropout, rng)
    zx = add(matmul(u, p("lstm/Wx")), p("lstm/b"))
    rows = np.arange(n)
    h = c = None
    states = []
    for step in range(length):
        z = gather_rows(zx, rows, np.full(n, step))
        if h is None:
            c = Tensor._wrap(np.zeros((n, d)))
        else:
            z = add(z, matmul(h, p("lstm/Wh")))
        hc = lstm_cell(z, c)
        h = slice_last(hc, 0, d)
        c = slice_last(hc, d, 2 * d)
        states.append(h)
    return stack(states, axis=1)


def encode_windows(model, windows, valid=None, attention=None, rng=None):
    """Encode a (n_windows, length, input_dim) array; returns (n, length, width).

    ``valid`` gives the number of real positions per window for left-padded
    transformer windows; without it every position is real.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != model.vocab.input_dim:
        raise ShapeError(f"encoder expects (n, length, {model.vocab.input_dim}), got {windows.shape}")
    if windows.shape[1] > model.config.span:
        raise ShapeError(f"window of {windows.shape[1]} positions exceeds max history")
    x = Tensor._wrap(windows)
    if model.is_transformer:
        return _transformer(model, x, valid, attention, rng)
    return _lstm(model, x, rng)


def _turn_windows(model, features):
    x, readout = position_inputs(features, model.vocab, model.config.interleave)
    span = model.config.span
    for pos in readout:
        yield x[window_start(pos, span):pos + 1]


def encode_dialogue(model, features):
    """State of every turn, shape (turns, width).

    Turn t is encoded from its own window of the last ``max_history`` turns,
    so row t only depends on turns ``max(0, t-N+1) .. t``.
    """
    if not features:
        raise ValueError("cannot encode an empty dialogue")
    return np.stack([encode_windows(model, w[None]).data[0, -1] for w in _turn_windows(model, features)])


def lstm_encode(model, features):
    if model.is_transformer:
        raise ValueError("lstm_encode needs an LSTM model")
    return encode_dialogue(model, features)


# -- similarity head -----------------------------------------------------------

def embed_dialogue(model, states):
    """``E_dialogue`` applied to (rows, width) states."""
    return add(matmul(states, model.p("dialogue_embed/W")), model.p("dialogue_embed/b"))


def embed_actions(model, action_features=None):
    """``E_action`` applied to (n_actions, action_dim) feature rows."""
    y = model.action_features if action_features is None else action_features
    hidden = relu(add(matmul(Tensor._wrap(np.atleast_2d(y)), model.p("action/W")), model.p("action/b")))
    return add(matmul(hidden, model.p("action_embed/W")), model.p("action_embed/b"))


def embed_pair(model, a_dialogue, action_features):
    """Embed one dialogue state and one action feature vector into the shared space."""
    a = np.atleast_2d(np.asarray(a_dialogue, dtype=np.float64))
    y = np.atleast_2d(np.asarray(action_features, dtype=np.float64))
    if a.shape[1] != model.config.width or y.shape[1] != model.vocab.action_dim:
        raise ShapeError("embed_pair: width mismatch")
    return embed_dialogue(model, Tensor._wrap(a)).data[0], embed_actions(model, y).data[0]


def similarity(h_dialogue, h_action):
    h_dialogue = np.asarray(h_dialogue, dtype=np.float64)
    h_action = np.asarray(h_action, dtype=np.float64)
    if h_dialogue.shape != h_action.shape or h_dialogue.ndim != 1:
        raise ShapeError(f"similarity: shapes {h_dialogue.shape} vs {h_action.shape}")
    return float(h_dialogue @ h_action)


def _turn_scores(model, state, action_emb):
    h = embed_dialogue(model, Tensor._wrap(state[None])).data[0]
    return action_emb @ h


def score_turns(model, features):
    """Similarity of every turn's dialogue embedding against every action, (turns, actions)."""
    states = encode_dialogue(model, features)
    action_emb = embed_actions(model).data
    return np.stack([_turn_scores(model, s, action_emb) for s in states])


@dataclass
class Prediction:
    ranked: list
    attention: np.ndarray | None = None

    @property
    def top(self):
        return self.ranked[0][0]


def rank_actions(labels, scores, action_index):
    """Sort by score descending; ties go to the lower action index."""
    order = sorted(range(len(labels)), key=lambda i: (-scores[i], action_index[labels[i]]))
    return [(labels[i], float(scores[i])) for i in order]


def predict(model, prefix_features, with_attention=False):
    """Rank all actions for the last turn of ``prefix_features``."""
    if not prefix_features:
        raise ValueError("predict needs a non-empty prefix")
    x, readout = position_inputs(prefix_features, model.vocab, model.config.interleave)
    window = x[window_start(readout[-1], model.config.span):readout[-1] + 1]
    state = encode_windows(model, window[None]).data[0, -1]
    scores = _turn_scores(model, state, embed_actions(model).data)
    ranked = rank_actions(model.vocab.actions, scores, model.vocab.action_index)
    attn = attention_maps(model, prefix_features) if with_attention and model.is_transformer else None
    return Prediction(ranked, attn)


def attention_maps(model, features):
    """Attention of each prediction turn over history turns.

    Returns (layers, heads, turns, turns); row t holds turn t's weights over
    the turns in its window and is zero above the diagonal.
    """
    if not model.is_transformer:
        raise ValueError("attention maps need a transformer encoder")
    cfg = model.config
    n_turns = len(features)
    _, readout = position_inputs(features, model.vocab, cfg.interleave)
    out = np.zeros((cfg.n_layers, cfg.n_heads, n_turns, n_turns))
    for t, window in enumerate(_turn_windows(model, features)):
        probs = []
        encode_windows(model, window[None], attention=probs)
        start = window_start(readout[t], cfg.span)
        positions = np.arange(start, readout[t] + 1)
        # interleaved positions fold back onto their turn
        turn_of = positions // cfg.stride
        for i, pr in enumerate(probs):
            layer, head = divmod(i, cfg.n_heads)
            np.add.at(out[layer, head, t], turn_of, pr[0, -1])
    return out


# -- checkpoints ---------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def _config_lines(config):
    return [f"config.{k}={json.dumps(v)}" for k, v in config.to_dict().items()]


def checkpoint_bytes(model):
    names = sorted(model.params)
    vocab_text = model.vocab.to_text()
    head = [f"{_MAGIC} {CHECKPOINT_VERSION}", *_config_lines(model.config),
            f"vocab_digest={model.vocab.digest()}", f"vocab_lines={vocab_text.count(chr(10))}"]
    head.extend(vocab_text.splitlines())
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape)
        head.append(f"param {name} {shape} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    head.append("end")
    return ("\n".join(head) + "\n").encode("utf-8") + b"".join(blobs)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path, expected_vocab_digest=None):
    """Read a checkpoint; rejects digest, config and shape mismatches."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return checkpoint_from_bytes(raw, expected_vocab_digest)


def checkpoint_from_bytes(raw, expected_vocab_digest=None):
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0:
        raise CheckpointError("manifest terminator not found")
    lines = raw[:cut].decode("utf-8").split("\n")
    blob = raw[cut + len(marker):]
    if lines[0] != f"{_MAGIC} {CHECKPOINT_VERSION}":
        raise CheckpointError(f"unsupported checkpoint header {lines[0]!r}")
    cfg = {}
    i = 1
    while lines[i].startswith("config."):
        key, value = lines[i][len("config."):].split("=", 1)
        cfg[key] = json.loads(value)
        i += 1
    try:
        config = TedConfig.from_dict(cfg).validate()
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from None
    digest = lines[i].split("=", 1)[1]
    n_vocab = int(lines[i + 1].split("=", 1)[1])
    i += 2
    vocab = FeatureVocab.from_text("\n".join(lines[i:i + n_vocab]) + "\n")
    i += n_vocab
    if vocab.digest() != digest:
        raise CheckpointError("vocab digest does not match the embedded vocab")
    if expected_vocab_digest is not None and expected_vocab_digest != digest:
        raise CheckpointError("vocab digest mismatch")
    if vocab.mode != config.mode:
        raise CheckpointError(f"config mode {config.mode} does not match vocab mode {vocab.mode}")
    expected = parameter_shapes(config, vocab)
    params = {}
    for line in lines[i:]:
        _, name, shape, offset = line.split(" ")
        shape = tuple(int(s) for s in shape.split("x"))
        if expected.get(name) != shape:
            raise CheckpointError(f"parameter {name} has shape {shape}, config implies {expected.get(name)}")
        count = int(np.prod(shape))
        start = int(offset)
        if start + 8 * count > len(blob):
            raise CheckpointError(f"parameter {name} runs past the end of the file")
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape)
        params[name] = Tensor(data.astype(np.float64), requires_grad=True, name=name)
    if set(params) != set(expected):
        raise CheckpointError("parameter table does not match the config")
    return TedModel(config, vocab, params)
