import numpy as np
import pytest

from tedpolicy.config import ConfigError, parse_config
from tedpolicy.heatmap import matrix_tsv, parse_matrix_tsv, render_svg, write_attention


def test_config_addresses_every_field():
    text = """
    # model
    model.width = 64
    n_heads = 2
    epochs = 5
    interleave = true
    learning_rate = 0.01
    encoder_kind = lstm
    # corpus
    n_dialogues = 12
    domains = hotel
    required_slots.hotel = location,nights
    slot_values.nights = 1,2,3
    digression_length_range = 2,4
    chitchat_intent_pool = chitchat_joke,chitchat_time
    dontcare_probability = 0
    seed = 7
    curve.sizes = 5,10
    """
    run = parse_config(text)
    m, c = run.model, run.corpus
    assert (m.width, m.n_heads, m.epochs, m.interleave, m.learning_rate, m.encoder_kind) == \
        (64, 2, 5, True, 0.01, "lstm")
    assert m.seed == c.seed == 7
    assert c.domains == ("hotel",) and c.required_slots["hotel"] == ("location", "nights")
    assert c.slot_values["nights"] == ("1", "2", "3")
    assert c.digression_length_range == (2, 4)
    assert c.chitchat_intent_pool == ("chitchat_joke", "chitchat_time")
    assert run.curve.sizes == (5, 10)


def test_section_prefix_targets_one_seed():
    run = parse_config("model.seed = 3\ncorpus.seed = 4")
    assert (run.model.seed, run.corpus.seed) == (3, 4)


@pytest.mark.parametrize("text", ["nope = 1", "width = wide", "width", "required_slots = a",
                                  "width = 10\nn_heads = 4", "interleave = maybe"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def _maps(n=4, seed=0):
    rng = np.random.default_rng(seed)
    m = np.tril(rng.random((1, 2, n, n)))
    return m / m.sum(-1, keepdims=True)


def test_matrix_tsv_round_trip():
    m = _maps()[0, 0]
    labels = [f"{i}:greet" for i in range(4)]
    back, names = parse_matrix_tsv(matrix_tsv(m, labels))
    assert names == labels and np.array_equal(back, m)
    with pytest.raises(ValueError):
        matrix_tsv(m, labels[:2])


def test_svg_masks_upper_triangle():
    svg = render_svg(_maps()[0, 0], ["a", "b", "c", "d"], "t")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count('fill="#d9d9d9"') == 6


def test_write_attention(tmp_path):
    paths = write_attention(tmp_path / "out" / "d1", _maps(), list("abcd"))
    names = sorted(p.name for p in paths)
    assert names == ["d1.layer0.head0.tsv", "d1.layer0.head1.tsv", "d1.mean.tsv", "d1.svg"]
    mean, _ = parse_matrix_tsv((tmp_path / "out" / "d1.mean.tsv").read_text())
    assert np.allclose(mean, _maps().mean(axis=(0, 1)), atol=0, rtol=0)
