"""Command-line entry point: ``tedpolicy <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from tedpolicy.config import ConfigError, RunConfig, load_config
from tedpolicy.corpus import (
    CorpusFormatError, Turn, generate_corpus, load, save, split, validate_corpus,
)
from tedpolicy.evaluation import curve_table, evaluate, learning_curve
from tedpolicy.featurizer import FeaturizationError, featurize_dialogue
from tedpolicy.heatmap import turn_labels, write_attention
from tedpolicy.model import CheckpointError, attention_maps, load_checkpoint, predict, save_checkpoint
from tedpolicy.tensor import NumericError
from tedpolicy.training import TrainingError, train

logger = logging.getLogger("tedpolicy")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _run_config(args):
    run = load_config(args.config) if args.config else RunConfig()
    model, corpus = run.model, run.corpus
    if args.seed is not None:
        model, corpus = replace(model, seed=args.seed), replace(corpus, seed=args.seed)
    if getattr(args, "encoder", None):
        model = replace(model, encoder_kind=args.encoder)
    if getattr(args, "mode", None):
        model = replace(model, mode=args.mode)
    if getattr(args, "max_history", None) is not None:
        model = replace(model, max_history=args.max_history)
    try:
        model.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return replace(run, model=model, corpus=corpus)


def _load_corpus(path):
    corpus = load(path)
    report = validate_corpus(corpus)
    if not report.ok:
        first = report.violations[0]
        raise DataError(f"{path}: {len(report.violations)} validation violation(s), first: {first}")
    return corpus


def _require_out(args):
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    return Path(args.out)


# -- commands ------------------------------------------------------------------

def cmd_generate(args):
    run = _run_config(args)
    out = _require_out(args)
    corpus = generate_corpus(run.corpus)
    report = validate_corpus(corpus)
    if not report.ok:
        raise DataError(f"generated corpus has {len(report.violations)} violation(s)")
    save(corpus, out)
    print(f"wrote {len(corpus)} dialogues to {out} "
          f"({report.n_digressions} digressions, {report.n_noncooperative_turns} non-cooperative turns)")


def cmd_train(args):
    run = _run_config(args)
    out = _require_out(args)
    corpus = _load_corpus(args.corpus)

    def progress(epoch, loss):
        logger.info("epoch %d  loss %.6f", epoch, loss)

    model, history = train(corpus, run.model, on_epoch=progress)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    Path(f"{out}.vocab").write_text(model.vocab.to_text())
    Path(f"{out}.loss.tsv").write_text("epoch\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(history)))
    print(f"wrote {out} ({run.model.encoder_kind}, {len(history)} epochs, "
          f"final loss {history[-1] if history else float('nan'):.6f})")


def cmd_eval(args):
    digest = None
    if args.vocab:
        from tedpolicy.featurizer import FeatureVocab
        digest = FeatureVocab.from_text(Path(args.vocab).read_text()).digest()
    model = load_checkpoint(args.checkpoint, expected_vocab_digest=digest)
    corpus = _load_corpus(args.corpus)
    report, records = evaluate(model, corpus)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{out}.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        Path(f"{out}.txt").write_text(text)
        with open(f"{out}.predictions.jsonl", "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_curve(args):
    run = _run_config(args)
    corpus = _load_corpus(args.corpus)
    if args.test:
        train_corpus, test_corpus = corpus, _load_corpus(args.test)
    else:
        train_corpus, test_corpus = split(corpus, run.curve.train_fraction, run.model.seed)
    sizes = args.sizes or run.curve.sizes
    seeds = args.seeds or run.curve.seeds
    encoders = (args.encoder,) if args.encoder else ("transformer", "lstm")
    if max(sizes) > len(train_corpus):
        raise DataError(f"train size {max(sizes)} exceeds the {len(train_corpus)} training dialogues")
    points = learning_curve(train_corpus, test_corpus, run.model, sizes, seeds, encoders,
                            checkpoint_dir=args.checkpoint_dir, workers=args.workers)
    table = curve_table(points)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table)


def cmd_attention(args):
    out = _require_out(args)
    model = load_checkpoint(args.checkpoint)
    if not model.is_transformer:
        raise DataError("attention maps need a transformer checkpoint; this one is an LSTM")
    corpus = load(args.corpus)
    try:
        dialogue = corpus.by_id(args.dialogue)
    except KeyError:
        raise DataError(f"no dialogue {args.dialogue!r} in {args.corpus}") from None
    maps = attention_maps(model, featurize_dialogue(dialogue, model.vocab, strict=False))
    for path in write_attention(out, maps, turn_labels(dialogue)):
        print(path)


# -- repl ----------------------------------------------------------------------

_MODULAR_INPUT = re.compile(r"^\s*([A-Za-z0-9_]+)\s*(?:\[(.*)\])?\s*$")


def parse_modular_input(line):
    """``intent[entity=value,...]`` -> (intent, entities)."""
    m = _MODULAR_INPUT.match(line)
    if not m:
        raise ValueError("expected intent or intent[entity=value,...]")
    entities = {}
    for part in (m.group(2) or "").split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ValueError(f"entity {part.strip()!r} needs a value")
        name, value = (s.strip() for s in part.split("=", 1))
        entities[name] = value
    return m.group(1), entities


class Session:
    """Dialogue state of one REPL conversation."""

    def __init__(self, model):
        self.model = model
        self.turns = []

    def reset(self):
        self.turns = []

    def user_turn(self, line):
        vocab = self.model.vocab
        if vocab.mode == "modular":
            intent, entities = parse_modular_input(line)
            if intent not in vocab.intent_index:
                raise ValueError(f"unknown intent {intent!r}; known intents: {', '.join(sorted(vocab.intent_index))}")
            unknown = sorted(set(entities) - set(vocab.entity_index))
            if unknown:
                raise ValueError(f"unknown entity {unknown[0]!r}; known entities: {', '.join(sorted(vocab.entity_index))}")
            turn = Turn(line, intent, entities, "", "", True)
        else:
            turn = Turn(line, "", {}, "", "", True)
        feats = featurize_dialogue(self.turns + [turn], vocab, strict=False)
        pred = predict(self.model, feats)
        top = pred.top
        self.turns.append(replace(turn, system_action=top, system_text=vocab.action_text.get(top, "")))
        return pred


def cmd_repl(args, stdin=None, stdout=None):
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    model = load_checkpoint(args.checkpoint)
    session = Session(model)
    interactive = stdin.isatty()
    hint = "intent[entity=value,...]" if model.vocab.mode == "modular" else "free text"
    print(f"type {hint}; :reset, :history, :quit", file=stdout)
    while True:
        if interactive:
            stdout.write("> ")
            stdout.flush()
        line = stdin.readline()
        if not line:
            break
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":reset":
            session.reset()
            print("(reset)", file=stdout)
            continue
        if line == ":history":
            for i, t in enumerate(session.turns):
                print(f"{i}\t{t.user_text}\t{t.system_action}", file=stdout)
            continue
        try:
            pred = session.user_turn(line)
        except ValueError as exc:
            print(f"error: {exc}", file=stdout)
            continue
        for rank, (label, score) in enumerate(pred.ranked[:3], 1):
            print(f"{rank}. {label}\t{score!r}", file=stdout)


# -- parser --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="overrides both model and corpus seeds")
    common.add_argument("--out", help="output path or prefix")
    common.add_argument("--encoder", choices=("transformer", "lstm"))
    common.add_argument("--mode", choices=("modular", "e2e"))
    common.add_argument("--max-history", type=int, dest="max_history")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="tedpolicy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("generate", parents=[common], help="generate a digression corpus")

    p = sub.add_parser("train", parents=[common], help="train a policy")
    p.add_argument("corpus")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--vocab", help="vocab file the checkpoint must match")

    p = sub.add_parser("curve", parents=[common], help="learning-curve sweep over sizes and seeds")
    p.add_argument("corpus")
    p.add_argument("--test", help="fixed test corpus; otherwise the corpus is split")
    p.add_argument("--sizes", type=_int_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("attention", parents=[common], help="export attention matrices and a heatmap")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--dialogue", required=True)

    p = sub.add_parser("repl", parents=[common], help="talk to a trained policy")
    p.add_argument("checkpoint")
    return parser


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
    "curve": cmd_curve, "attention": cmd_attention, "repl": cmd_repl,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits 0 through argparse
        return int(exc.code or 0)
    except (TrainingError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, CorpusFormatError, FeaturizationError, CheckpointError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
