"""Command-line entry point: corpus mining, vocabulary training, model
training, evaluation, one-off generation, and the inference service.

Exit codes: 0 success, 1 usage error, 2 runtime error. ``TITLE_FORGE_LOG``
selects log verbosity (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from .corpus import Language
from .decoding import BeamConfig, beam_search
from .errors import TitleForgeError
from .model import ModelConfig, Transformer, load_checkpoint, save_checkpoint
from .service import InferenceService
from .tokenizer import DEFAULT_VOCAB_SIZE, SubwordVocabulary, train_vocabulary
from .training import INPUT_MODES, fit, parse_config_file

def _configure_logging():
    level = os.environ.get("TITLE_FORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _parse_langs(raw) -> list[Language]:
    try:
        return [Language(part.strip().lower()) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise click.UsageError(f"unknown language in --langs: {raw}") from exc


@click.group()
def cli():
    """Mine Stack Overflow posts and generate question titles."""


@cli.group()
def corpus():
    """Corpus mining commands."""


@corpus.command("build")
@click.option("--dump", "dump_path", required=True, help="Posts.xml dump to mine.")
@click.option("--out", "out_dir", required=True, help="Directory for the split files.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--train-n", required=True, type=int)
@click.option("--test-n", required=True, type=int)
@click.option("--langs", default="java,csharp,python,javascript", show_default=True)
def corpus_build(dump_path, out_dir, seed, train_n, test_n, langs):
    """Mine a dump into per-language train/validation/test triplet files."""
    languages = _parse_langs(langs)
    if not Path(dump_path).is_file():
        raise FileNotFoundError(f"dump file not found: {dump_path}")
    counts = corpus_mod.DumpCounts()
    stats = corpus_mod.MiningStats()
    posts = corpus_mod.parse_dump(dump_path, counts)
    by_language = corpus_mod.mine_posts(posts, stats)
    click.echo(
        f"rows={counts.rows} questions={counts.questions} "
        f"skipped={counts.skipped_missing_attr} passed_rules={stats.passed_rules}"
    )
    for lang in languages:
        triplets = by_language[lang]
        split = corpus_mod.split_corpus(triplets, seed, train_n, test_n)
        corpus_mod.write_split_corpus(out_dir, lang, split)
        click.echo(
            f"{lang.value}: train={len(split.train)} "
            f"validation={len(split.validation)} test={len(split.test)}"
        )


@cli.group()
def tokenizer():
    """Subword vocabulary commands."""


@tokenizer.command("train")
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--vocab-size", default=DEFAULT_VOCAB_SIZE, show_default=True, type=int)
@click.option("--langs", default="java,csharp,python,javascript", show_default=True)
def tokenizer_train(corpus_dir, out_path, vocab_size, langs):
    """Learn a byte-level subword vocabulary from the training splits."""
    languages = _parse_langs(langs)
    corpora = corpus_mod.load_corpus_dir(corpus_dir, languages)
    texts = []
    for lang in languages:
        for t in corpora[lang]["train"]:
            texts.extend((t.description, t.code, t.title))
    vocab = train_vocabulary(texts, vocab_size)
    vocab.save(out_path)
    click.echo(f"vocabulary of {len(vocab)} pieces -> {out_path}")


@cli.command()
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--out", "ckpt_path", required=True)
@click.option("--config", "config_path", required=True)
@click.option("--vocab", "vocab_path", required=True)
@click.option("--input-mode", default="both", show_default=True,
              type=click.Choice(INPUT_MODES))
@click.option("--history", "history_path", default=None,
              help="Training history JSONL (default: <out>.history.jsonl).")
@click.option("--seed", "model_seed", default=0, show_default=True, type=int,
              help="Weight initialization seed.")
def train(corpus_dir, ckpt_path, config_path, vocab_path, input_mode, history_path, model_seed):
    """Train the four-task title model on a mined corpus."""
    if not Path(corpus_dir).is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    training_config, model_overrides = parse_config_file(config_path)
    training_config.input_mode = input_mode
    vocab = SubwordVocabulary.load(vocab_path)
    corpora = corpus_mod.load_corpus_dir(corpus_dir)
    config = ModelConfig(vocab_size=len(vocab), dropout=training_config.dropout,
                         **model_overrides)
    model = Transformer(config, seed=model_seed)
    result = fit(model, vocab, corpora, training_config)
    model_id = save_checkpoint(model, ckpt_path)
    history_path = history_path or f"{ckpt_path}.history.jsonl"
    with open(history_path, "w", encoding="utf-8") as f:
        for record in result.history:
            f.write(json.dumps(record) + "\n")
    click.echo(
        f"trained {result.steps_run} steps over {result.epochs_run} epochs; "
        f"best validation loss {result.best_validation:.4f} (epoch {result.best_epoch})"
    )
    click.echo(f"checkpoint {model_id[:12]} -> {ckpt_path}")


@cli.command()
@click.option("--ckpt", "ckpt_path", default=None)
@click.option("--baseline", type=click.Choice(["bm25"]), default=None)
@click.option("--vocab", "vocab_path", default=None)
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--input-mode", default="both", show_default=True,
              type=click.Choice(INPUT_MODES))
@click.option("--report", "report_path", required=True)
@click.option("--beam", "beam_width", default=5, show_default=True, type=int)
def evaluate(ckpt_path, baseline, vocab_path, corpus_dir, input_mode, report_path, beam_width):
    """Score generated titles against the test split with ROUGE."""
    if (ckpt_path is None) == (baseline is None):
        raise click.UsageError("pass exactly one of --ckpt or --baseline")
    if not Path(corpus_dir).is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    corpora = corpus_mod.load_corpus_dir(corpus_dir)
    test_by_language = {
        lang: splits["test"] for lang, splits in corpora.items() if splits["test"]
    }
    if baseline == "bm25":
        training = [t for splits in corpora.values() for t in splits["train"]]
        generator = eval_mod.Bm25TitleGenerator(training)
    else:
        if vocab_path is None:
            raise click.UsageError("--ckpt evaluation needs --vocab")
        model, _ = load_checkpoint(ckpt_path)
        vocab = SubwordVocabulary.load(vocab_path)
        generator = eval_mod.ModelTitleGenerator(
            model, vocab,
            BeamConfig(beam_width=beam_width, max_len=model.config.max_decoder_len),
        )
    report = eval_mod.evaluate_model(generator, test_by_language, input_mode)
    eval_mod.write_report(report, report_path)
    for lang, scores in sorted(report.items()):
        click.echo(
            f"{lang}: rouge1={scores['rouge1']['f1']:.3f} "
            f"rouge2={scores['rouge2']['f1']:.3f} rougeL={scores['rougeL']['f1']:.3f} "
            f"({scores['count']} posts)"
        )


def _text_or_file(value) -> str:
    """Flag values name either literal text or a file to read."""
    if value and Path(value).is_file():
        return Path(value).read_text(encoding="utf-8")
    return value or ""


@cli.command()
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--vocab", "vocab_path", required=True)
@click.option("--lang", "language", required=True,
              type=click.Choice([l.value for l in Language]))
@click.option("--desc", default="", help="Problem description text or a file path.")
@click.option("--code", default="", help="Code snippet text or a file path.")
@click.option("--beam", "beam_width", default=5, show_default=True, type=int)
@click.option("--num-titles", default=3, show_default=True, type=int)
def generate(ckpt_path, vocab_path, language, desc, code, beam_width, num_titles):
    """Suggest titles for one post, best first."""
    model, _ = load_checkpoint(ckpt_path)
    vocab = SubwordVocabulary.load(vocab_path)
    description = _text_or_file(desc)
    code_text = _text_or_file(code)
    model_input = vocab.build_model_input(
        language, description, code_text, model.config.max_encoder_len
    )
    beam = BeamConfig(beam_width=beam_width, max_len=model.config.max_decoder_len)
    hypotheses = beam_search(model, model_input, beam)
    for hyp in hypotheses[:num_titles]:
        click.echo(vocab.decode(hyp.token_ids))


@cli.command()
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--vocab", "vocab_path", required=True)
@click.option("--bind", default="127.0.0.1:8765", show_default=True)
@click.option("--beam-default", default=5, show_default=True, type=int)
def serve(ckpt_path, vocab_path, bind, beam_default):
    """Run the title-generation HTTP service."""
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise click.UsageError(f"--bind must look like host:port, got {bind!r}")
    for path, what in ((ckpt_path, "checkpoint"), (vocab_path, "vocabulary")):
        if not Path(path).is_file():
            raise FileNotFoundError(f"{what} not found: {path}")
    service = InferenceService(ckpt_path, vocab_path, beam_default=beam_default)
    click.echo(f"serving on http://{host}:{port}")
    service.serve_forever(host, int(port))


def cli_dispatch(argv) -> int:
    """Route argv; 0 on success, 1 on usage errors, 2 on runtime errors."""
    _configure_logging()
    try:
        cli.main(args=list(argv), standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except (TitleForgeError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
