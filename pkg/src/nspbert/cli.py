"""Command-line entry points.

Exit codes: 0 success, 2 validation error (bad input/config), 3
training divergence.  Models needing a vocabulary look for it at
"<checkpoint>.vocab" (one token per line).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys

import click

from .corpus import SyntheticCorpusConfig, generate_corpus, load_corpus, save_corpus
from .errors import DivergenceError, NspBertError, ValidationError
from .harness import (
    DEFAULT_SEEDS,
    ExperimentConfig,
    kshot_split,
    load_jsonl,
    run_experiment,
)
from .model import EncoderConfig, EncoderModel
from .prompting import TaskConfig
from .pretrain import pretrain as run_pretrain, vocab_from_documents
from .scoring import (
    LabelDistribution,
    emit_probability_histogram,
    load_scored_jsonl,
    samples_contrast,
)
from .tokenizer import Vocab
from .tuning import (
    TuningConfig,
    VARIANTS,
    accuracy,
    fine_tune_baseline,
    nsp_tune,
    run_ablation,
)


@click.group()
@click.option("--config", type=click.Path(), default=None, help="Config file path.")
@click.option("--seed", type=int, default=0, help="Random seed.")
@click.option("--checkpoint", type=click.Path(), default=None, help="Model checkpoint.")
@click.option("--out", type=click.Path(), default=None, help="Output path.")
@click.pass_context
def cli(ctx, config, seed, checkpoint, out):
    ctx.obj = {"config": config, "seed": seed, "checkpoint": checkpoint, "out": out}


def _load_json(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _require(ctx, key):
    val = ctx.obj.get(key)
    if val is None:
        raise ValidationError(f"--{key} is required for this command")
    return val


def _load_model_and_vocab(ctx):
    path = _require(ctx, "checkpoint")
    model = EncoderModel.load_checkpoint(path)
    vocab = Vocab.load(path + ".vocab")
    return model, vocab


@cli.command("gen-corpus")
@click.pass_context
def gen_corpus(ctx):
    """Generate a synthetic topic corpus as JSONL."""
    cfg_dict = _load_json(ctx.obj["config"])
    cfg = SyntheticCorpusConfig(**cfg_dict)
    cfg = dataclasses.replace(cfg, seed=ctx.obj["seed"])
    docs = generate_corpus(cfg)
    out = _require(ctx, "out")
    save_corpus(docs, out)
    click.echo(f"wrote {len(docs)} documents to {out}")


@cli.command("pretrain")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None,
              help="Corpus JSONL; generated on the fly when omitted.")
@click.pass_context
def pretrain_cmd(ctx, corpus_path):
    """Pre-train a model on MLM + NSP and write a checkpoint."""
    cfg = _load_json(ctx.obj["config"])
    corpus_cfg = SyntheticCorpusConfig(**cfg.get("corpus", {}))
    if corpus_path:
        docs = load_corpus(corpus_path)
    else:
        docs = generate_corpus(dataclasses.replace(corpus_cfg, seed=ctx.obj["seed"]))
    vocab = vocab_from_documents(docs)
    preset = cfg.get("preset", "micro")
    model_cfg = EncoderConfig.preset(preset, vocab_size=len(vocab))
    model = EncoderModel(model_cfg, seed=ctx.obj["seed"])
    trace = run_pretrain(
        model, docs, vocab,
        steps=cfg.get("steps", 2000),
        batch_size=cfg.get("batch_size", 16),
        lr=cfg.get("lr", 1e-3),
        seed=ctx.obj["seed"],
        max_len=cfg.get("max_len", 28),
        mask_rate=cfg.get("mask_rate", 0.15),
    )
    out = _require(ctx, "out")
    model.save_checkpoint(out)
    vocab.save(out + ".vocab")
    with open(out + ".trace.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "total", "mlm", "nsp"])
        writer.writeheader()
        writer.writerows(trace)
    click.echo(f"trained {len(trace)} steps; final loss {trace[-1]['total']:.4f}; "
               f"checkpoint at {out}")


@cli.command("eval-zeroshot")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--mode", type=click.Choice(["zero_shot_nsp", "zero_shot_pet",
                                           "samples_contrast", "thresholds"]),
              default="zero_shot_nsp")
@click.pass_context
def eval_zeroshot(ctx, data, mode):
    """Zero-shot evaluation of a dataset against a task config."""
    from .harness import evaluate

    task = TaskConfig.load(_require(ctx, "config"))
    model, vocab = _load_model_and_vocab(ctx)
    examples = load_jsonl(data, task)
    dev = None
    if mode in ("samples_contrast", "thresholds"):
        split = kshot_split(examples, task.k_shot, ctx.obj["seed"])
        examples, dev = split.test, split.dev
    acc = evaluate(model, vocab, examples, task, mode, dev=dev)
    result = {"mode": mode, "accuracy": acc, "n": len(examples)}
    if ctx.obj["out"]:
        with open(ctx.obj["out"], "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2)
    click.echo(json.dumps(result))


@cli.command("map-samples")
@click.option("--scored", type=click.Path(exists=True), required=True,
              help="Scored-sample JSONL with gold labels on dev rows.")
@click.pass_context
def map_samples(ctx, scored):
    """Apply samples-contrast mapping to a scored-sample file."""
    task = TaskConfig.load(_require(ctx, "config"))
    samples = load_scored_jsonl(scored)
    with_gold = [s for s in samples if s.gold is not None]
    if not with_gold:
        raise ValidationError("no gold labels in scored file; cannot derive distribution")
    counts = {l: 0 for l in task.labels}
    for s in with_gold:
        if s.gold not in counts:
            raise ValidationError(f"gold label {s.gold!r} not in task labels")
        counts[s.gold] += 1
    dist = LabelDistribution(
        task.labels, [counts[l] / len(with_gold) for l in task.labels]
    )
    labels = samples_contrast(samples, task.mapping.get("order", "ascending"),
                              dist, task.mapping.get("batch_size", 16))
    out = _require(ctx, "out")
    with open(out, "w", encoding="utf-8") as f:
        for s, label in zip(samples, labels):
            f.write(json.dumps({"id": s.sample_id, "label": label}) + "\n")
    click.echo(f"mapped {len(samples)} samples to {out}")


def _tune_common(ctx, data, fn, variant):
    task = TaskConfig.load(_require(ctx, "config"))
    model, vocab = _load_model_and_vocab(ctx)
    examples = load_jsonl(data, task)
    split = kshot_split(examples, task.k_shot, ctx.obj["seed"])
    cfg = TuningConfig(variant=variant, seed=ctx.obj["seed"])
    res = fn(model, split.train, split.dev, task, vocab, cfg)
    test_acc = accuracy(res.predict(split.test, task, vocab), split.test)
    out = _require(ctx, "out")
    model.save_checkpoint(out)
    vocab.save(out + ".vocab")
    click.echo(json.dumps({"variant": variant, "best_epoch": res.best_epoch,
                           "test_accuracy": test_acc}))


@cli.command("nsp-tune")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--variant", type=click.Choice(list(VARIANTS)), default="coupled_bce")
@click.pass_context
def nsp_tune_cmd(ctx, data, variant):
    """NSP-tuning on a K-shot split of the dataset."""
    _tune_common(ctx, data, nsp_tune, variant)


@cli.command("fine-tune")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.pass_context
def fine_tune_cmd(ctx, data):
    """Standard fine-tuning baseline (fresh [CLS] head, no templates)."""
    _tune_common(ctx, data, fine_tune_baseline, "fine_tune")


@cli.command("ablate")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.pass_context
def ablate(ctx, data):
    """Run all tuning variants over the default seed suite; emit a CSV."""
    task = TaskConfig.load(_require(ctx, "config"))
    checkpoint = _require(ctx, "checkpoint")
    vocab = Vocab.load(checkpoint + ".vocab")
    examples = load_jsonl(data, task)
    splits = [kshot_split(examples, task.k_shot, s) for s in DEFAULT_SEEDS]
    out = _require(ctx, "out")
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=["variant", "seed", "epoch", "dev_acc", "test_acc"]
        )
        writer.writeheader()
        for variant in VARIANTS:
            rows, summary = run_ablation(checkpoint, splits, task, vocab, variant)
            writer.writerows(rows)
            click.echo(f"{variant}: mean={summary['mean']:.4f} std={summary['std']:.4f}")
    click.echo(f"wrote {out}")


@cli.command("report")
@click.pass_context
def report(ctx):
    """Run a multi-seed experiment from a config file; emit CSV + JSON."""
    cfg = _load_json(_require(ctx, "config"))
    task = TaskConfig.load(cfg["task"])
    examples = load_jsonl(cfg["data"], task)
    checkpoint = cfg.get("checkpoint") or _require(ctx, "checkpoint")
    vocab = Vocab.load(checkpoint + ".vocab")
    exp = ExperimentConfig(
        mode=cfg["mode"], checkpoint=checkpoint, task=task, data=examples,
        k=cfg.get("k", task.k_shot), seeds=tuple(cfg.get("seeds", DEFAULT_SEEDS)),
        epochs=cfg.get("epochs", 10), lr=cfg.get("lr", 2e-5),
        batch_size=cfg.get("batch_size", 8), variant=cfg.get("variant", "coupled_bce"),
    )
    rep = run_experiment(exp, vocab)
    out = _require(ctx, "out")
    rep.to_json(out + ".json")
    rep.to_csv(out + ".csv")
    click.echo(f"mean={rep.mean:.4f} std={rep.std:.4f}; wrote {out}.json / {out}.csv")


@cli.command("histogram")
@click.option("--scored", type=click.Path(exists=True), required=True)
@click.option("--bins", type=int, default=20)
@click.pass_context
def histogram(ctx, scored, bins):
    """Bin the IsNext probabilities of a scored-sample file into a CSV."""
    samples = load_scored_jsonl(scored)
    qs = []
    for s in samples:
        qs.extend(s.q if isinstance(s.q, list) else [s.q])
    out = _require(ctx, "out")
    emit_probability_histogram(qs, bins, out)
    click.echo(f"wrote {out}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.ClickException as e:
        e.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(2)
    except (ValidationError, FileNotFoundError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    except DivergenceError as e:
        click.echo(f"training diverged: {e}", err=True)
        sys.exit(3)
    except NspBertError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    main()
