"""Few-shot training: NSP-tuning with coupled instances and BCE, its
ablation variants, and the plain fine-tuning baseline.

Each labeled sample becomes |Y| binary instances: the gold verbalization
with target 1 and every other label with target 0.  In coupled variants
a sample's instances always share a training batch; the decoupled
variant shuffles instances globally.  The final model is the best
dev-accuracy epoch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DivergenceError, ValidationError
from .model import ISNEXT, EncoderModel, _trunc_normal
from .prompting import render_single
from .tensor import Tensor
from .tokenizer import Tokenizer

VARIANTS = (
    "coupled_bce",
    "decoupled_bce",
    "coupled_softmax",
    "reinit_sigmoid_head",
    "linear_head_softmax",
)


@dataclass
class NspTuningInstance:
    pair: object  # EncodedPair
    target: int  # 1 = gold verbalization, 0 = negative
    parent_id: object
    label_index: int


@dataclass
class TuningConfig:
    epochs: int = 10
    lr: float = 2e-5
    batch_size: int = 8  # parent samples per batch
    variant: str = "coupled_bce"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.variant not in VARIANTS + ("fine_tune",):
            raise ValidationError(f"unknown variant {self.variant!r}")


def build_instances(example, task, tokenizer):
    """One positive + |Y|-1 negative templated instances for a sample."""
    if example.label not in task.labels:
        raise ValidationError(f"gold label {example.label!r} not in task labels")
    instances = []
    for j, label in enumerate(task.labels):
        a, b = render_single(example.text_a, task.template, task.verbalizer, label)
        pair = tokenizer.encode_pair(a, b, task.max_len)
        instances.append(
            NspTuningInstance(pair, int(label == example.label), example.id, j)
        )
    return instances


# ---------------------------------------------------------------------------
# Prediction


def predict_candidates_batch(model, vocab, examples, task, chunk=64):
    """Candidates-contrast prediction for many examples, batched."""
    tok = Tokenizer(vocab)
    n_labels = len(task.labels)
    preds = []
    for start in range(0, len(examples), chunk):
        pairs = []
        for ex in examples[start : start + chunk]:
            for label in task.labels:
                a, b = render_single(ex.text_a, task.template, task.verbalizer, label)
                pairs.append(tok.encode_pair(a, b, task.max_len))
        probs = model.nsp_prob_isnext_batch(pairs).reshape(-1, n_labels)
        preds.extend(int(i) for i in probs.argmax(axis=1))
    return [task.labels[i] for i in preds]


def _predict_linear_head(model, vocab, examples, task, head_w, head_b, chunk=64):
    """Candidate j scored by output j of the fresh head on its own instance."""
    tok = Tokenizer(vocab)
    n_labels = len(task.labels)
    preds = []
    for start in range(0, len(examples), chunk):
        pairs = []
        for ex in examples[start : start + chunk]:
            for label in task.labels:
                a, b = render_single(ex.text_a, task.template, task.verbalizer, label)
                pairs.append(tok.encode_pair(a, b, task.max_len))
        with T.no_grad():
            hidden = model.forward_batch(pairs)
            h = model.cls_hidden(hidden)
            logits = T.add(T.matmul(h, T.transpose(head_w, (1, 0))), head_b)
        mat = logits.data.reshape(-1, n_labels, n_labels)
        scores = mat[:, np.arange(n_labels), np.arange(n_labels)]
        preds.extend(int(i) for i in scores.argmax(axis=1))
    return [task.labels[i] for i in preds]


def _predict_cls_head(model, vocab, examples, task, head_w, head_b, chunk=128):
    """Plain classification head on [CLS] of the untemplated input."""
    tok = Tokenizer(vocab)
    preds = []
    for start in range(0, len(examples), chunk):
        encs = [tok.encode_single(ex.text_a, task.max_len)
                for ex in examples[start : start + chunk]]
        with T.no_grad():
            h = model.cls_hidden(model.forward_batch(encs))
            logits = T.add(T.matmul(h, T.transpose(head_w, (1, 0))), head_b)
        preds.extend(int(i) for i in logits.data.argmax(axis=1))
    return [task.labels[i] for i in preds]


def accuracy(preds, examples):
    return sum(p == ex.label for p, ex in zip(preds, examples)) / len(examples)


@dataclass
class TuneResult:
    model: EncoderModel
    variant: str
    history: list  # per-epoch dicts: epoch, train_loss, dev_acc
    best_epoch: int
    extra: dict = field(default_factory=dict)  # fresh-head tensors, if any

    def predict(self, examples, task, vocab):
        if self.variant == "linear_head_softmax":
            return _predict_linear_head(self.model, vocab, examples, task,
                                        self.extra["head_w"], self.extra["head_b"])
        if self.variant == "fine_tune":
            return _predict_cls_head(self.model, vocab, examples, task,
                                     self.extra["head_w"], self.extra["head_b"])
        return predict_candidates_batch(self.model, vocab, examples, task)


# ---------------------------------------------------------------------------
# Training


def _isnext_prob_tensor(model, pairs):
    hidden = model.forward_batch(pairs)
    probs = model.nsp_probs(hidden)
    return T.take_index(probs, ISNEXT, axis=1)


def _check_finite(loss, context):
    if not np.isfinite(loss.item()):
        raise DivergenceError(f"non-finite loss during {context}: {loss.item()}")


def nsp_tune(model, train, dev, task, vocab, cfg):
    """Train in place; returns a TuneResult holding the best-dev-epoch weights."""
    tok = Tokenizer(vocab)
    rng = np.random.default_rng(cfg.seed)
    n_labels = len(task.labels)
    per_parent = [build_instances(ex, task, tok) for ex in train]

    extra = {}
    params = dict(model.parameters())
    if cfg.variant == "reinit_sigmoid_head":
        head_rng = np.random.default_rng(cfg.seed + 1)
        for name in ("nsp.pool.w", "nsp.out.w"):
            p = model.params[name]
            p.data = _trunc_normal(head_rng, p.data.shape)
        for name in ("nsp.pool.b", "nsp.out.b"):
            model.params[name].data = np.zeros_like(model.params[name].data)
    elif cfg.variant == "linear_head_softmax":
        head_rng = np.random.default_rng(cfg.seed + 1)
        extra["head_w"] = Tensor(
            _trunc_normal(head_rng, (n_labels, model.config.hidden)), requires_grad=True
        )
        extra["head_b"] = Tensor(np.zeros(n_labels, dtype=np.float32), requires_grad=True)
        params.update(extra)

    opt = T.Adam(params, lr=cfg.lr)
    eye = Tensor(np.eye(n_labels, dtype=np.float32))
    result = TuneResult(model, cfg.variant, history=[], best_epoch=-1, extra=extra)
    best = {"acc": -1.0, "params": None, "extra": None, "epoch": -1}

    def snapshot():
        return ({k: v.data.copy() for k, v in model.params.items()},
                {k: v.data.copy() for k, v in extra.items()})

    def evaluate_dev():
        if not dev:
            return float("nan")
        return accuracy(result.predict(dev, task, vocab), dev)

    for epoch in range(cfg.epochs):
        epoch_losses = []
        if cfg.variant == "decoupled_bce":
            flat = [inst for group in per_parent for inst in group]
            rng.shuffle(flat)
            inst_bs = cfg.batch_size * n_labels
            batches = [flat[i : i + inst_bs] for i in range(0, len(flat), inst_bs)]
        else:
            order = rng.permutation(len(per_parent))
            batches = []
            for i in range(0, len(order), cfg.batch_size):
                group = [per_parent[j] for j in order[i : i + cfg.batch_size]]
                batches.append([inst for g in group for inst in g])
        for batch in batches:
            pairs = [inst.pair for inst in batch]
            targets = np.array([inst.target for inst in batch], dtype=np.float64)
            if cfg.variant in ("coupled_bce", "decoupled_bce", "reinit_sigmoid_head"):
                p = _isnext_prob_tensor(model, pairs)
                loss = T.binary_cross_entropy(p, targets)
            elif cfg.variant == "coupled_softmax":
                hidden = model.forward_batch(pairs)
                logits = T.take_index(model.nsp_logits(hidden), ISNEXT, axis=1)
                per_sample = T.reshape(logits, (-1, n_labels))
                gold = targets.reshape(-1, n_labels).argmax(axis=1)
                loss = T.cross_entropy(per_sample, gold)
            elif cfg.variant == "linear_head_softmax":
                hidden = model.forward_batch(pairs)
                h = model.cls_hidden(hidden)
                logits = T.add(
                    T.matmul(h, T.transpose(extra["head_w"], (1, 0))), extra["head_b"]
                )
                cube = T.reshape(logits, (-1, n_labels, n_labels))
                scores = T.sum_all(T.mul(cube, eye), axis=-1)
                gold = targets.reshape(-1, n_labels).argmax(axis=1)
                loss = T.cross_entropy(scores, gold)
            else:
                raise ValidationError(f"variant {cfg.variant!r} not handled by nsp_tune")
            _check_finite(loss, f"nsp_tune[{cfg.variant}] epoch {epoch}")
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            epoch_losses.append(loss.item())
        dev_acc = evaluate_dev()
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                               "dev_acc": dev_acc})
        if dev and dev_acc > best["acc"]:
            best.update(acc=dev_acc, epoch=epoch)
            best["params"], best["extra"] = snapshot()
    if best["params"] is not None:
        for k, v in best["params"].items():
            model.params[k].data = v
        for k, v in best["extra"].items():
            extra[k].data = v
        result.best_epoch = best["epoch"]
    return result


def fine_tune_baseline(model, train, dev, task, vocab, cfg):
    """Fresh |Y|-way softmax head on [CLS]; no templates."""
    tok = Tokenizer(vocab)
    rng = np.random.default_rng(cfg.seed)
    n_labels = len(task.labels)
    head_rng = np.random.default_rng(cfg.seed + 1)
    extra = {
        "head_w": Tensor(_trunc_normal(head_rng, (n_labels, model.config.hidden)),
                         requires_grad=True),
        "head_b": Tensor(np.zeros(n_labels, dtype=np.float32), requires_grad=True),
    }
    params = dict(model.parameters())
    params.update(extra)
    opt = T.Adam(params, lr=cfg.lr)
    result = TuneResult(model, "fine_tune", history=[], best_epoch=-1, extra=extra)
    best = {"acc": -1.0, "params": None, "extra": None, "epoch": -1}
    gold_idx = np.array([task.labels.index(ex.label) for ex in train], dtype=np.int64)
    encs = [tok.encode_single(ex.text_a, task.max_len) for ex in train]
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        epoch_losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            batch = [encs[j] for j in idx]
            h = model.cls_hidden(model.forward_batch(batch))
            logits = T.add(T.matmul(h, T.transpose(extra["head_w"], (1, 0))),
                           extra["head_b"])
            loss = T.cross_entropy(logits, gold_idx[idx])
            _check_finite(loss, f"fine_tune epoch {epoch}")
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            epoch_losses.append(loss.item())
        dev_acc = accuracy(result.predict(dev, task, vocab), dev) if dev else float("nan")
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                               "dev_acc": dev_acc})
        if dev and dev_acc > best["acc"]:
            best.update(acc=dev_acc, epoch=epoch)
            best["params"] = {k: v.data.copy() for k, v in model.params.items()}
            best["extra"] = {k: v.data.copy() for k, v in extra.items()}
    if best["params"] is not None:
        for k, v in best["params"].items():
            model.params[k].data = v
        for k, v in best["extra"].items():
            extra[k].data = v
        result.best_epoch = best["epoch"]
    return result


def run_ablation(checkpoint_path, splits, task, vocab, variant,
                 epochs=10, lr=2e-5, batch_size=8):
    """Run one Table-style ablation variant over the given K-shot splits.

    Returns (rows, summary): one row per seed with the best epoch and
    dev/test accuracies, plus mean and population std of test accuracy.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown ablation variant {variant!r}")
    rows = []
    for split in splits:
        model = EncoderModel.load_checkpoint(checkpoint_path)
        cfg = TuningConfig(epochs=epochs, lr=lr, batch_size=batch_size,
                           variant=variant, seed=split.seed)
        res = nsp_tune(model, split.train, split.dev, task, vocab, cfg)
        test_acc = accuracy(res.predict(split.test, task, vocab), split.test)
        dev_acc = max(h["dev_acc"] for h in res.history) if res.history else float("nan")
        rows.append({"variant": variant, "seed": split.seed, "epoch": res.best_epoch,
                     "dev_acc": dev_acc, "test_acc": test_acc})
    accs = np.array([r["test_acc"] for r in rows])
    summary = {"variant": variant, "mean": float(accs.mean()),
               "std": float(accs.std())}
    return rows, summary
