"""Samples-contrast answer mapping on a sentence-pair task.

Instead of thresholding each IsNext probability independently, rank a
batch of samples by probability and cut the ranking into groups sized
by the known label distribution (largest-remainder apportionment).
Also emits the probability histogram used to pick mapping strategies.

Run:  python3 demos/samples_contrast.py   (~4-5 minutes on one core)
"""

import numpy as np

from nspbert.corpus import SyntheticCorpusConfig, generate_corpus
from nspbert.harness import evaluate, make_synthetic_task, score_pairs
from nspbert.model import EncoderConfig, EncoderModel
from nspbert.pretrain import pretrain, vocab_from_documents
from nspbert.scoring import emit_probability_histogram

STEPS = 2000

corpus_cfg = SyntheticCorpusConfig(seed=7)
docs = generate_corpus(corpus_cfg)
vocab = vocab_from_documents(docs)
model = EncoderModel(EncoderConfig.preset("micro", vocab_size=len(vocab)), seed=21)
print(f"pre-training for {STEPS} steps ...")
pretrain(model, docs, vocab, steps=STEPS, seed=21)

examples, task = make_synthetic_task(corpus_cfg, "pair", seed=1, n_documents=40)
rng = np.random.default_rng(0)
idx = rng.permutation(len(examples))
dev = [examples[i] for i in idx[:80]]
test = [examples[i] for i in idx[80:280]]

for mode in ("samples_contrast", "thresholds"):
    acc = evaluate(model, vocab, test, task, mode, dev=dev)
    print(f"{mode}: accuracy {acc:.3f}")

scored = score_pairs(model, vocab, test, task)
counts, edges = emit_probability_histogram([s.q for s in scored], bins=10,
                                           path="/tmp/demo-hist.csv")
print("\nIsNext probability histogram (10 bins, /tmp/demo-hist.csv):")
for lo, hi, c in zip(edges[:-1], edges[1:], counts):
    print(f"  [{lo:.1f}, {hi:.1f}) {'#' * int(c)}")
