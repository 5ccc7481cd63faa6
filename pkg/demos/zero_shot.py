"""Zero-shot topic classification with the NSP head.

Pre-trains a micro encoder briefly on the synthetic corpus, then labels
unseen sentences by asking, for each candidate topic word, "does this
prompt follow the sentence?" — no task-specific training at all.

Run:  python3 demos/zero_shot.py        (~3-4 minutes on one core)
"""

import numpy as np

from nspbert.corpus import SyntheticCorpusConfig, generate_corpus
from nspbert.harness import evaluate, make_synthetic_task
from nspbert.model import EncoderConfig, EncoderModel
from nspbert.pretrain import pretrain, vocab_from_documents

STEPS = 2000  # the full pre-training recipe; zero-shot needs it

corpus_cfg = SyntheticCorpusConfig(seed=7)
docs = generate_corpus(corpus_cfg)
vocab = vocab_from_documents(docs)
print(f"corpus: {len(docs)} documents, vocab {len(vocab)} tokens")

model = EncoderModel(EncoderConfig.preset("micro", vocab_size=len(vocab)), seed=21)
print(f"pre-training micro encoder for {STEPS} steps ...")
trace = pretrain(model, docs, vocab, steps=STEPS, seed=21)
print(f"loss {trace[0]['total']:.2f} -> {trace[-1]['total']:.2f}")

examples, task = make_synthetic_task(corpus_cfg, "topic", seed=1, n_documents=30)
rng = np.random.default_rng(0)
test = [examples[i] for i in rng.choice(len(examples), 120, replace=False)]

nsp_acc = evaluate(model, vocab, test, task, "zero_shot_nsp")
pet_acc = evaluate(model, vocab, test, task, "zero_shot_pet")
print(f"\n4-topic task, majority baseline 0.25")
print(f"zero-shot candidates-contrast (NSP): {nsp_acc:.3f}")
print(f"zero-shot PET multi-mask baseline:   {pet_acc:.3f}")
