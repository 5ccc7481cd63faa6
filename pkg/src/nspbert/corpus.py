"""Synthetic topic corpus and NSP/MLM example construction.

Documents are bags of synthetic word types: each document has a topic
and draws its content tokens from the topic lexicon (with probability
`concentration`) or from a shared lexicon.  The shared lexicon is
partitioned into style clusters and each document sticks to one, so
sentence adjacency carries a topic-independent signal and NSP is
learnable beyond pure topic matching.  Topic tags are carried for
downstream task construction only; pre-training never reads them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

ISNEXT_LABEL = "IsNext"
NOTNEXT_LABEL = "NotNext"


@dataclass
class SyntheticCorpusConfig:
    n_topics: int = 4
    words_per_topic: int = 40
    shared_words: int = 120
    n_documents: int = 400
    sentences_per_document: int = 8
    sentence_len_min: int = 5
    sentence_len_max: int = 12
    concentration: float = 0.5
    # Each document draws its topic tokens from a subset of this many
    # lexicon words; 0 means the full topic lexicon.
    words_per_document: int = 0
    # Partition the shared lexicon into this many style clusters; each
    # document draws its shared tokens from a single cluster.  Styles
    # recur across documents and are independent of topic, so sentence
    # adjacency carries a signal that topic matching cannot shortcut.
    # 0 disables styles (shared tokens come from the full pool).
    shared_styles: int = 4
    seed: int = 0

    def topic_lexicon(self, topic):
        return [f"t{topic}w{j:02d}" for j in range(self.words_per_topic)]

    def shared_lexicon(self):
        return [f"com{j:03d}" for j in range(self.shared_words)]

    def all_words(self):
        words = []
        for t in range(self.n_topics):
            words.extend(self.topic_lexicon(t))
        words.extend(self.shared_lexicon())
        return words


@dataclass
class Document:
    doc_id: str
    topic: int
    sentences: list

    def text(self):
        return " ".join(self.sentences)


@dataclass
class NspPairExample:
    text_a: str
    text_b: str
    label: str  # IsNext / NotNext
    a_doc: str = ""
    a_index: int = -1
    b_doc: str = ""
    b_index: int = -1


def generate_corpus(cfg, id_prefix="doc"):
    """Deterministic synthetic corpus; one topic tag per document."""
    if cfg.n_topics < 1 or cfg.n_documents < 1 or cfg.sentences_per_document < 1:
        raise ValidationError("corpus config needs at least one topic, document and sentence")
    if not 0.0 <= cfg.concentration <= 1.0:
        raise ValidationError(f"concentration must be in [0, 1], got {cfg.concentration}")
    rng = np.random.default_rng(cfg.seed)
    all_shared = cfg.shared_lexicon()
    docs = []
    for d in range(cfg.n_documents):
        topic = int(rng.integers(cfg.n_topics))
        lexicon = cfg.topic_lexicon(topic)
        if cfg.words_per_document and cfg.words_per_document < len(lexicon):
            picks = rng.choice(len(lexicon), size=cfg.words_per_document, replace=False)
            lexicon = [lexicon[i] for i in picks]
        shared = all_shared
        if cfg.shared_styles > 1:
            size = len(all_shared) // cfg.shared_styles
            style = int(rng.integers(cfg.shared_styles))
            shared = all_shared[style * size : (style + 1) * size]
        sentences = []
        for _ in range(cfg.sentences_per_document):
            n = int(rng.integers(cfg.sentence_len_min, cfg.sentence_len_max + 1))
            words = []
            for _ in range(n):
                if rng.random() < cfg.concentration:
                    words.append(lexicon[int(rng.integers(len(lexicon)))])
                else:
                    words.append(shared[int(rng.integers(len(shared)))])
            sentences.append(" ".join(words))
        docs.append(Document(f"{id_prefix}-{d}", topic, sentences))
    return docs


def save_corpus(documents, path):
    with open(path, "w", encoding="utf-8") as f:
        for doc in documents:
            f.write(json.dumps({"topic": doc.topic, "sentences": doc.sentences}) + "\n")


def load_corpus(path, id_prefix="doc"):
    docs = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(Document(f"{id_prefix}-{i}", int(rec["topic"]),
                                     list(rec["sentences"])))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValidationError(f"{path}:{i + 1}: malformed document line: {e}") from e
    return docs


def sample_nsp_pair(documents, rng):
    """One pair: 50% adjacent sentences (IsNext), 50% cross-document (NotNext)."""
    di = int(rng.integers(len(documents)))
    doc = documents[di]
    ai = int(rng.integers(len(doc.sentences) - 1))
    if rng.random() < 0.5:
        return NspPairExample(doc.sentences[ai], doc.sentences[ai + 1], ISNEXT_LABEL,
                              doc.doc_id, ai, doc.doc_id, ai + 1)
    other = int(rng.integers(len(documents) - 1))
    if other >= di:
        other += 1
    odoc = documents[other]
    bi = int(rng.integers(len(odoc.sentences)))
    return NspPairExample(doc.sentences[ai], odoc.sentences[bi], NOTNEXT_LABEL,
                          doc.doc_id, ai, odoc.doc_id, bi)


def sample_nsp_pairs(documents, n, seed):
    if any(len(d.sentences) < 2 for d in documents):
        raise ValidationError("every document needs at least 2 sentences for NSP pairs")
    if len(documents) < 2:
        raise ValidationError("need at least 2 documents for NotNext sampling")
    rng = np.random.default_rng(seed)
    return [sample_nsp_pair(documents, rng) for _ in range(n)]


def mask_tokens(ids, rate, rng, mask_id, special_ids, vocab_size, first_regular_id=5):
    """BERT-style masking: select ~rate of non-special positions; of the
    selected, 80% become [MASK], 10% a random regular token, 10% stay.

    Returns (masked ids, positions, original target ids).
    """
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"mask rate must be in [0, 1), got {rate}")
    masked = ids.copy()
    positions, targets = [], []
    for pos, tok in enumerate(ids):
        tok = int(tok)
        if tok in special_ids:
            continue
        if rng.random() >= rate:
            continue
        positions.append(pos)
        targets.append(tok)
        r = rng.random()
        if r < 0.8:
            masked[pos] = mask_id
        elif r < 0.9:
            masked[pos] = int(rng.integers(first_regular_id, vocab_size))
        # else: keep the original token
    return masked, positions, targets
