"""Prompt templates, verbalizers, and rendering for every task shape.

A template fills one sentence slot with a prompt containing the
verbalized label; the original text occupies the other slot (prefix
puts the prompt in sentence A, suffix in sentence B).  Two-stage
prompts restate the target mention at the end of sentence A and place
the candidate description in sentence B.  Rendering is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tokenizer import EncodedPair, insert_masks

PREFIX, SUFFIX = "prefix", "suffix"


@dataclass
class Verbalizer:
    """Injective label -> phrase mapping; phrases may be arbitrarily long."""

    mapping: dict

    def __post_init__(self):
        if any(not phrase for phrase in self.mapping.values()):
            raise ValidationError("verbalizer phrases must be nonempty")
        if len(set(self.mapping.values())) != len(self.mapping):
            raise ValidationError("verbalizer must be injective")

    def __call__(self, label):
        if label not in self.mapping:
            raise ValidationError(f"unknown label {label!r}")
        return self.mapping[label]


@dataclass
class PromptTemplate:
    pattern: str  # contains {label} exactly once, never {text}
    position: str = SUFFIX

    def __post_init__(self):
        if self.pattern.count("{label}") != 1:
            raise ValidationError("template pattern must contain {label} exactly once")
        if "{text}" in self.pattern:
            raise ValidationError("template pattern must not contain {text}")
        if self.position not in (PREFIX, SUFFIX):
            raise ValidationError(f"position must be prefix or suffix, got {self.position!r}")


@dataclass
class TwoStagePrompt:
    stage1: str  # contains {mention}
    stage2: str  # contains {description}

    def __post_init__(self):
        if "{mention}" not in self.stage1:
            raise ValidationError("stage1 must contain {mention}")
        if "{description}" not in self.stage2:
            raise ValidationError("stage2 must contain {description}")


def render_single(x, template, verbalizer, label):
    """(sentence A, sentence B) for a single-sentence task."""
    prompt = template.pattern.format(label=verbalizer(label))
    if template.position == SUFFIX:
        return x, prompt
    return prompt, x


def render_pair(x1, x2, order="original"):
    if order == "original":
        return x1, x2
    if order == "reversed":
        return x2, x1
    raise ValidationError(f"order must be original or reversed, got {order!r}")


def render_two_stage(x, mention, description, prompt):
    """Sentence A = text + ', ' + stage-1 restatement; B = description prompt."""
    if not mention:
        raise ValidationError("two-stage prompt requires a nonempty mention")
    a = x + ", " + prompt.stage1.format(mention=mention)
    b = prompt.stage2.format(description=description)
    return a, b


def render_pet(x, template, verbalizer, label, tokenizer, max_len):
    """Single-sequence cloze input: the verbalized span replaced by [MASK]s.

    Returns (encoded input with mask positions, target token ids of the
    verbalization, in order).
    """
    phrase = verbalizer(label)
    before, after = template.pattern.split("{label}")
    if template.position == SUFFIX:
        before = (x + " " + before).strip()
    else:
        after = (after + " " + x).strip()
    v = tokenizer.vocab
    before_ids = tokenizer.encode(before)
    target_ids = tokenizer.encode(phrase)
    after_ids = tokenizer.encode(after)
    if not target_ids:
        raise ValidationError(f"verbalization {phrase!r} tokenizes to nothing")
    needed = 2 + len(before_ids) + len(target_ids) + len(after_ids)
    if needed > max_len:
        # Trim the far end of the original text, never the prompt span.
        overflow = needed - max_len
        if template.position == SUFFIX:
            before_ids = before_ids[overflow:]
        else:
            after_ids = after_ids[: len(after_ids) - overflow]
    ids = [v.cls_id] + before_ids + target_ids + after_ids + [v.sep_id]
    attn = [1] * len(ids)
    pad = max_len - len(ids)
    ids += [v.pad_id] * pad
    attn += [0] * pad
    enc = EncodedPair(
        np.array(ids, dtype=np.int64),
        np.zeros(max_len, dtype=np.int64),
        np.array(attn, dtype=np.int64),
    )
    span_start = 1 + len(before_ids)
    masked = insert_masks(enc, span_start, len(target_ids), v.mask_id, v.special_ids)
    return masked, target_ids


@dataclass
class TaskConfig:
    """Task description: shape, labels, template, verbalizer, mapping options."""

    task_type: str  # single | pair | two_stage
    labels: list
    template: PromptTemplate | None = None
    verbalizer: Verbalizer | None = None
    mapping: dict = field(default_factory=lambda: {"strategy": "candidates_contrast",
                                                   "order": "ascending",
                                                   "batch_size": 16})
    two_stage: TwoStagePrompt | None = None
    max_len: int = 48
    k_shot: int = 16

    def __post_init__(self):
        if self.task_type not in ("single", "pair", "two_stage"):
            raise ValidationError(f"unknown task_type {self.task_type!r}")
        if self.task_type in ("single",) and (self.template is None or self.verbalizer is None):
            raise ValidationError("single-sentence tasks need a template and verbalizer")
        if self.verbalizer is not None:
            missing = [l for l in self.labels if l not in self.verbalizer.mapping]
            if missing:
                raise ValidationError(f"verbalizer missing labels: {missing}")

    def to_dict(self):
        d = {"task_type": self.task_type, "labels": self.labels,
             "mapping": self.mapping, "max_len": self.max_len, "k_shot": self.k_shot}
        if self.template is not None:
            d["template"] = {"pattern": self.template.pattern,
                             "position": self.template.position}
        if self.verbalizer is not None:
            d["verbalizer"] = self.verbalizer.mapping
        if self.two_stage is not None:
            d["two_stage"] = {"stage1": self.two_stage.stage1,
                              "stage2": self.two_stage.stage2}
        return d

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_dict(cls, d):
        template = None
        if "template" in d:
            template = PromptTemplate(d["template"]["pattern"],
                                      d["template"].get("position", SUFFIX))
        verbalizer = Verbalizer(d["verbalizer"]) if "verbalizer" in d else None
        two_stage = None
        if "two_stage" in d:
            two_stage = TwoStagePrompt(d["two_stage"]["stage1"], d["two_stage"]["stage2"])
        return cls(
            task_type=d["task_type"],
            labels=list(d["labels"]),
            template=template,
            verbalizer=verbalizer,
            mapping=d.get("mapping", {"strategy": "candidates_contrast",
                                      "order": "ascending", "batch_size": 16}),
            two_stage=two_stage,
            max_len=d.get("max_len", 48),
            k_shot=d.get("k_shot", 16),
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            try:
                return cls.from_dict(json.load(f))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValidationError(f"malformed task config {path!r}: {e}") from e
