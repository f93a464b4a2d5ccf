"""Closed-grammar captions and their learned token embedding.

Every caption follows one template over the category vocabulary, so the
tokenizer is a plain word lookup with a pad token and a dedicated null
token for unconditioned runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import VocabularyError

CAPTION_TEMPLATE = "A fMoW satellite image of a {category}"
_PREFIX = "A fMoW satellite image of a "

PAD_TOKEN = "<pad>"
NULL_TOKEN = "<null>"


@dataclass(frozen=True)
class Caption:
    """A grammar-conforming caption and the category it names."""

    text: str
    category: str

    @classmethod
    def for_category(cls, category: str, vocabulary: list[str]) -> "Caption":
        if category not in vocabulary:
            raise VocabularyError(category, vocabulary)
        return cls(text=CAPTION_TEMPLATE.format(category=category), category=category)

    @classmethod
    def parse(cls, text: str, vocabulary: list[str]) -> "Caption":
        if not text.startswith(_PREFIX) or len(text) == len(_PREFIX):
            raise ValueError(
                f"caption {text!r} does not match the template {CAPTION_TEMPLATE!r}"
            )
        category = text[len(_PREFIX) :]
        if category not in vocabulary:
            raise VocabularyError(category, vocabulary)
        return cls(text=text, category=category)


def _words(text: str) -> list[str]:
    return text.lower().split()


class CaptionEncoder(nn.Module):
    """Word-level tokenizer plus learned embedding table.

    encode() maps captions to fixed-length (L, d_text) sequences; the
    sequence for the null token stands in when text conditioning is
    disabled. The word list is fully determined by the vocabulary, so two
    encoders built from the same vocabulary tokenize identically.
    """

    def __init__(self, vocabulary: list[str], d_text: int = 64, seq_len: int = 12):
        super().__init__()
        if len(vocabulary) != len(set(vocabulary)):
            raise ValueError("vocabulary contains duplicate categories")
        if seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {seq_len}")
        self.vocabulary = list(vocabulary)
        self.seq_len = seq_len
        self.d_text = d_text

        words = [PAD_TOKEN, NULL_TOKEN] + _words(_PREFIX)
        for cat in sorted(vocabulary):
            for w in _words(cat):
                if w not in words:
                    words.append(w)
        self.word_list = words
        self.word_to_id = {w: i for i, w in enumerate(words)}
        self.table = nn.Embedding(len(words), d_text)

        longest = max(len(_words(CAPTION_TEMPLATE.format(category=c))) for c in vocabulary)
        if longest > seq_len:
            raise ValueError(
                f"seq_len={seq_len} too short for the longest caption ({longest} words)"
            )

    def token_ids(self, caption: Caption | str) -> list[int]:
        """Padded token ids for one caption."""
        if isinstance(caption, str):
            caption = Caption.parse(caption, self.vocabulary)
        elif caption.category not in self.vocabulary:
            raise VocabularyError(caption.category, self.vocabulary)
        ids = [self.word_to_id[w] for w in _words(caption.text)]
        ids += [self.word_to_id[PAD_TOKEN]] * (self.seq_len - len(ids))
        return ids

    def forward(self, captions: list[Caption | str]) -> torch.Tensor:
        """Embed a batch of captions to shape (B, seq_len, d_text)."""
        ids = torch.tensor([self.token_ids(c) for c in captions], dtype=torch.int64)
        return self.table(ids)

    def encode_null(self, batch_size: int) -> torch.Tensor:
        """The no-text sequence: the null token followed by padding."""
        row = [self.word_to_id[NULL_TOKEN]] + [self.word_to_id[PAD_TOKEN]] * (
            self.seq_len - 1
        )
        ids = torch.tensor([row] * batch_size, dtype=torch.int64)
        return self.table(ids)
