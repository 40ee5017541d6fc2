"""Word-level vocabulary and tokenizer for criteria captions."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from medgrad.errors import VocabularyError

PAD, BOS, EOS = 0, 1, 2
N_RESERVED = 3
DEFAULT_CONTEXT_LENGTH = 32

_SPLIT = re.compile(r"[\s,\-]+")


def words(caption: str) -> list[str]:
    """Lowercase and split on whitespace, commas and hyphens."""
    return [w for w in _SPLIT.split(caption.lower()) if w]


def normalize(caption: str) -> str:
    return " ".join(words(caption))


class Vocabulary:
    """Token <-> id map. Ids 0..2 are PAD, BOS, EOS; words follow in first-seen order."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: list[str] = []
        self._ids: dict[str, int] = {}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self._ids:
            self._ids[token] = len(self.tokens) + N_RESERVED
            self.tokens.append(token)
        return self._ids[token]

    @classmethod
    def from_captions(cls, captions: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for c in captions:
            for w in words(c):
                vocab.add(w)
        return vocab

    def __len__(self) -> int:
        """Total id range, reserved ids included."""
        return len(self.tokens) + N_RESERVED

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} is not in the vocabulary") from None

    def token_of(self, idx: int) -> str:
        if not N_RESERVED <= idx < len(self):
            raise VocabularyError(f"token id {idx} is not a word id (vocabulary size {len(self)})")
        return self.tokens[idx - N_RESERVED]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def tokenize(vocab: Vocabulary, caption: str, context_length: int = DEFAULT_CONTEXT_LENGTH) -> np.ndarray:
    """``[BOS, w..., EOS, PAD...]`` of length ``context_length``.

    Over-long captions are truncated before EOS so that EOS is always present.
    """
    missing = [w for w in words(caption) if w not in vocab]
    if missing:
        raise VocabularyError(f"tokens not in vocabulary: {', '.join(sorted(set(missing)))}")
    ids = [vocab.id_of(w) for w in words(caption)][: context_length - 2]
    out = np.full(context_length, PAD, dtype=np.int64)
    out[0] = BOS
    out[1 : 1 + len(ids)] = ids
    out[1 + len(ids)] = EOS
    return out


def detokenize(vocab: Vocabulary, ids: Sequence[int]) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i == BOS or i == PAD:
            continue
        if i == EOS:
            break
        out.append(vocab.token_of(i))
    return " ".join(out)


def eos_position(ids: np.ndarray) -> np.ndarray:
    """Index of the first EOS along the last axis."""
    ids = np.asarray(ids)
    hit = ids == EOS
    if not np.all(hit.any(axis=-1)):
        raise VocabularyError("token sequence has no EOS")
    return hit.argmax(axis=-1)
