"""Word-level tokenizer for action phrases."""
from __future__ import annotations

from typing import Iterable

PAD, UNK, CLS, SEP = "<PAD>", "<UNK>", "<CLS>", "<SEP>"
SPECIALS = (PAD, UNK, CLS, SEP)


class Tokenizer:
    """Lower-cased whitespace tokenizer over a fixed vocabulary.

    Ids 0-3 are reserved for ``<PAD>``, ``<UNK>``, ``<CLS>``, ``<SEP>``; corpus
    words follow in the order given at construction.
    """

    def __init__(self, words: Iterable[str]):
        vocab = list(SPECIALS)
        for w in words:
            w = w.lower()
            if w not in vocab:
                vocab.append(w)
        self.vocab = vocab
        self._ids = {w: i for i, w in enumerate(vocab)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Tokenizer":
        words = sorted({w for t in texts for w in t.lower().split()})
        return cls(words)

    def __len__(self):
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return 0

    def encode(self, text: str) -> list[int]:
        words = text.lower().split()
        if not words:
            raise ValueError("cannot tokenize empty text")
        unk = self._ids[UNK]
        return [self._ids[CLS]] + [self._ids.get(w, unk) for w in words] + [self._ids[SEP]]

    def decode(self, ids: Iterable[int]) -> str:
        skip = {self._ids[PAD], self._ids[CLS], self._ids[SEP]}
        return " ".join(self.vocab[i] for i in ids if i not in skip)
