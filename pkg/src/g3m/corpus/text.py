"""Tokenisation, vocabularies and the ``[CLS] u1 [SEP] u2 [SEP] ...`` packing."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import CorpusError, DialogSession, Sample, Utterance

log = logging.getLogger(__name__)

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
RESERVED = (CLS, SEP, PAD, UNK)
CLS_ID, SEP_ID, PAD_ID, UNK_ID = range(4)
DEFAULT_M_MAX = 128

_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lower-cased word tokens; whitespace and punctuation separate them."""
    return _TOKEN.findall(text.lower())


class Vocabulary:
    """Token, intent and category maps.

    Token ids 0..3 are reserved for ``[CLS] [SEP] [PAD] [UNK]``; the rest are
    assigned in first-appearance order.  Labels are sorted by name.
    """

    def __init__(self, tokens: Sequence[str], intents: Sequence[str], categories: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise CorpusError("token list must start with the reserved tokens")
        for name, items in (("token", tokens), ("intent", intents), ("category", categories)):
            if len(set(items)) != len(items):
                raise CorpusError(f"duplicate {name} entries")
        self.tokens = list(tokens)
        self.intents = list(intents)
        self.categories = list(categories)
        self.token_ids = {t: i for i, t in enumerate(self.tokens)}
        self.intent_ids = {t: i for i, t in enumerate(self.intents)}
        self.category_ids = {t: i for i, t in enumerate(self.categories)}

    @classmethod
    def build(cls, sessions: Iterable[DialogSession], extra_intents: Iterable[str] = (),
              extra_categories: Iterable[str] = ()) -> "Vocabulary":
        tokens = dict.fromkeys(RESERVED)
        intents, cats = set(extra_intents), set(extra_categories)
        for s in sessions:
            cats.add(s.category)
            cats.update(c for _, c in s.segments)
            for u in s.utterances:
                intents.add(u.intent)
                tokens.update(dict.fromkeys(tokenize(u.text)))
        return cls(list(tokens), sorted(intents), sorted(cats))

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.to_dict() == other.to_dict()

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_intents(self) -> int:
        return len(self.intents)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def encode(self, text: str) -> list[int]:
        return [self.token_ids.get(t, UNK_ID) for t in tokenize(text)]

    def intent_id(self, name: str) -> int:
        try:
            return self.intent_ids[name]
        except KeyError:
            raise CorpusError(f"unknown intent {name!r}") from None

    def category_id(self, name: str) -> int:
        try:
            return self.category_ids[name]
        except KeyError:
            raise CorpusError(f"unknown category {name!r}") from None

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "intents": self.intents, "categories": self.categories}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"], d["intents"], d["categories"])


@dataclass(frozen=True)
class PackedInput:
    token_ids: np.ndarray       # (T,) int64, T <= M_max
    sep_positions: np.ndarray   # (U,) int64
    roles: np.ndarray           # (U,) int64
    intents: np.ndarray         # (U,) int64
    truncated: bool = False

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def n_utterances(self) -> int:
        return int(self.sep_positions.shape[0])


def pack(utterances: Sequence[Utterance] | Sample, vocab: Vocabulary, m_max: int = DEFAULT_M_MAX
         ) -> PackedInput:
    """Lay a dialog prefix out as ``[CLS] u_1 [SEP] ... u_i [SEP]``.

    Oldest utterances are dropped whole until the sequence fits ``m_max``;
    the latest utterance is always kept (cut at its tail if it alone is too
    long, which sets ``truncated``).
    """
    if isinstance(utterances, Sample):
        utterances = utterances.prefix
    if not utterances:
        raise CorpusError("cannot pack an empty prefix")
    if m_max < 3:
        raise CorpusError(f"m_max must be at least 3, got {m_max}")
    encoded = [vocab.encode(u.text) for u in utterances]
    budget = m_max - 1
    first = len(encoded)
    used = 0
    while first > 0 and used + len(encoded[first - 1]) + 1 <= budget:
        first -= 1
        used += len(encoded[first]) + 1
    truncated = False
    if first == len(encoded):
        first = len(encoded) - 1
        encoded[first] = encoded[first][: m_max - 2]
        truncated = True
        log.debug("utterance of %d tokens cut to %d", len(vocab.encode(utterances[first].text)), m_max - 2)
    ids = [CLS_ID]
    seps = []
    for toks in encoded[first:]:
        ids.extend(toks)
        seps.append(len(ids))
        ids.append(SEP_ID)
    kept = utterances[first:]
    return PackedInput(
        token_ids=np.asarray(ids, dtype=np.int64),
        sep_positions=np.asarray(seps, dtype=np.int64),
        roles=np.asarray([int(u.role) for u in kept], dtype=np.int64),
        intents=np.asarray([vocab.intent_id(u.intent) for u in kept], dtype=np.int64),
        truncated=truncated,
    )
