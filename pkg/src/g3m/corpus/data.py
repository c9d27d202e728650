"""Dialog sessions, JSONL persistence and label preprocessing."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

GREETING = "Greeting"
NPS_MIN, NPS_MAX = 0.0, 10.0


class CorpusError(ValueError):
    """Malformed or invalid session data."""


class ParseError(CorpusError):
    pass


class Role(IntEnum):
    USER = 0
    AGENT = 1


@dataclass(frozen=True)
class Utterance:
    role: Role
    text: str
    intent: str


@dataclass(frozen=True)
class DialogSession:
    utterances: tuple[Utterance, ...]
    category: str
    nps: Optional[float] = None
    segments: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        if self.nps is not None and not NPS_MIN <= self.nps <= NPS_MAX:
            raise CorpusError(f"nps {self.nps} outside [0, 10]")
        starts = [s for s, _ in self.segments]
        if starts and (starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:]))):
            raise CorpusError(f"segments must start at turn 0 and increase strictly: {starts}")

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def cut_points(self) -> list[int]:
        """Turn indices where the serving agent changes."""
        return [s for s, _ in self.segments[1:]]


@dataclass(frozen=True)
class Sample:
    """A dialog prefix with its training labels.

    ``y_nps`` is z-scored; ``nps_raw`` keeps the original 0-10 value.
    """

    prefix: tuple[Utterance, ...]
    category: str
    y_nps: Optional[float] = None
    nps_raw: Optional[float] = None
    session_id: int = -1


# ---------------------------------------------------------------- JSON lines


def session_to_dict(s: DialogSession) -> dict:
    return {
        "utterances": [{"role": int(u.role), "text": u.text, "intent": u.intent} for u in s.utterances],
        "nps": s.nps,
        "category": s.category,
        "segments": [[turn, cat] for turn, cat in s.segments],
    }


def _require(obj: dict, key: str, line: int):
    if key not in obj:
        raise ParseError(f"line {line}: missing required field {key!r}")
    return obj[key]


def session_from_dict(obj: dict, line: int = 0) -> DialogSession:
    if not isinstance(obj, dict):
        raise ParseError(f"line {line}: expected a JSON object")
    raw_utts = _require(obj, "utterances", line)
    category = _require(obj, "category", line)
    if not isinstance(raw_utts, list) or not isinstance(category, str):
        raise ParseError(f"line {line}: 'utterances' must be a list and 'category' a string")
    utts = []
    for k, u in enumerate(raw_utts):
        if not isinstance(u, dict):
            raise ParseError(f"line {line}: utterance {k} is not an object")
        role = _require(u, "role", line)
        if role not in (0, 1):
            raise ParseError(f"line {line}: utterance {k} has role {role!r}, expected 0 or 1")
        text = _require(u, "text", line)
        intent = _require(u, "intent", line)
        utts.append(Utterance(Role(role), str(text), str(intent)))
    nps = obj.get("nps")
    if nps is not None:
        if isinstance(nps, bool) or not isinstance(nps, (int, float)):
            raise ParseError(f"line {line}: 'nps' must be a number or null")
        if not NPS_MIN <= nps <= NPS_MAX:
            raise CorpusError(f"line {line}: nps {nps} outside [0, 10]")
    segments = tuple((int(t), str(c)) for t, c in obj.get("segments", []))
    try:
        return DialogSession(tuple(utts), category, nps, segments)
    except CorpusError as exc:
        raise CorpusError(f"line {line}: {exc}") from None


def load_sessions(path) -> list[DialogSession]:
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            sessions.append(session_from_dict(obj, lineno))
    return sessions


def dumps_session(s: DialogSession) -> str:
    return json.dumps(session_to_dict(s), ensure_ascii=False)


def save_sessions(sessions: Iterable[DialogSession], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write(dumps_session(s))
            fh.write("\n")


# ---------------------------------------------------------------- preprocessing


def strip_greetings(session: DialogSession, greeting: str = GREETING) -> Optional[DialogSession]:
    """Drop leading and trailing runs of greeting-intent utterances.

    Returns None when nothing but greetings remains.  Segment start turns are
    shifted onto the shortened session.
    """
    utts = session.utterances
    lo, hi = 0, len(utts)
    while lo < hi and utts[lo].intent == greeting:
        lo += 1
    while hi > lo and utts[hi - 1].intent == greeting:
        hi -= 1
    if lo == hi:
        log.warning("session of category %r holds only greetings; excluded", session.category)
        return None
    segments: list[tuple[int, str]] = []
    for start, cat in session.segments:
        shifted = max(0, start - lo)
        if start >= hi:
            break
        if segments and segments[-1][0] == shifted:
            segments[-1] = (shifted, cat)
        else:
            segments.append((shifted, cat))
    return DialogSession(utts[lo:hi], session.category, session.nps, tuple(segments))


def preprocess(sessions: Sequence[DialogSession], greeting: str = GREETING
               ) -> tuple[list[DialogSession], list[int]]:
    """Strip greetings; return kept sessions and indices of excluded ones."""
    kept, excluded = [], []
    for i, s in enumerate(sessions):
        out = strip_greetings(s, greeting)
        if out is None:
            excluded.append(i)
        else:
            kept.append(out)
    return kept, excluded


@dataclass(frozen=True)
class ZScore:
    mean: float
    sigma: float

    def apply(self, x):
        return zscore_apply(x, self.mean, self.sigma)

    def invert(self, z):
        return z * self.sigma + self.mean


def zscore_fit(scores: Sequence[float]) -> ZScore:
    """Mean and population standard deviation of training scores."""
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size < 2:
        raise CorpusError(f"z-score fit needs at least 2 scores, got {arr.size}")
    sigma = float(arr.std())
    if sigma == 0.0:
        raise CorpusError("z-score fit on constant scores (sigma == 0)")
    return ZScore(float(arr.mean()), sigma)


def zscore_apply(score, mean: float, sigma: float):
    return (score - mean) / sigma


def partition_samples(session: DialogSession, zscore: Optional[ZScore], session_id: int = -1
                      ) -> list[Sample]:
    """One sample per agent transfer plus one for the whole session.

    The prefix before a transfer is labelled with the category of the agent
    taking over; the whole-session sample carries the session category.
    """
    y = raw = None
    if session.nps is not None and zscore is not None:
        raw = float(session.nps)
        y = float(zscore.apply(raw))
    elif session.nps is not None:
        raw = float(session.nps)
    samples = []
    n = len(session.utterances)
    for start, cat in session.segments[1:]:
        if 0 < start < n:
            samples.append(Sample(session.utterances[:start], cat, y, raw, session_id))
    samples.append(Sample(session.utterances, session.category, y, raw, session_id))
    return samples


def build_samples(sessions: Sequence[DialogSession], zscore: Optional[ZScore]) -> list[Sample]:
    out = []
    for i, s in enumerate(sessions):
        out.extend(partition_samples(s, zscore, i))
    return out


# ---------------------------------------------------------------- splitting


def split(items: Sequence, seed: int, ratios=(8, 1, 1)) -> tuple[list, list, list]:
    """Random train/valid/test partition at item granularity."""
    n = len(items)
    total = float(sum(ratios))
    n_valid = int(round(n * ratios[1] / total))
    n_test = int(round(n * ratios[2] / total))
    order = np.random.default_rng(seed).permutation(n)
    train = [items[i] for i in order[: n - n_valid - n_test]]
    valid = [items[i] for i in order[n - n_valid - n_test: n - n_test]]
    test = [items[i] for i in order[n - n_test:]]
    return train, valid, test


def kfold(items: Sequence, k: int, seed: int) -> list[list]:
    """``k`` disjoint folds whose sizes differ by at most one."""
    if k < 2:
        raise CorpusError(f"k must be at least 2, got {k}")
    if len(items) < k:
        raise CorpusError(f"cannot make {k} folds from {len(items)} sessions")
    order = np.random.default_rng(seed).permutation(len(items))
    return [[items[i] for i in part] for part in np.array_split(order, k)]


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    return [np.asarray(f, dtype=np.int64) for f in kfold(list(range(n)), k, seed)]
