"""Synthetic dialog corpus with planted intent/category and NPS structure.

Each session has a hidden category.  Utterance intents come from that
category's intent block with probability ``rho`` (otherwise uniformly from all
non-greeting intents), and utterance text is drawn from intent-specific word
pools mixed with shared filler words.  About half of the sessions start with
an agent of the wrong category and are later transferred; the turns before
the transfer lower the NPS, a resolution message raises it.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import GREETING, CorpusError, DialogSession, Role, Utterance

CATEGORY_NAMES = (
    "Badge Issue", "Completion Issue", "Finding Content", "Technical Issue",
    "System Help", "Ticket Status", "Login Problem", "Apps Issue",
    "Raise Tickets", "Account Issue", "Other",
)

FILLER = (
    "i", "the", "a", "to", "my", "you", "can", "please", "is", "it", "this", "for",
    "and", "of", "me", "on", "with", "have", "do", "that", "not", "be", "we", "in",
)
GREETING_WORDS = ("hi", "hello", "hey", "how", "may", "i", "assist", "you", "today", "thanks", "bye", "good")
RESOLUTION_WORDS = ("resolved", "fixed", "ticket", "created", "restored", "done", "working", "now")
UNHELPFUL_WORDS = ("sorry", "unable", "cannot", "not", "able", "unfortunately", "outside", "scope")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "gl", "sk")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


@dataclass
class SynthConfig:
    n_sessions: int = 2000
    n_categories: int = 4
    n_intents: int = 12
    rho: float = 0.9
    nps_noise: float = 1.0
    nps_fraction: float = 0.5
    transfer_fraction: float = 0.5
    min_turns: int = 17
    max_turns: int = 27
    min_tokens: int = 7
    max_tokens: int = 14
    pool_size: int = 12
    topic_share: float = 0.25
    resolution_rate: float = 0.5
    resolution_bonus: float = 2.0
    mismatch_penalty: float = 0.25

    def validate(self) -> None:
        if not 0.0 <= self.rho <= 1.0:
            raise CorpusError(f"rho must lie in [0, 1], got {self.rho}")
        if self.n_categories < 2:
            raise CorpusError("need at least 2 categories")
        if self.n_intents - 1 < self.n_categories:
            raise CorpusError("need at least one non-greeting intent per category")
        for name in ("nps_fraction", "transfer_fraction", "topic_share", "resolution_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise CorpusError(f"{name} must lie in [0, 1]")
        if self.n_sessions < 0 or self.nps_noise < 0:
            raise CorpusError("n_sessions and nps_noise must be non-negative")
        if not 1 <= self.min_turns <= self.max_turns or not 1 <= self.min_tokens <= self.max_tokens:
            raise CorpusError("turn and token ranges must be positive and ordered")

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise CorpusError(f"unknown generator config fields: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


def category_names(n: int) -> list[str]:
    return [CATEGORY_NAMES[i] if i < len(CATEGORY_NAMES) else f"Category {i}" for i in range(n)]


def intent_blocks(cfg: SynthConfig) -> list[list[int]]:
    """Non-greeting intent ids (1..n_intents-1) split into one block per category."""
    return [list(b) for b in np.array_split(np.arange(1, cfg.n_intents), cfg.n_categories)]


def intent_names(cfg: SynthConfig) -> list[str]:
    cats = category_names(cfg.n_categories)
    names = [GREETING]
    for c, block in enumerate(intent_blocks(cfg)):
        slug = cats[c].lower().replace(" ", "_")
        names.extend(f"{slug}_{j}" for j in range(len(block)))
    return names


def _word_pools(cfg: SynthConfig, rng: np.random.Generator) -> list[list[str]]:
    seen = set(FILLER) | set(GREETING_WORDS) | set(RESOLUTION_WORDS) | set(UNHELPFUL_WORDS)
    pools = []
    for _ in range(cfg.n_intents):
        pool = []
        while len(pool) < cfg.pool_size:
            n_syl = int(rng.integers(2, 4))
            word = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                           for _ in range(n_syl))
            if word not in seen:
                seen.add(word)
                pool.append(word)
        pools.append(pool)
    return pools


def _text(rng, n_tokens: int, topic: list[str] | tuple[str, ...], share: float) -> str:
    words = [topic[rng.integers(len(topic))] if rng.random() < share else FILLER[rng.integers(len(FILLER))]
             for _ in range(n_tokens)]
    return " ".join(words)


def generate_synthetic(cfg: SynthConfig | None = None, seed: int = 0) -> list[DialogSession]:
    cfg = cfg or SynthConfig()
    cfg.validate()
    master = np.random.SeedSequence(seed)
    pool_seq, *session_seqs = master.spawn(cfg.n_sessions + 1)
    pools = _word_pools(cfg, np.random.default_rng(pool_seq))
    cats = category_names(cfg.n_categories)
    names = intent_names(cfg)
    blocks = intent_blocks(cfg)
    base = np.linspace(4.0, 8.0, cfg.n_categories)
    return [_session(cfg, np.random.default_rng(sq), pools, cats, names, blocks, base)
            for sq in session_seqs]


def _session(cfg, rng, pools, cats, names, blocks, base) -> DialogSession:
    c = int(rng.integers(cfg.n_categories))
    n_content = int(rng.integers(cfg.min_turns, cfg.max_turns + 1))
    utts: list[Utterance] = []

    def greet(role, n):
        utts.append(Utterance(role, _text(rng, n, GREETING_WORDS, 1.0), GREETING))

    greet(Role.AGENT, int(rng.integers(4, 8)))
    if rng.random() < 0.5:
        greet(Role.USER, int(rng.integers(1, 4)))
    lead = len(utts)

    transfer_at = None
    first_cat = c
    if rng.random() < cfg.transfer_fraction:
        first_cat = int((c + rng.integers(1, cfg.n_categories)) % cfg.n_categories)
        transfer_at = int(rng.integers(4, max(5, n_content // 2) + 1))
    resolved = rng.random() < cfg.resolution_rate

    role = Role.USER
    mismatch_turns = 0
    for t in range(n_content):
        if rng.random() < cfg.rho:
            intent = int(blocks[c][rng.integers(len(blocks[c]))])
        else:
            intent = int(rng.integers(1, cfg.n_intents))
        n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        text = _text(rng, n_tok, pools[intent], cfg.topic_share)
        wrong_agent = transfer_at is not None and t < transfer_at
        if role == Role.AGENT and wrong_agent:
            mismatch_turns += 1
            text = _text(rng, n_tok, UNHELPFUL_WORDS, 0.5)
        elif role == Role.AGENT and resolved and t >= n_content - 2:
            text = _text(rng, n_tok, RESOLUTION_WORDS, 0.5)
        utts.append(Utterance(role, text, names[intent]))
        # roles mostly alternate, with occasional double turns
        if rng.random() < 0.75:
            role = Role.AGENT if role == Role.USER else Role.USER

    if rng.random() < 0.5:
        greet(Role.USER, int(rng.integers(1, 4)))

    if transfer_at is not None:
        segments = ((0, cats[first_cat]), (lead + transfer_at, cats[c]))
    else:
        segments = ((0, cats[c]),)

    nps = None
    score = base[c] + cfg.resolution_bonus * resolved - cfg.mismatch_penalty * mismatch_turns
    score += rng.normal(0.0, cfg.nps_noise) if cfg.nps_noise > 0 else 0.0
    if rng.random() < cfg.nps_fraction:
        nps = round(float(np.clip(score, 0.0, 10.0)), 1)
    return DialogSession(tuple(utts), cats[c], nps, segments)


def corpus_stats(sessions) -> dict:
    from .text import tokenize

    n_utts = sum(len(s.utterances) for s in sessions)
    n_tok = sum(len(tokenize(u.text)) for s in sessions for u in s.utterances)
    labelled = [s.nps for s in sessions if s.nps is not None]
    return {
        "sessions": len(sessions),
        "avg_tokens_per_utterance": n_tok / max(n_utts, 1),
        "avg_turns_per_session": n_utts / max(len(sessions), 1),
        "total_tokens": n_tok,
        "nps_labelled_fraction": len(labelled) / max(len(sessions), 1),
        "transfer_fraction": sum(len(s.segments) > 1 for s in sessions) / max(len(sessions), 1),
    }
