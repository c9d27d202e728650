"""Threshold routing on predicted NPS and session replay."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .corpus import DialogSession, Role, Utterance

log = logging.getLogger(__name__)


class RoutingError(ValueError):
    pass


class AgentKind(str, Enum):
    BOT = "bot"
    HUMAN = "human"


@dataclass(frozen=True)
class AgentProfile:
    id: str
    kind: AgentKind
    category: str


@dataclass(frozen=True)
class RoutingPolicy:
    threshold: float = 5.0
    prefer_human: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 10.0:
            raise RoutingError(f"threshold {self.threshold} outside [0, 10]")


@dataclass(frozen=True)
class RoutingDecision:
    transfer_to: Optional[str]   # None means stay
    nps_raw: float
    cat_probs: np.ndarray = field(repr=False)
    category: str
    warning: Optional[str] = None

    @property
    def action(self) -> str:
        return "stay" if self.transfer_to is None else "transfer"


class Predictor(Protocol):
    def predict(self, item, mode: str = "eval"): ...


class Registry:
    def __init__(self, agents: Sequence[AgentProfile]):
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            raise RoutingError("agent ids must be unique")
        self.agents = tuple(sorted(agents, key=lambda a: a.id))
        self._by_id = {a.id: a for a in self.agents}

    def __getitem__(self, agent_id: str) -> AgentProfile:
        try:
            return self._by_id[agent_id]
        except KeyError:
            raise RoutingError(f"unknown agent {agent_id!r}") from None

    def for_category(self, category: str) -> list[AgentProfile]:
        return [a for a in self.agents if a.category == category]

    def check_covers(self, categories: Sequence[str]) -> None:
        missing = [c for c in categories if not self.for_category(c)]
        if missing:
            raise RoutingError(f"no agent for categories {missing}")

    @classmethod
    def from_json(cls, obj) -> "Registry":
        if not isinstance(obj, list):
            raise RoutingError("registry must be a JSON array")
        agents = []
        for i, a in enumerate(obj):
            try:
                agents.append(AgentProfile(str(a["id"]), AgentKind(a["kind"]), str(a["category"])))
            except (KeyError, ValueError, TypeError) as e:
                raise RoutingError(f"registry entry {i}: {e}") from None
        return cls(agents)

    @classmethod
    def load(cls, path) -> "Registry":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _category_name(model, idx: int) -> str:
    return model.vocab.categories[idx]


def choose_agent(category: str, registry: Registry, policy: RoutingPolicy,
                 current: Optional[str]) -> Optional[str]:
    pool = [a for a in registry.for_category(category) if a.id != current]
    if not pool:
        return None
    if policy.prefer_human:
        pool.sort(key=lambda a: (a.kind != AgentKind.HUMAN, a.id))
    return pool[0].id


def decide(prefix: Sequence[Utterance], model: Predictor, registry: Registry,
           policy: RoutingPolicy = RoutingPolicy(), current_agent: Optional[str] = None
           ) -> RoutingDecision:
    """Stay while predicted NPS is at or above the threshold, else transfer.

    The target serves the predicted category and is never the current agent.
    """
    if not prefix:
        raise RoutingError("empty dialog prefix")
    if prefix[-1].role != Role.USER:
        raise RoutingError("decide expects the prefix to end with a user utterance")
    p = model.predict(list(prefix), mode="eval")
    category = _category_name(model, p.cat_argmax)
    if p.nps_raw >= policy.threshold:
        return RoutingDecision(None, p.nps_raw, p.cat_probs, category)
    target = choose_agent(category, registry, policy, current_agent)
    if target is None:
        msg = f"no agent available for {category!r}; staying"
        log.warning(msg)
        return RoutingDecision(None, p.nps_raw, p.cat_probs, category, warning=msg)
    return RoutingDecision(target, p.nps_raw, p.cat_probs, category)


def replay(session: DialogSession, model: Predictor, registry: Optional[Registry] = None,
           policy: RoutingPolicy = RoutingPolicy(), current_agent: Optional[str] = None
           ) -> list[str]:
    """Transcript with an annotation after every user turn.

    Only the first sub-threshold turn carries a ``ROUTE`` marker.  Without a
    registry the marker names the predicted category instead of an agent.
    """
    lines = []
    routed = False
    for i, u in enumerate(session.utterances):
        lines.append(("U: " if u.role == Role.USER else "A: ") + u.text)
        if u.role != Role.USER:
            continue
        prefix = session.utterances[: i + 1]
        if registry is not None:
            d = decide(prefix, model, registry, policy, current_agent)
            nps, cat, target = d.nps_raw, d.category, d.transfer_to
        else:
            p = model.predict(list(prefix), mode="eval")
            nps, cat = p.nps_raw, _category_name(model, p.cat_argmax)
            target = cat if nps < policy.threshold else None
        note = f"-- NPS: {nps:.1f} | category: {cat}"
        if target is not None and not routed:
            note += f" | ROUTE -> {target}"
            routed = True
        lines.append(note)
    return lines
