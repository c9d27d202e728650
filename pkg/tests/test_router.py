import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, CASE_TRACE, ScriptedPredictor
from g3m.corpus import Role, load_sessions
from g3m.router import (
    AgentKind,
    AgentProfile,
    Registry,
    RoutingError,
    RoutingPolicy,
    choose_agent,
    decide,
    replay,
)


def _prefix_to_user_turn(session, k):
    """Prefix ending at the k-th (0-based) user utterance."""
    seen = -1
    for i, u in enumerate(session.utterances):
        if u.role == Role.USER:
            seen += 1
            if seen == k:
                return session.utterances[: i + 1]
    raise IndexError(k)


def test_low_nps_transfers_to_human_of_predicted_category(case_session, scripted, registry):
    prefix = _prefix_to_user_turn(case_session, 7)
    d = decide(prefix, scripted, registry, RoutingPolicy(), current_agent="a1-bot")
    assert d.nps_raw == 4.8 and d.category == "Completion Issue"
    assert d.action == "transfer" and d.transfer_to == "a2-human"


def test_threshold_or_above_stays(case_session, scripted, registry):
    d = decide(_prefix_to_user_turn(case_session, 5), scripted, registry, current_agent="a1-bot")
    assert d.nps_raw == 5.8 and d.action == "stay" and d.transfer_to is None


def test_same_category_escalates_bot_to_human(case_session, registry):
    p = ScriptedPredictor(trace=[4.0] * 11, cats=["Finding Content"] * 11)
    d = decide(_prefix_to_user_turn(case_session, 0), p, registry, current_agent="a1-bot")
    assert d.transfer_to == "fc-human"


def test_no_agent_left_stays_with_warning(case_session):
    reg = Registry([AgentProfile("only", AgentKind.BOT, "Finding Content")])
    p = ScriptedPredictor(trace=[4.0] * 11, cats=["Finding Content"] * 11)
    d = decide(_prefix_to_user_turn(case_session, 0), p, reg, current_agent="only")
    assert d.action == "stay" and d.warning


def test_choose_agent_tie_break_and_preference():
    reg = Registry([
        AgentProfile("z-human", AgentKind.HUMAN, "X"),
        AgentProfile("b-bot", AgentKind.BOT, "X"),
        AgentProfile("a-bot", AgentKind.BOT, "X"),
        AgentProfile("y-human", AgentKind.HUMAN, "X"),
    ])
    assert choose_agent("X", reg, RoutingPolicy(), None) == "y-human"
    assert choose_agent("X", reg, RoutingPolicy(), "y-human") == "z-human"
    assert choose_agent("X", reg, RoutingPolicy(prefer_human=False), None) == "a-bot"


def test_decide_is_pure(case_session, scripted, registry):
    prefix = _prefix_to_user_turn(case_session, 7)
    a = decide(prefix, scripted, registry, current_agent="a1-bot")
    b = decide(prefix, scripted, registry, current_agent="a1-bot")
    assert a.transfer_to == b.transfer_to and a.nps_raw == b.nps_raw
    assert (a.cat_probs == b.cat_probs).all()


def test_decide_rejects_agent_final_prefix(case_session, scripted, registry):
    with pytest.raises(RoutingError):
        decide(case_session.utterances[:2], scripted, registry)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10))
def test_stay_iff_at_or_above_threshold(nps, threshold):
    class One(ScriptedPredictor):
        def __init__(self):
            super().__init__(trace=[nps] * 11, cats=["Completion Issue"] * 11)

    session = load_sessions(FIXTURES / "case_study.jsonl")[0]
    reg = Registry([AgentProfile("h", AgentKind.HUMAN, "Completion Issue")])
    d = decide(session.utterances[:1], One(), reg, RoutingPolicy(threshold))
    assert (d.action == "stay") == (nps >= threshold)


def test_replay_marks_first_crossing_only(case_session, scripted, registry):
    lines = replay(case_session, scripted, registry, current_agent="a1-bot")
    routes = [l for l in lines if "ROUTE" in l]
    assert routes == ["-- NPS: 4.8 | category: Completion Issue | ROUTE -> a2-human"]
    assert "-- NPS: 5.8 | category: Finding Content" in lines
    n_user = sum(u.role == Role.USER for u in case_session.utterances)
    assert len(lines) == len(case_session.utterances) + n_user
    assert lines[0] == "U: Hi" and lines[2] == "A: Hello, how may I assist you?"


def test_replay_trigger_matches_first_decide_transfer(case_session, scripted, registry):
    lines = replay(case_session, scripted, registry, current_agent="a1-bot")
    notes = [l for l in lines if l.startswith("-- ")]
    first = next(k for k in range(len(CASE_TRACE))
                 if decide(_prefix_to_user_turn(case_session, k), scripted, registry,
                           current_agent="a1-bot").action == "transfer")
    assert "ROUTE" in notes[first]


def test_replay_zero_threshold_never_triggers(case_session, scripted, registry):
    lines = replay(case_session, scripted, registry, RoutingPolicy(threshold=0.0))
    assert not any("ROUTE" in l for l in lines)


def test_registry_json_and_validation(tmp_path):
    path = tmp_path / "reg.json"
    path.write_text(json.dumps([{"id": "h1", "kind": "human", "category": "A"},
                                {"id": "b1", "kind": "bot", "category": "B"}]))
    reg = Registry.load(path)
    assert reg["h1"].kind == AgentKind.HUMAN
    reg.check_covers(["A", "B"])
    with pytest.raises(RoutingError):
        reg.check_covers(["C"])
    with pytest.raises(RoutingError):
        Registry.from_json([{"id": "x", "kind": "robot", "category": "A"}])
    with pytest.raises(RoutingError):
        Registry.from_json([{"id": "x", "kind": "bot", "category": "A"}] * 2)
    with pytest.raises(RoutingError):
        RoutingPolicy(threshold=11)
