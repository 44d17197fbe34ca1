import pytest

from guiagent import fixtures
from guiagent.actions import click, render_response, terminate
from guiagent.executor import ExecutorConfig, run_task
from guiagent.gateway import BackendScript, ScriptRule, ScriptedBackend
from guiagent.knowledge import score_document, tokenize
from guiagent.persona import (
    PersonaStore,
    Preference,
    SopRecord,
    UserProfile,
    extract_intention_flows,
    match_sop_record,
    personalize,
)
from guiagent.simenv import SimEnv


def burger_history(n=2, user="u1"):
    """Two past orders that both picked the Spicy Beef flavor."""
    trajectories = []
    for i in range(n):
        env = SimEnv(fixtures.scenario("burger"))
        env.reset("order_burger", seed=0)
        backend = ScriptedBackend(fixtures.script("burger_history_scripts"))
        t = run_task("Order a hamburger", env, backend, ExecutorConfig(),
                     trajectory_id=f"{user}-hist-{i}")
        assert t.outcome.status == "success"
        trajectories.append(t)
    return trajectories


@pytest.fixture(scope="module")
def history():
    return burger_history()


@pytest.fixture
def store(tmp_path, history):
    records, profile = extract_intention_flows(history, "u1")
    s = PersonaStore(tmp_path / "persona")
    s.save("u1", records, profile)
    return s


def test_repeated_flavor_becomes_preference(history):
    records, profile = extract_intention_flows(history, "u1")
    prefs = {(p.topic, p.value): p for p in profile.preferences}
    assert ("FoodHub:flavors", "Spicy Beef") in prefs
    assert set(prefs[("FoodHub:flavors", "Spicy Beef")].evidence) == {
        "u1-hist-0", "u1-hist-1",
    }


def test_lone_widgets_do_not_become_preferences(history):
    records, profile = extract_intention_flows(history, "u1")
    values = [p.value for p in profile.preferences]
    assert "Place order" not in values  # a lone confirm button is not a choice
    assert "Burgers" not in values


def test_one_sop_record_per_distinct_query(history):
    records, _ = extract_intention_flows(history, "u1")
    assert len(records) == 1
    record = records[0]
    assert record.query == "Order a hamburger"
    # SOP keeps only meaningful steps: terminate is trivial
    trivial_free = [s for s in history[-1].steps
                    if s.action is not None and s.action.kind not in ("wait", "terminate")]
    assert len(record.sop) == len(trivial_free)
    assert record.source_trajectory_id == "u1-hist-1"


def test_empty_history():
    records, profile = extract_intention_flows([], "u9")
    assert records == []
    assert profile.preferences == []


def test_evidence_traceability(history):
    _, profile = extract_intention_flows(history, "u1")
    known = {t.id for t in history}
    for p in profile.preferences:
        assert p.evidence
        assert set(p.evidence) <= known


def test_personalize_names_preferred_flavor(store):
    result = personalize("Order a hamburger", "u1", store)
    assert "Spicy Beef" in result.rewritten
    assert result.matched_record_id is not None
    assert result.sop  # matched SOP travels along
    assert result.original == "Order a hamburger"


def test_personalize_identity_for_unknown_user(store):
    result = personalize("Order a hamburger", "stranger", store)
    assert result.rewritten == "Order a hamburger"
    assert result.sop == ()
    assert result.matched_record_id is None


def test_personalize_identity_on_no_match_no_preferences(tmp_path):
    store = PersonaStore(tmp_path / "kb")
    store.save("u2", [SopRecord(id="u2-sop-0", query="check the weather",
                                sop=("open the weather app",),
                                source_trajectory_id="tX", user_id="u2")],
               UserProfile(user_id="u2"))
    result = personalize("play some jazz music", "u2", store)
    assert result.rewritten == "play some jazz music"
    assert result.matched_record_id is None
    assert result.sop == ()


def test_matched_record_is_scoring_argmax(store):
    records, _ = store.load("u1")
    extra = [
        SopRecord(id="u1-sop-extra1", query="order pizza with extra cheese",
                  sop=("open pizza app",), source_trajectory_id="u1-hist-0", user_id="u1"),
        SopRecord(id="u1-sop-extra2", query="book a taxi downtown",
                  sop=("open taxi app",), source_trajectory_id="u1-hist-0", user_id="u1"),
    ]
    all_records = records + extra
    query = "Order a hamburger for lunch"
    matched, score = match_sop_record(query, all_records)

    # brute-force argmax with the shared scoring function
    df = {}
    for r in all_records:
        for t in set(tokenize(r.query)):
            df[t] = df.get(t, 0) + 1
    scores = {
        r.id: score_document(tokenize(query), tokenize(r.query), df) for r in all_records
    }
    best = max(sorted(scores), key=lambda rid: scores[rid])
    assert matched.id == best
    assert score == pytest.approx(scores[best])


def test_store_round_trip(tmp_path, history):
    records, profile = extract_intention_flows(history, "u1")
    s = PersonaStore(tmp_path / "p")
    s.save("u1", records, profile)
    loaded_records, loaded_profile = s.load("u1")
    assert [r.to_dict() for r in loaded_records] == [r.to_dict() for r in records]
    assert loaded_profile.to_dict() == profile.to_dict()


def test_gateway_rewriter_overrides_rule(store):
    backend = ScriptedBackend(BackendScript(rules=[
        ScriptRule(role="query_rewriter",
                   responses=["Order a Spicy Beef hamburger from FoodHub"]),
        ScriptRule(role="sop_extractor", cycle=True,
                   responses=['["open FoodHub", "pick Spicy Beef", "place the order"]']),
    ]))
    result = personalize("Order a hamburger", "u1", store, backend)
    assert result.rewritten == "Order a Spicy Beef hamburger from FoodHub"
    assert result.sop == ("open FoodHub", "pick Spicy Beef", "place the order")


def test_profile_judge_can_extract_preferences(history):
    backend = ScriptedBackend(BackendScript(rules=[
        ScriptRule(role="profile_extractor", responses=[
            '[{"topic": "burger_flavor", "value": "Spicy Beef",'
            ' "evidence": ["u1-hist-0", "u1-hist-1", "ghost"]}]']),
        ScriptRule(role="sop_extractor", cycle=True, responses=["nonsense"]),
    ]))
    _, profile = extract_intention_flows(history, "u1", backend)
    assert profile.preferences == [
        Preference("burger_flavor", "Spicy Beef", ("u1-hist-0", "u1-hist-1"))
    ]


def test_preference_requires_evidence():
    with pytest.raises(ValueError):
        Preference("topic", "value", ())
