import json

import pytest

from guiagent import fixtures
from guiagent.actions import click, render_response, terminate
from guiagent.datalab import read_samples
from guiagent.evolve import (
    DISCRIMINATORS,
    CorrectionQueue,
    DiscriminatorVerdict,
    EmptySeedPool,
    GateResult,
    QueryPool,
    QueryRecord,
    expand_queries,
    export_finetune_set,
    gate_trajectory,
    max_identical_run,
    rollout,
)
from guiagent.executor import ExecutorConfig, run_task
from guiagent.gateway import BackendScript, ScriptRule, ScriptedBackend
from guiagent.simenv import SimEnv


def scripted(*rules, default=None):
    return ScriptedBackend(BackendScript(rules=list(rules), default_response=default))


# --- query pool / expansion ------------------------------------------------------

def test_pool_dedup_case_insensitive():
    pool = QueryPool()
    assert pool.add(QueryRecord("a", "Turn on wifi")) is True
    assert pool.add(QueryRecord("b", "turn ON WIFI  ")) is False
    assert len(pool) == 1


def test_expand_queries_provenance_and_dedup():
    seeds = [QueryRecord("s1", "turn on wifi")]
    backend = scripted(ScriptRule(role="query_expander", responses=[
        "enable wifi\nturn on wifi\nswitch the wifi on\n- activate wireless\nextra beyond n"
    ]))
    new, warnings = expand_queries(seeds, 3, backend)
    assert warnings == 0
    assert [r.text for r in new] == ["enable wifi", "switch the wifi on", "activate wireless"]
    assert all(r.origin == "expanded" and r.parent_id == "s1" for r in new)


def test_expand_backend_failure_counts_warning():
    seeds = [QueryRecord("s1", "seed-alpha"), QueryRecord("s2", "seed-beta")]
    backend = scripted(
        ScriptRule(role="query_expander", contains="seed-alpha", raise_error="transport"),
        ScriptRule(role="query_expander", responses=["beta variant"]),
    )
    new, warnings = expand_queries(seeds, 2, backend)
    assert warnings == 1
    assert [r.text for r in new] == ["beta variant"]


def test_expand_empty_seeds():
    with pytest.raises(EmptySeedPool):
        expand_queries([], 3, scripted(default="x"))


def test_pool_save_load_round_trip(tmp_path):
    pool = QueryPool([QueryRecord("s1", "seed one")])
    pool.add(QueryRecord("s1-x0", "expanded", origin="expanded", parent_id="s1"))
    path = tmp_path / "pool.jsonl"
    pool.save(path)
    loaded = QueryPool.load(path)
    assert [r.to_dict() for r in loaded.records] == [r.to_dict() for r in pool.records]


# --- rollout -----------------------------------------------------------------------

def _executor_rule():
    return ScriptRule(role="executor", cycle=True, responses=[
        "<thinking>open it</thinking>\n<summary>Opened the Clock app.</summary>\n"
        '<action>{"action": "open", "text": "Clock"}</action>',
        "<thinking>done</thinking>\n<summary>Finished.</summary>\n"
        '<action>{"action": "terminate", "status": "success"}</action>',
    ])


def test_rollout_vary_start_cycles(phone_scenario):
    backend = scripted(_executor_rule())
    runs = rollout(QueryRecord("q1", "Open the Clock app"), phone_scenario, 3, backend,
                   vary_start=True)
    assert [r.start_screen for r in runs] == ["Launcher:home", "Clock:main", "Launcher:home"]
    assert all(r.trajectory is not None for r in runs)


def test_rollout_single_repeat(phone_scenario):
    backend = scripted(_executor_rule())
    runs = rollout(QueryRecord("q1", "Open the Clock app"), phone_scenario, 1, backend)
    assert len(runs) == 1
    assert runs[0].trajectory.outcome.status == "success"


def test_rollout_determinism(phone_scenario):
    def batch():
        backend = scripted(_executor_rule())
        return rollout(QueryRecord("q1", "Open the Clock app"), phone_scenario, 3, backend,
                       vary_start=False, temperature=0.0)

    a, b = batch(), batch()
    for ra, rb in zip(a, b):
        assert ra.trajectory.canonical_json().replace(ra.trajectory.id, "X") == \
            rb.trajectory.canonical_json().replace(rb.trajectory.id, "X")
    ids = {r.trajectory.id for r in a}
    assert ids == {"q1-r0", "q1-r1", "q1-r2"}


def test_rollout_vary_start_needs_two_starts(settings_scenario):
    with pytest.raises(ValueError):
        rollout(QueryRecord("q", "x"), settings_scenario, 2, scripted(default="x"),
                vary_start=True)


def test_rollout_binds_task_by_instruction(phone_scenario):
    backend = scripted(_executor_rule())
    runs = rollout(QueryRecord("q1", "open the clock APP"), phone_scenario, 1, backend)
    assert runs[0].trajectory.task_id == "open_clock"


def test_rollout_attaches_errors_without_aborting(phone_scenario):
    backend = scripted(
        ScriptRule(role="executor", raise_error="transport"),
    )
    runs = rollout(QueryRecord("q1", "Open the Clock app"), phone_scenario, 2, backend)
    assert len(runs) == 2
    assert all(r.trajectory is None and "transport" in r.error.lower() for r in runs)


# --- the discriminator gate -----------------------------------------------------

def loop_failure_trajectory():
    """Three identical failing clicks then a hopeful terminate; predicate unmet."""
    env = SimEnv(fixtures.scenario("loop"))
    env.reset("open_menu", seed=0)
    backend = scripted(ScriptRule(role="executor", responses=[
        render_response("t", "Tapped search.", click(280, 260)),
        render_response("t", "Tapped search.", click(280, 260)),
        render_response("t", "Tapped search.", click(280, 260)),
        render_response("t", "Declared done.", terminate("success")),
    ]))
    return run_task(env.task.instruction, env, backend, ExecutorConfig())


def good_trajectory():
    env = SimEnv(fixtures.scenario("loop"))
    env.reset("open_menu", seed=0)
    backend = scripted(ScriptRule(role="executor", responses=[
        render_response("t", "Tapped menu.", click(800, 260)),
        render_response("t", "Finished.", terminate("success")),
    ]))
    return run_task(env.task.instruction, env, backend, ExecutorConfig())


def test_gate_accepts_clean_success():
    result = gate_trajectory(good_trajectory())
    assert result.accepted
    assert result.routed_to == "finetune_set"
    assert len(result.verdicts) == 7
    assert {v.name for v in result.verdicts} == set(DISCRIMINATORS)


def test_gate_rejects_redundant_failure():
    result = gate_trajectory(loop_failure_trajectory())
    assert not result.accepted
    assert result.routed_to == "correction_queue"
    failed = {v.name for v in result.verdicts if not v.passed}
    assert "redundancy" in failed
    assert "task_completion" in failed


def test_gate_soundness_enforced_structurally():
    verdicts = tuple(DiscriminatorVerdict(n, True, "ok") for n in DISCRIMINATORS)
    with pytest.raises(ValueError):
        GateResult("t", verdicts, accepted=False, routed_to="correction_queue")
    with pytest.raises(ValueError):
        GateResult("t", verdicts[:6], accepted=True, routed_to="finetune_set")
    with pytest.raises(ValueError):
        GateResult("t", verdicts, accepted=True, routed_to="correction_queue")


def test_gate_judge_overrides_rules():
    trajectory = good_trajectory()
    backend = scripted(ScriptRule(
        role="trajectory_discriminator", contains="path_relevance",
        responses=["<verdict>fail</verdict><rationale>detour detected</rationale>"],
    ))
    result = gate_trajectory(trajectory, backend)
    assert not result.accepted
    failed = [v for v in result.verdicts if not v.passed]
    assert [v.name for v in failed] == ["path_relevance"]
    assert failed[0].rationale == "detour detected"


def test_gate_judge_failure_falls_back_to_rules():
    trajectory = good_trajectory()
    backend = scripted(ScriptRule(role="trajectory_discriminator", cycle=True,
                                  raise_error="transport"))
    result = gate_trajectory(trajectory, backend)
    assert result.accepted  # rules say this one is clean


def test_action_validity_rule_catches_env_errors():
    env = SimEnv(fixtures.scenario("bench"))
    env.reset("t04_write_note")
    backend = scripted(ScriptRule(role="executor", responses=[
        "<thinking>t</thinking>\n<summary>Typed early.</summary>\n"
        '<action>{"action": "type", "text": "milk"}</action>',
        render_response("t", "Declared done.", terminate("success")),
    ]))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    result = gate_trajectory(trajectory)
    assert not result.accepted
    assert "action_validity" in {v.name for v in result.verdicts if not v.passed}


# --- correction queue -------------------------------------------------------------

def test_correction_patch_replay_and_export(tmp_path, loop_scenario):
    rejected = loop_failure_trajectory()
    gate = gate_trajectory(rejected)
    queue = CorrectionQueue(tmp_path / "queue")
    queue.add(rejected, gate)
    assert queue.ids() == [rejected.id]

    corrected = queue.apply_patch(rejected.id, 2, click(800, 260), loop_scenario)
    assert corrected.corrected
    assert corrected.outcome.status == "success"
    regate = gate_trajectory(corrected)
    assert regate.accepted

    queue.remove(rejected.id)
    assert queue.ids() == []

    out = tmp_path / "finetune.jsonl"
    count = export_finetune_set([good_trajectory(), corrected], out)
    assert count == 2 + 4
    samples = read_samples(out)
    corrected_flags = [s.corrected for s in samples]
    assert corrected_flags == [False, False, True, True, True, True]
    header = json.loads(out.read_text().splitlines()[0])
    assert header == {"record": "header", "schema": "step_sample/v1", "count": 6}


def test_patch_out_of_range(tmp_path, loop_scenario):
    rejected = loop_failure_trajectory()
    queue = CorrectionQueue(tmp_path / "q")
    queue.add(rejected, gate_trajectory(rejected))
    from guiagent.evolve import EvolveError
    with pytest.raises(EvolveError):
        queue.apply_patch(rejected.id, 99, click(1, 1), loop_scenario)


def test_export_empty_writes_header_only(tmp_path):
    out = tmp_path / "empty.jsonl"
    assert export_finetune_set([], out) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["record"] == "header"


def test_max_identical_run():
    a, b = click(1, 1), click(2, 2)
    assert max_identical_run([]) == 0
    assert max_identical_run([a, b, a]) == 1
    assert max_identical_run([a, a, a, b, b]) == 3


# --- one full loop iteration is deterministic -------------------------------------

def full_iteration(tmp_path_factory_dir):
    seeds = [QueryRecord("s1", "Open the Clock app")]
    backend = scripted(
        ScriptRule(role="query_expander", responses=["open clock\nstart the clock app"]),
        _executor_rule(),
    )
    pool = QueryPool(list(seeds))
    new, _ = expand_queries(seeds, 2, backend, pool)
    scenario = fixtures.scenario("phone")
    all_runs = []
    for record in pool.records:
        all_runs.extend(rollout(record, scenario, 1, backend))
    accepted = []
    for r in all_runs:
        if r.trajectory is None:
            continue
        gate = gate_trajectory(r.trajectory)
        if gate.accepted:
            accepted.append(r.trajectory)
    out = tmp_path_factory_dir / "set.jsonl"
    export_finetune_set(accepted, out)
    return out.read_text()


def test_loop_composition_deterministic(tmp_path):
    a = full_iteration(tmp_path)
    b = full_iteration(tmp_path)
    assert a == b
    assert json.loads(a.splitlines()[0])["count"] == 6  # 3 queries x 2 steps
