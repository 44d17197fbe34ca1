import pytest

from guiagent import fixtures
from guiagent.actions import click, render_response, terminate
from guiagent.ask import QaPair
from guiagent.executor import (
    ACTION_CONTRACT,
    ExecutorBackendError,
    ExecutorConfig,
    ExecutorRun,
    HistorySummary,
    build_prompt,
    run_task,
    trajectory_from_dict,
)
from guiagent.gateway import BackendScript, ScriptRule, ScriptedBackend
from guiagent.knowledge import KnowledgeDoc
from guiagent.simenv import SimEnv


def scripted(*rules, default=None):
    return ScriptedBackend(BackendScript(rules=list(rules), default_response=default))


def exec_rule(*responses, contains=None, cycle=False, raise_error=None):
    return ScriptRule(role="executor", contains=contains, cycle=cycle,
                      responses=list(responses), raise_error=raise_error)


def fresh_env(name="settings", task="wifi"):
    env = SimEnv(fixtures.scenario(name))
    env.reset(task, seed=0)
    return env


WIFI_CLICK = render_response("toggle it", "Turned on the Wi-Fi toggle.", click(540, 260))
DONE = render_response("done", "Declared the task complete.", terminate("success"))


def test_three_step_scripted_run():
    env = fresh_env("bench", "t04_write_note")
    backend = ScriptedBackend(fixtures.script("bench_scripts"))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    assert trajectory.outcome.status == "success"
    assert len(trajectory.steps) == 4
    kinds = [s.action.kind for s in trajectory.steps]
    assert kinds == ["open", "click", "type", "terminate"]


def test_history_is_exact_summary_concatenation():
    env = fresh_env()
    backend = scripted(exec_rule(WIFI_CLICK, DONE))
    run = ExecutorRun(env.task.instruction, env, backend, ExecutorConfig())
    run.run_until_blocked()
    trajectory = run.trajectory()
    expected = [s.response.action_summary for s in trajectory.steps if s.action is not None]
    assert run.history.entries == expected


def test_parse_failure_retry_then_recover():
    env = fresh_env()
    backend = scripted(exec_rule("garbage", WIFI_CLICK, DONE))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    # first call garbled, the reprompt (with failure text) got the click
    assert trajectory.outcome.status == "success"
    assert len(trajectory.steps) == 2
    assert trajectory.steps[0].action.kind == "click"


def test_double_parse_failure_records_failed_step_and_continues():
    env = fresh_env()
    backend = scripted(exec_rule("junk one", "junk two", WIFI_CLICK, DONE))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    assert trajectory.outcome.status == "success"
    assert trajectory.steps[0].parse_failure is not None
    assert trajectory.steps[0].action is None
    assert len(trajectory.steps) == 3


def test_reprompt_carries_failure_text():
    env = fresh_env()
    backend = scripted(
        exec_rule(WIFI_CLICK, DONE, contains="was malformed"),
        exec_rule("garbage", cycle=True),
    )
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    assert trajectory.outcome.status == "success"


def test_max_steps_exceeded():
    env = fresh_env()
    backend = scripted(exec_rule(WIFI_CLICK, cycle=True))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig(max_steps=3))
    assert trajectory.outcome.status == "failure"
    assert trajectory.outcome.reason == "MaxStepsExceeded"
    assert len(trajectory.steps) == 3


def test_backend_error_attaches_partial_trajectory():
    env = fresh_env()
    backend = scripted(exec_rule(WIFI_CLICK), exec_rule(raise_error="transport"))
    with pytest.raises(ExecutorBackendError) as err:
        run_task(env.task.instruction, env, backend, ExecutorConfig())
    assert len(err.value.partial.steps) == 1
    assert err.value.partial.steps[0].action.kind == "click"


def test_env_error_recorded_not_fatal():
    env = fresh_env("bench", "t04_write_note")
    type_without_focus = (
        "<thinking>type early</thinking>\n<summary>Typed without focus.</summary>\n"
        '<action>{"action": "type", "text": "milk"}</action>'
    )
    backend = scripted(exec_rule(type_without_focus, DONE))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    assert trajectory.steps[0].error == "NoFocusedField"
    assert trajectory.steps[0].snapshot_after.step_index == 1  # failed steps consume time
    assert len(trajectory.steps) == 2


def test_prompt_determinism_and_ordering():
    env = fresh_env()
    snap = env.snapshot()
    history = HistorySummary(["Opened settings."])
    docs = [KnowledgeDoc(id="k1", title="Hint", body="red means high priority")]
    qa = [QaPair("Which flavor?", "Spicy Beef", 0)]
    a = build_prompt("do it", history, snap, docs, ["[action] missed"], qa)
    b = build_prompt("do it", history, snap, docs, ["[action] missed"], qa)
    assert a == b
    text = a.user_text()
    order = [text.index(h) for h in
             ["## Instruction", "## Knowledge", "## History", "## Feedback", "## QA", "## Screen",
              "## Response contract"]]
    assert order == sorted(order)
    assert "red means high priority" in text
    assert "Q: Which flavor?" in text
    assert text.index("Q: Which flavor?") < text.index("## Screen")


def test_prompt_empty_sections_marked():
    env = fresh_env()
    text = build_prompt("x", HistorySummary(), env.snapshot()).user_text()
    assert "## History\n(empty)" in text
    assert "## Knowledge\n(none)" in text
    assert ACTION_CONTRACT in text


def test_knowledge_docs_source_ordered():
    env = fresh_env()
    docs = [
        KnowledgeDoc(id="b", title="B", body="second"),
        KnowledgeDoc(id="a", title="A", body="first"),
    ]
    text = build_prompt("x", HistorySummary(), env.snapshot(), docs).user_text()
    assert text.index("[b] B: second") < text.index("[a] A: first")


def test_trajectory_round_trip_serialization():
    env = fresh_env()
    backend = scripted(exec_rule(WIFI_CLICK, DONE))
    trajectory = run_task(env.task.instruction, env, backend, ExecutorConfig())
    d = trajectory.to_dict()
    back = trajectory_from_dict(d)
    assert back.to_dict() == d
    assert back.canonical_json() == trajectory.canonical_json()


def test_one_action_per_backend_call():
    env = fresh_env()
    backend = scripted(exec_rule(WIFI_CLICK, DONE))
    run = ExecutorRun(env.task.instruction, env, backend, ExecutorConfig())
    run.run_until_blocked()
    executor_calls = [c for c in backend.calls if c["role"] == "executor"]
    executed = [s for s in run.steps if s.action is not None]
    assert len(executor_calls) == len(executed)
