import pytest

from guiagent import fixtures
from guiagent.actions import click, render_response, terminate
from guiagent.evolve import max_identical_run
from guiagent.executor import ExecutorConfig, run_task
from guiagent.gateway import BackendScript, ScriptRule, ScriptedBackend
from guiagent.reflection import (
    FeedbackBoard,
    ReflectionConfig,
    ReflectionVerdict,
    parse_verdict_text,
    reflect_action,
    reflect_trajectory,
)
from guiagent.simenv import SimEnv

NOT_OK = (
    "<verdict>not_ok</verdict>\n<diagnosis>missed the button</diagnosis>\n"
    "<suggestion>aim for the center</suggestion>"
)


def scripted(*rules):
    return ScriptedBackend(BackendScript(rules=list(rules)))


def test_parse_verdict_text():
    assert parse_verdict_text(NOT_OK) == (False, "missed the button", "aim for the center")
    assert parse_verdict_text("<verdict>ok</verdict>") == (True, "", "")
    assert parse_verdict_text("no tags at all") is None
    assert parse_verdict_text("<verdict>maybe</verdict>") is None


def test_window_range_contract():
    with pytest.raises(ValueError):
        ReflectionConfig(window=2)
    with pytest.raises(ValueError):
        ReflectionConfig(window=6)
    for w in (3, 4, 5):
        assert ReflectionConfig(window=w).window == w


def test_action_level_span_invariant():
    with pytest.raises(ValueError):
        ReflectionVerdict("action", True, "", "", (0, 2))


def env_and_snaps():
    env = SimEnv(fixtures.scenario("loop"))
    before = env.reset("open_menu")
    after, _ = env.step(click(5, 5))  # dead click; layout unchanged
    return env, before, after


def test_reflect_action_scripted_judge():
    _, before, after = env_and_snaps()
    response_ok = ScriptedBackend(BackendScript(rules=[
        ScriptRule(role="action_reflector", responses=["<verdict>ok</verdict>"])]))
    from guiagent.actions import parse_response
    response = parse_response(render_response("t", "Tapped search.", click(5, 5)))
    verdict = reflect_action(before, after, response, response_ok, step_index=0)
    assert verdict.ok and verdict.level == "action" and verdict.step_span == (0, 0)


def test_reflect_action_rule_fallback_grounding():
    _, before, after = env_and_snaps()
    from guiagent.actions import parse_response
    response = parse_response(render_response("t", "Tapped search.", click(5, 5)))
    verdict = reflect_action(before, after, response, gateway=None, step_index=3)
    assert not verdict.ok
    assert "unchanged" in verdict.diagnosis
    assert verdict.step_span == (3, 3)


def test_reflect_action_env_error_fallback():
    _, before, after = env_and_snaps()
    from guiagent.actions import parse_response, type_text, serialize_action
    raw = render_response("t", "Typed milk.", type_text("milk"))
    response = parse_response(raw)
    verdict = reflect_action(before, after, response, None, step_index=1,
                             env_error="NoFocusedField")
    assert not verdict.ok
    assert "NoFocusedField" in verdict.diagnosis


def test_reflect_action_backend_failure_degrades_to_ok():
    _, before, after = env_and_snaps()
    from guiagent.actions import parse_response
    response = parse_response(render_response("t", "Tapped search.", click(5, 5)))
    broken = scripted(ScriptRule(role="action_reflector", raise_error="transport"))
    verdict = reflect_action(before, after, response, broken, step_index=0)
    assert verdict.ok  # non-blocking contract


def test_feedback_board_persists_until_superseded():
    board = FeedbackBoard()
    v1 = ReflectionVerdict("action", False, "missed", "retry", (0, 0))
    board.record(v1)
    assert board.feedback_lines() == [v1.feedback_text()]
    board.record(ReflectionVerdict("trajectory", False, "looping", "stop", (0, 2)))
    assert len(board.feedback_lines()) == 2
    board.record(ReflectionVerdict("action", True, "", "", (1, 1)))  # supersedes v1
    assert len(board.feedback_lines()) == 1
    assert "looping" in board.feedback_lines()[0]


def test_loop_fixture_reduction():
    def run(reflect_on):
        env = SimEnv(fixtures.scenario("loop"))
        env.reset("open_menu", seed=0)
        backend = ScriptedBackend(fixtures.script("loop_scripts"))
        reflection = ReflectionConfig(action_enabled=False, trajectory_enabled=True,
                                      global_enabled=False) if reflect_on else None
        cfg = ExecutorConfig(max_steps=8, reflection=reflection)
        return run_task(env.task.instruction, env, backend, cfg)

    with_reflection = run(True)
    without = run(False)
    assert with_reflection.outcome.status == "success"
    assert without.outcome.status == "failure"
    assert max_identical_run(with_reflection.actions()) < max_identical_run(without.actions())


def test_not_ok_feedback_reaches_next_prompt():
    env = SimEnv(fixtures.scenario("loop"))
    env.reset("open_menu", seed=0)
    rules = [
        ScriptRule(role="executor", contains="aim for the Menu", responses=[
            render_response("ok", "Tapped Menu.", click(800, 260)),
            render_response("done", "Finished.", terminate("success")),
        ]),
        ScriptRule(role="executor", cycle=True, responses=[
            render_response("try", "Tapped search.", click(280, 260)),
        ]),
        ScriptRule(role="action_reflector", cycle=True, responses=[
            "<verdict>not_ok</verdict><diagnosis>the tap changed nothing</diagnosis>"
            "<suggestion>aim for the Menu button</suggestion>",
        ]),
    ]
    cfg = ExecutorConfig(max_steps=6, reflection=ReflectionConfig(
        action_enabled=True, trajectory_enabled=False, global_enabled=False))
    trajectory = run_task(env.task.instruction, env, scripted(*rules), cfg)
    # the verdict text was routed verbatim into the next prompt, flipping the script branch
    assert trajectory.outcome.status == "success"
    assert any(not v.ok for s in trajectory.steps for v in s.reflections)


def test_premature_terminate_resume_and_budget():
    def run(budget):
        env = SimEnv(fixtures.scenario("settings"))
        env.reset("wifi_bluetooth", seed=0)
        backend = ScriptedBackend(fixtures.script("settings_scripts"))
        cfg = ExecutorConfig(reflection=ReflectionConfig(
            action_enabled=False, trajectory_enabled=False,
            global_enabled=True, resume_budget=budget))
        return run_task(env.task.instruction, env, backend, cfg)

    fixed = run(2)
    assert fixed.outcome.status == "success"
    assert len(fixed.steps) == 4


def test_global_budget_exhaustion():
    env = SimEnv(fixtures.scenario("settings"))
    env.reset("wifi_bluetooth", seed=0)
    rules = [
        ScriptRule(role="executor", cycle=True, responses=[
            render_response("stop", "Declared done.", terminate("success")),
        ]),
        ScriptRule(role="global_reflector", cycle=True, responses=[
            "<verdict>not_ok</verdict><diagnosis>nothing happened</diagnosis>"
            "<suggestion>do the actual work</suggestion>",
        ]),
    ]
    cfg = ExecutorConfig(reflection=ReflectionConfig(
        action_enabled=False, trajectory_enabled=False, global_enabled=True, resume_budget=2))
    trajectory = run_task(env.task.instruction, env, scripted(*rules), cfg)
    assert trajectory.outcome.status == "failure"
    assert trajectory.outcome.reason == "GlobalReflectorBudget"
    terminates = [s for s in trajectory.steps if s.action and s.action.kind == "terminate"]
    assert len(terminates) == 3  # initial + 2 resumes


def test_trajectory_reflector_fires_early_on_two_action_failures():
    window_calls = []

    class Spy(ScriptedBackend):
        def complete(self, bundle):
            if bundle.role_name == "trajectory_reflector":
                window_calls.append(1)
            return super().complete(bundle)

    env = SimEnv(fixtures.scenario("loop"))
    env.reset("open_menu", seed=0)
    rules = [
        ScriptRule(role="executor", cycle=True, responses=[
            render_response("try", "Tapped search.", click(280, 260)),
        ]),
        ScriptRule(role="action_reflector", cycle=True, responses=[
            "<verdict>not_ok</verdict><diagnosis>no effect</diagnosis><suggestion>rethink</suggestion>",
        ]),
        ScriptRule(role="trajectory_reflector", cycle=True, responses=["<verdict>ok</verdict>"]),
    ]
    cfg = ExecutorConfig(max_steps=2, reflection=ReflectionConfig(
        action_enabled=True, trajectory_enabled=True, global_enabled=False, window=5))
    run_task(env.task.instruction, env, Spy(BackendScript(rules=rules)), cfg)
    # window=5 would fire at step 5, but two action-level failures trigger it at step 2
    assert len(window_calls) == 1


def test_reflect_trajectory_rule_fallback_detects_loop():
    env = SimEnv(fixtures.scenario("loop"))
    env.reset("open_menu", seed=0)
    backend = scripted(ScriptRule(role="executor", cycle=True, responses=[
        render_response("try", "Tapped search.", click(280, 260)),
    ]))
    cfg = ExecutorConfig(max_steps=3, reflection=ReflectionConfig(
        action_enabled=False, trajectory_enabled=True, global_enabled=False))
    trajectory = run_task(env.task.instruction, env, backend, cfg)
    verdicts = [v for s in trajectory.steps for v in s.reflections if v.level == "trajectory"]
    assert verdicts and not verdicts[0].ok  # no scripted judge; rule fallback caught it


def test_all_reflector_failures_degrade_without_aborting():
    env = SimEnv(fixtures.scenario("settings"))
    env.reset("wifi", seed=0)
    rules = [
        ScriptRule(role="executor", responses=[
            render_response("toggle", "Turned on wifi.", click(540, 260)),
            render_response("one more", "Waited.", click(540, 260)),
            render_response("again", "Waited more.", click(540, 260)),
            render_response("done", "Finished.", terminate("success")),
        ]),
        ScriptRule(role="action_reflector", raise_error="transport"),
        ScriptRule(role="trajectory_reflector", raise_error="timeout"),
        ScriptRule(role="global_reflector", raise_error="transport"),
    ]
    cfg = ExecutorConfig(reflection=ReflectionConfig(
        action_enabled=True, trajectory_enabled=True, global_enabled=True))
    trajectory = run_task(env.task.instruction, env, scripted(*rules), cfg)
    assert trajectory.outcome.status in ("success", "failure")
    assert len(trajectory.steps) == 4  # every step executed despite reflector failures
    assert all(v.ok for s in trajectory.steps for v in s.reflections)
