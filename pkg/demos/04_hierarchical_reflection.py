"""Error recovery at two granularities: a window reflector breaking a
repetitive loop, and a global reflector catching a premature terminate.

Run:  python demos/04_hierarchical_reflection.py
"""

from guiagent import fixtures
from guiagent.evolve import max_identical_run
from guiagent.executor import ExecutorConfig, run_task
from guiagent.gateway import ScriptedBackend
from guiagent.reflection import ReflectionConfig
from guiagent.simenv import SimEnv


def loop_run(reflection_on: bool):
    env = SimEnv(fixtures.scenario("loop"))
    env.reset("open_menu", seed=0)
    backend = ScriptedBackend(fixtures.script("loop_scripts"))
    reflection = ReflectionConfig(action_enabled=False, trajectory_enabled=True,
                                  global_enabled=False) if reflection_on else None
    return run_task(env.task.instruction, env, backend,
                    ExecutorConfig(max_steps=8, reflection=reflection))


for on in (False, True):
    t = loop_run(on)
    print(f"trajectory reflection {'ON ' if on else 'OFF'}: outcome={t.outcome.status:<8} "
          f"steps={len(t.steps)} longest identical run={max_identical_run(t.actions())}")


def premature_run(global_on: bool):
    env = SimEnv(fixtures.scenario("settings"))
    env.reset("wifi_bluetooth", seed=0)
    backend = ScriptedBackend(fixtures.script("settings_scripts"))
    reflection = ReflectionConfig(action_enabled=False, trajectory_enabled=False,
                                  global_enabled=True, resume_budget=2) if global_on else None
    return run_task(env.task.instruction, env, backend, ExecutorConfig(reflection=reflection))


print()
for on in (False, True):
    t = premature_run(on)
    verdicts = [v for s in t.steps for v in s.reflections if v.level == "global"]
    print(f"global reflection {'ON ' if on else 'OFF'}: outcome={t.outcome.status:<8} "
          f"steps={len(t.steps)} global verdicts={len(verdicts)}")
