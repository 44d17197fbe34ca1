"""Human-in-the-loop: an ambiguous order triggers exactly one clarifying
question; afterwards, two past orders teach the recognizer the user's flavor
so the same query no longer needs asking.

Run:  python demos/05_ask_and_personalization.py
"""

import tempfile

from guiagent import fixtures
from guiagent.ask import AskConfig
from guiagent.executor import ExecutorConfig, run_task
from guiagent.gateway import ScriptedBackend
from guiagent.persona import PersonaStore, extract_intention_flows, personalize
from guiagent.simenv import SimEnv

# --- proactive ASK -----------------------------------------------------------
env = SimEnv(fixtures.scenario("burger"))
env.reset("order_burger", seed=0)
backend = ScriptedBackend(fixtures.script("burger_scripts"))


def user(question: str) -> str:
    print(f"agent asks: {question}")
    print("user answers: Spicy Beef")
    return "Spicy Beef"


trajectory = run_task("Order a hamburger", env, backend,
                      ExecutorConfig(ask=AskConfig(enabled=True)), answer_provider=user)
print(f"run outcome: {trajectory.outcome.status}; ordered {env.state['order']}\n")

# --- personalization over history --------------------------------------------
history = []
for i in range(2):
    env = SimEnv(fixtures.scenario("burger"))
    env.reset("order_burger", seed=0)
    backend = ScriptedBackend(fixtures.script("burger_history_scripts"))
    history.append(run_task("Order a hamburger", env, backend, ExecutorConfig(),
                            trajectory_id=f"hist-{i}"))

records, profile = extract_intention_flows(history, "u1")
print("learned preferences:",
      [f"{p.topic} -> {p.value} ({len(p.evidence)} orders)" for p in profile.preferences])
print("stored SOP:", list(records[0].sop))

with tempfile.TemporaryDirectory() as root:
    store = PersonaStore(root)
    store.save("u1", records, profile)
    result = personalize("Order a hamburger", "u1", store)
    print(f"rewritten query: {result.rewritten}")
    result_stranger = personalize("Order a hamburger", "stranger", store)
    print(f"unknown user stays identity: {result_stranger.rewritten!r}")
