"""Composite instruction across three shopping apps, with and without
memory transfer. The price facts only survive between atomic tasks when the
extractor + rewriter pipeline is on.

Run:  python demos/03_orchestration_memory_transfer.py
"""

from guiagent import fixtures
from guiagent.gateway import ScriptedBackend
from guiagent.orchestration import run_plan
from guiagent.simenv import SimEnv


def run(memory_transfer: bool):
    env = SimEnv(fixtures.scenario("shopping"))
    env.reset("buy_cheapest", seed=1)
    backend = ScriptedBackend(fixtures.script("shopping_scripts"))
    result = run_plan(env.task.instruction, env, backend, memory_transfer=memory_transfer)
    return result, env


result, env = run(memory_transfer=True)
print("plan:")
for task in result.plan:
    marker = "->" if task.rewritten_text else "  "
    print(f"  {task.index}. {task.text}")
    if task.rewritten_text and task.rewritten_text != task.text:
        print(f"     {marker} rewritten: {task.rewritten_text}")
print("memories carried:")
for memory in result.memories:
    facts = ", ".join(f"{f.key}={f.value}" for f in memory.facts)
    print(f"  after task {memory.source_task_index}: {facts}")
print(f"WITH memory transfer: {result.outcome.status}, cart={env.state['cart']}")

result_off, env_off = run(memory_transfer=False)
print(f"WITHOUT memory transfer: {result_off.outcome.status}, cart={env_off.state['cart']}")
