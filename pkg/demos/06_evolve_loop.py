"""One full self-evolving iteration at desk scale: expand queries, roll out,
gate with the seven discriminators, patch a rejected trajectory, export.

Run:  python demos/06_evolve_loop.py
"""

import tempfile
from pathlib import Path

from guiagent import fixtures
from guiagent.actions import click, render_response, terminate
from guiagent.evolve import (
    CorrectionQueue,
    QueryPool,
    QueryRecord,
    expand_queries,
    export_finetune_set,
    gate_trajectory,
    rollout,
)
from guiagent.executor import ExecutorConfig, run_task
from guiagent.gateway import BackendScript, ScriptRule, ScriptedBackend
from guiagent.simenv import SimEnv

backend = ScriptedBackend(BackendScript(rules=[
    ScriptRule(role="query_expander", responses=["open clock\nstart the clock app"]),
    ScriptRule(role="executor", cycle=True, responses=[
        "<thinking>by name</thinking>\n<summary>Opened the Clock app.</summary>\n"
        '<action>{"action": "open", "text": "Clock"}</action>',
        "<thinking>done</thinking>\n<summary>Finished.</summary>\n"
        '<action>{"action": "terminate", "status": "success"}</action>',
    ]),
]))

seeds = [QueryRecord("s1", "Open the Clock app")]
pool = QueryPool(list(seeds))
new, warnings = expand_queries(seeds, 2, backend, pool)
print(f"pool after expansion ({warnings} warnings):")
for record in pool.records:
    print(f"  {record.id}: {record.text} (origin={record.origin})")

scenario = fixtures.scenario("phone")
accepted = []
for record in pool.records:
    for run in rollout(record, scenario, 1, backend):
        gate = gate_trajectory(run.trajectory)
        print(f"gate {run.trajectory.id}: accepted={gate.accepted}")
        if gate.accepted:
            accepted.append(run.trajectory)

# a deliberately bad trajectory: three identical dead taps, then a false success
env = SimEnv(fixtures.scenario("loop"))
env.reset("open_menu", seed=0)
bad_backend = ScriptedBackend(BackendScript(rules=[ScriptRule(role="executor", responses=[
    render_response("t", "Tapped search.", click(280, 260)),
    render_response("t", "Tapped search.", click(280, 260)),
    render_response("t", "Tapped search.", click(280, 260)),
    render_response("t", "Declared done.", terminate("success")),
])]))
bad = run_task(env.task.instruction, env, bad_backend, ExecutorConfig())
gate = gate_trajectory(bad)
failed = [v.name for v in gate.verdicts if not v.passed]
print(f"gate {bad.id}: accepted={gate.accepted}, failed={failed}")

with tempfile.TemporaryDirectory() as root:
    queue = CorrectionQueue(Path(root) / "queue")
    queue.add(bad, gate)
    corrected = queue.apply_patch(bad.id, 2, click(800, 260), fixtures.scenario("loop"))
    regate = gate_trajectory(corrected)
    print(f"after step-2 patch + replay: accepted={regate.accepted}, "
          f"outcome={corrected.outcome.status}")
    out = Path(root) / "finetune.jsonl"
    count = export_finetune_set(accepted + [corrected], out)
    corrected_count = sum(
        1 for line in out.read_text().splitlines()[1:]
        if '"corrected": true' in line
    )
    print(f"exported {count} step samples ({corrected_count} flagged corrected=true)")
