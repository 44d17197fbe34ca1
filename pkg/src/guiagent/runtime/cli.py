"""Command-line entry points for running tasks, benchmarks, the data
pipelines, the self-evolving loop, personalization, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import fixtures
from ..actions import decode_action
from ..ask import AskConfig
from ..config import RuntimeConfig
from ..datalab import (
    GroupEvaluation,
    augment_multipath,
    filter_by_difficulty,
    grpo_objective,
    group_advantages,
    read_samples,
    score_response,
    split_trajectory,
    write_samples,
)
from ..evolve import (
    CorrectionQueue,
    QueryPool,
    QueryRecord,
    expand_queries,
    export_finetune_set,
    gate_trajectory,
    rollout,
)
from ..executor import ExecutorConfig, run_task, trajectory_from_dict
from ..knowledge import KnowledgeDoc, KnowledgeStore
from ..orchestration import run_plan
from ..persona import PersonaStore, extract_intention_flows, personalize
from ..reflection import ReflectionConfig
from ..simenv import SimEnv, load_scenario


def _load_scenario(ref: str):
    if Path(ref).exists():
        return load_scenario(ref)
    return fixtures.scenario(ref)


def _backend(args, config: RuntimeConfig):
    script = getattr(args, "script", None)
    if script and not Path(script).exists():
        script = str(fixtures.fixture_path(script))
    return config.build_backend(script_path=script)


def _answer_provider(spec: str | None):
    if not spec:
        return None
    if Path(spec).exists():
        mapping = json.loads(Path(spec).read_text(encoding="utf-8"))
    else:
        mapping = json.loads(spec)

    def provider(question: str) -> str | None:
        lowered = question.lower()
        for key, value in mapping.items():
            if key.lower() in lowered:
                return value
        return None

    return provider


def _load_trajectories(ref: str):
    path = Path(ref)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    return [trajectory_from_dict(json.loads(p.read_text(encoding="utf-8"))) for p in files]


# --- subcommands ---------------------------------------------------------------

def cmd_run(args, config: RuntimeConfig) -> int:
    scenario = _load_scenario(args.scenario)
    env = SimEnv(scenario)
    env.reset(args.task, seed=args.seed)
    backend = _backend(args, config)
    levels = set((args.reflection or "").split(",")) - {""}
    reflection = None
    if levels:
        reflection = ReflectionConfig(
            action_enabled="action" in levels,
            trajectory_enabled="trajectory" in levels,
            global_enabled="global" in levels,
            window=config.reflection_window,
            resume_budget=config.resume_budget,
        )
    exec_config = ExecutorConfig(
        max_steps=args.max_steps or config.max_steps,
        reflection=reflection,
        ask=AskConfig(enabled=args.ask, max_asks_per_run=config.max_asks_per_run),
    )
    store = KnowledgeStore.load(args.knowledge) if args.knowledge else None
    result = run_plan(
        env.task.instruction if args.instruction is None else args.instruction,
        env,
        backend,
        exec_config,
        knowledge_store=store,
        memory_transfer=not args.no_memory_transfer,
        answer_provider=_answer_provider(args.answers),
    )
    print(f"outcome: {result.outcome.status} ({result.outcome.reason})")
    for t in result.trajectories:
        print(f"  task {t.id}: {t.outcome.status} in {len(t.steps)} steps")
    if args.save:
        out = Path(args.save)
        out.mkdir(parents=True, exist_ok=True)
        for t in result.trajectories:
            (out / f"{t.id}.json").write_text(
                json.dumps(t.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
            )
        print(f"saved {len(result.trajectories)} trajectory file(s) to {out}")
    return 0 if result.outcome.status == "success" else 1


def run_bench(scenario, script_doc, max_steps: int = 30, seed: int = 0):
    """Run every task in the scenario against a fresh scripted backend; the
    report is deterministic (no timing columns)."""
    from ..gateway import BackendScript, ScriptedBackend

    rows = []
    for task_id in scenario.tasks:
        env = SimEnv(scenario)
        env.reset(task_id, seed=seed)
        backend = ScriptedBackend(
            script_doc if isinstance(script_doc, BackendScript)
            else BackendScript.from_dict(script_doc)
        )
        trajectory = run_task(
            env.task.instruction, env, backend, ExecutorConfig(max_steps=max_steps)
        )
        rows.append({
            "task": task_id,
            "status": trajectory.outcome.status,
            "steps": len(trajectory.steps),
        })
    return rows


def format_bench_table(rows) -> str:
    width = max(len(r["task"]) for r in rows)
    lines = [f"{'task'.ljust(width)}  status   steps"]
    for r in rows:
        lines.append(f"{r['task'].ljust(width)}  {r['status']:<8} {r['steps']:>5}")
    passed = sum(1 for r in rows if r["status"] == "success")
    pct = 100.0 * passed / len(rows) if rows else 0.0
    lines.append(f"total: {passed}/{len(rows)} tasks succeeded ({pct:.1f}%)")
    return "\n".join(lines)


def cmd_bench(args, config: RuntimeConfig) -> int:
    scenario = _load_scenario(args.scenario)
    script = args.script
    if not Path(script).exists():
        script = str(fixtures.fixture_path(script))
    script_doc = json.loads(Path(script).read_text(encoding="utf-8"))
    rows = run_bench(scenario, script_doc, max_steps=args.max_steps or config.max_steps,
                     seed=args.seed)
    print(format_bench_table(rows))
    return 0 if all(r["status"] == "success" for r in rows) else 1


def cmd_datagen_split(args, config: RuntimeConfig) -> int:
    count = 0
    samples = []
    for t in _load_trajectories(args.trajectory):
        samples.extend(split_trajectory(t))
        count += 1
    write_samples(args.out, samples)
    print(f"split {count} trajectory(ies) into {len(samples)} samples -> {args.out}")
    return 0


def cmd_datagen_augment(args, config: RuntimeConfig) -> int:
    scenario = _load_scenario(args.scenario)
    backend = _backend(args, config) if args.script else None
    samples = [augment_multipath(s, scenario, backend) for s in read_samples(args.samples)]
    write_samples(args.out, samples)
    added = sum(len(s.alternates) for s in samples)
    print(f"augmented {len(samples)} samples ({added} alternates) -> {args.out}")
    return 0


def cmd_datagen_filter(args, config: RuntimeConfig) -> int:
    samples = read_samples(args.samples)
    kept = filter_by_difficulty(samples, args.keep_zero_fraction, args.seed)
    write_samples(args.out, kept)
    print(f"kept {len(kept)}/{len(samples)} samples -> {args.out}")
    return 0


def cmd_score(args, config: RuntimeConfig) -> int:
    samples = read_samples(args.samples)
    responses = [
        json.loads(line)["response"]
        for line in Path(args.responses).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if len(responses) != len(samples):
        print(f"error: {len(samples)} samples but {len(responses)} responses", file=sys.stderr)
        return 2
    print("idx  r_fmt  r_type  r_params  r_acc  r_final")
    total = 0.0
    for i, (sample, response) in enumerate(zip(samples, responses)):
        b = score_response(response, sample, alpha=args.alpha, f1_threshold=args.f1_threshold)
        total += b.r_final
        print(f"{i:<4} {b.r_fmt:^6} {b.r_type:^7} {b.r_params:^9} {b.r_acc:^6} {b.r_final:.2f}")
    print(f"mean r_final: {total / len(samples):.4f}")
    return 0


def cmd_grpo_eval(args, config: RuntimeConfig) -> int:
    if args.input:
        doc = json.loads(Path(args.input).read_text(encoding="utf-8"))
    else:
        doc = {"rewards": [float(x) for x in args.rewards.split(",")]}
    rewards = doc["rewards"]
    advantages = group_advantages(rewards)
    out = {"rewards": rewards, "advantages": advantages}
    if "ratios" in doc:
        evaluation = GroupEvaluation(
            rewards=rewards,
            advantages=advantages,
            ratios=doc["ratios"],
            ref_ratios=doc.get("ref_ratios"),
            epsilon=doc.get("epsilon", 0.2),
            beta=doc.get("beta", 0.0),
        )
        out["objective"] = grpo_objective(evaluation)
    print(json.dumps(out, indent=2))
    return 0


def cmd_evolve_expand(args, config: RuntimeConfig) -> int:
    seeds = []
    for i, line in enumerate(Path(args.seeds).read_text(encoding="utf-8").splitlines()):
        if line.strip():
            if line.lstrip().startswith("{"):
                d = json.loads(line)
                seeds.append(QueryRecord(d["id"], d["text"], d.get("origin", "seed"),
                                         d.get("parent_id")))
            else:
                seeds.append(QueryRecord(f"seed-{i}", line.strip()))
    pool = QueryPool(seeds)
    backend = _backend(args, config)
    new, warnings = expand_queries(seeds, args.n, backend, pool)
    pool.save(args.pool)
    print(f"expanded {len(seeds)} seeds into {len(new)} new queries "
          f"({warnings} warnings) -> {args.pool}")
    return 0


def cmd_evolve_rollout(args, config: RuntimeConfig) -> int:
    scenario = _load_scenario(args.scenario)
    backend = _backend(args, config)
    if args.query:
        record = QueryRecord("q0", args.query)
    else:
        record = QueryPool.load(args.pool).records[args.index]
    runs = rollout(
        record, scenario, args.repeats, backend,
        vary_start=args.vary_start, temperature=args.temperature,
        task_id=args.task, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    saved = 0
    for r in runs:
        if r.trajectory is not None:
            (out / f"{r.trajectory.id}.json").write_text(
                json.dumps(r.trajectory.to_dict(), sort_keys=True, indent=2),
                encoding="utf-8",
            )
            saved += 1
        else:
            print(f"repeat failed: {r.error}", file=sys.stderr)
    print(f"saved {saved}/{len(runs)} rollout trajectory(ies) -> {out}")
    return 0


def cmd_evolve_gate(args, config: RuntimeConfig) -> int:
    backend = _backend(args, config) if args.script else None
    queue = CorrectionQueue(args.queue)
    accepted_dir = Path(args.accepted)
    accepted_dir.mkdir(parents=True, exist_ok=True)
    n_accepted = 0
    for t in _load_trajectories(args.trajectories):
        gate = gate_trajectory(t, backend)
        if gate.accepted:
            (accepted_dir / f"{t.id}.json").write_text(
                json.dumps(t.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
            )
            n_accepted += 1
        else:
            queue.add(t, gate)
        failed = [v.name for v in gate.verdicts if not v.passed]
        print(f"{t.id}: {'accepted' if gate.accepted else 'rejected ' + str(failed)}")
    print(f"accepted {n_accepted}; correction queue now holds {len(queue.ids())}")
    return 0


def cmd_evolve_correct(args, config: RuntimeConfig) -> int:
    scenario = _load_scenario(args.scenario)
    queue = CorrectionQueue(args.queue)
    action = decode_action(json.loads(args.action))
    corrected = queue.apply_patch(args.trajectory_id, args.step, action, scenario)
    gate = gate_trajectory(corrected)
    if not gate.accepted:
        failed = [v.name for v in gate.verdicts if not v.passed]
        print(f"corrected trajectory still fails: {failed}", file=sys.stderr)
        return 1
    accepted_dir = Path(args.accepted)
    accepted_dir.mkdir(parents=True, exist_ok=True)
    (accepted_dir / f"{corrected.id}.json").write_text(
        json.dumps(corrected.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
    )
    queue.remove(args.trajectory_id)
    print(f"corrected {args.trajectory_id} -> {corrected.id} (accepted)")
    return 0


def cmd_evolve_export(args, config: RuntimeConfig) -> int:
    trajectories = _load_trajectories(args.trajectories)
    count = export_finetune_set(trajectories, args.out)
    print(f"exported {count} step samples from {len(trajectories)} trajectories -> {args.out}")
    return 0


def cmd_persona_build(args, config: RuntimeConfig) -> int:
    history = _load_trajectories(args.history)
    backend = _backend(args, config) if args.script else None
    records, profile = extract_intention_flows(history, args.user, backend)
    PersonaStore(args.store).save(args.user, records, profile)
    print(f"built {len(records)} SOP record(s) and {len(profile.preferences)} "
          f"preference(s) for {args.user} -> {args.store}")
    return 0


def cmd_persona_apply(args, config: RuntimeConfig) -> int:
    backend = _backend(args, config) if args.script else None
    result = personalize(args.query, args.user, PersonaStore(args.store), backend)
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_knowledge_import(args, config: RuntimeConfig) -> int:
    src = Path(args.docs)
    docs = []
    if src.is_dir():
        for p in sorted(src.glob("*.json")):
            docs.append(KnowledgeDoc.from_dict(json.loads(p.read_text(encoding="utf-8"))))
    else:
        for line in src.read_text(encoding="utf-8").splitlines():
            if line.strip():
                docs.append(KnowledgeDoc.from_dict(json.loads(line)))
    store = KnowledgeStore.load(args.store) if Path(args.store).exists() else KnowledgeStore()
    count = store.ingest(docs)
    store.save(args.store)
    print(f"ingested {count} documents -> {args.store}")
    return 0


def cmd_serve(args, config: RuntimeConfig) -> int:
    from .service import RuntimeService
    from .sessions import SessionManager

    manager = SessionManager(args.root, config)
    service = RuntimeService(
        manager, host=args.host, port=args.port,
        token=config.service_token, static_dir=args.static,
    )
    print(f"serving on {service.address} (root: {args.root})")
    service.serve_forever()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guiagent")
    parser.add_argument("--config", help="runtime config JSON file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one instruction through the full pipeline")
    p.add_argument("--scenario", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--instruction", default=None)
    p.add_argument("--script", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--no-memory-transfer", action="store_true")
    p.add_argument("--reflection", default="", help="comma list: action,trajectory,global")
    p.add_argument("--ask", action="store_true", help="enable the proactive ASK gate")
    p.add_argument("--answers", default=None, help="JSON map question-substring -> answer")
    p.add_argument("--knowledge", default=None, help="knowledge store directory")
    p.add_argument("--save", default=None, help="directory for trajectory JSON files")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bench", help="run a scenario's task suite and print the table")
    p.add_argument("--scenario", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("datagen-split", help="split trajectories into step samples")
    p.add_argument("--trajectory", required=True, help="trajectory JSON file or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_datagen_split)

    p = sub.add_parser("datagen-augment", help="add equal-reward alternate actions")
    p.add_argument("--samples", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--script", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_datagen_augment)

    p = sub.add_parser("datagen-filter", help="difficulty-based sample filtering")
    p.add_argument("--samples", required=True)
    p.add_argument("--keep-zero-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_datagen_filter)

    p = sub.add_parser("score", help="rule-based rewards for responses vs samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--responses", required=True, help='JSONL of {"response": text}')
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--f1-threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("grpo-eval", help="group advantages and clipped objective")
    p.add_argument("--rewards", default=None, help="comma-separated rewards")
    p.add_argument("--input", default=None, help="JSON file with rewards/ratios/ref_ratios")
    p.set_defaults(fn=cmd_grpo_eval)

    p = sub.add_parser("evolve-expand", help="expand seed queries into the pool")
    p.add_argument("--seeds", required=True, help="file of seed lines or JSONL records")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--script", default=None)
    p.add_argument("--pool", required=True)
    p.set_defaults(fn=cmd_evolve_expand)

    p = sub.add_parser("evolve-rollout", help="repeat executor rollouts for a query")
    p.add_argument("--query", default=None)
    p.add_argument("--pool", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--scenario", required=True)
    p.add_argument("--task", default=None)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--vary-start", action="store_true")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--script", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evolve_rollout)

    p = sub.add_parser("evolve-gate", help="seven-discriminator trajectory gate")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--script", default=None)
    p.add_argument("--queue", required=True, help="correction queue directory")
    p.add_argument("--accepted", required=True, help="accepted trajectory directory")
    p.set_defaults(fn=cmd_evolve_gate)

    p = sub.add_parser("evolve-correct", help="apply a step-edit patch and re-gate")
    p.add_argument("--queue", required=True)
    p.add_argument("--trajectory-id", required=True)
    p.add_argument("--step", type=int, required=True)
    p.add_argument("--action", required=True, help="replacement action JSON")
    p.add_argument("--scenario", required=True)
    p.add_argument("--accepted", required=True)
    p.set_defaults(fn=cmd_evolve_correct)

    p = sub.add_parser("evolve-export", help="export the fine-tuning dataset")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evolve_export)

    p = sub.add_parser("persona-build", help="build per-user SOP and profile stores")
    p.add_argument("--history", required=True, help="trajectory JSON file or directory")
    p.add_argument("--user", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--script", default=None)
    p.set_defaults(fn=cmd_persona_build)

    p = sub.add_parser("persona-apply", help="personalize a query for a user")
    p.add_argument("--query", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--script", default=None)
    p.set_defaults(fn=cmd_persona_apply)

    p = sub.add_parser("knowledge-import", help="import documents into a store directory")
    p.add_argument("--docs", required=True)
    p.add_argument("--store", required=True)
    p.set_defaults(fn=cmd_knowledge_import)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--root", default="./sessions")
    p.add_argument("--static", default=None, help="static console bundle directory")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = RuntimeConfig.load(args.config)
    return args.fn(args, config)


if __name__ == "__main__":
    sys.exit(main())
