"""Task orchestration: classify instructions, decompose composite ones into
atomic tasks, and carry critical information across tasks (memory transfer).

The orchestrator works a level above step planners: a composite instruction
like "turn on wifi, increase phone brightness" splits into its natural
atomic parts, never into micro-steps. After each atomic task an extractor
distills facts from the finished trajectory and a rewriter folds them into
the next task's text, so information survives across task boundaries.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .executor import ASK_PENDING, DONE, ExecutorConfig, ExecutorRun, Trajectory
from .gateway import Decoding, GatewayError, PromptBundle, PromptPart, ScriptExhausted
from .knowledge import KnowledgeStore
from .simenv import EnvOutcome, SimEnv

logger = logging.getLogger(__name__)

ATOMIC = "atomic"
COMPOSITE = "composite"

# Textual cues the rule fallback reads as a composite instruction.
_CONJUNCTION_MARKERS = (", ", "; ", " and then ", " then ", " after that ", " and ")


class OrchestrationError(Exception):
    pass


class InvalidInstruction(OrchestrationError):
    pass


class DegenerateDecomposition(OrchestrationError):
    pass


@dataclass(frozen=True)
class AtomicTask:
    index: int
    text: str
    rewritten_text: Optional[str] = None

    def __post_init__(self):
        if not self.text:
            raise InvalidInstruction("atomic task text must be non-empty")
        if self.rewritten_text is not None and self.index == 0:
            raise ValueError("the first task is never rewritten")

    @property
    def effective_text(self) -> str:
        return self.rewritten_text if self.rewritten_text is not None else self.text

    def to_dict(self) -> dict:
        return {"index": self.index, "text": self.text, "rewritten_text": self.rewritten_text}


@dataclass(frozen=True)
class Fact:
    key: str
    value: str
    steps: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"key": self.key, "value": self.value, "steps": list(self.steps)}


@dataclass(frozen=True)
class ExtractedMemory:
    facts: tuple[Fact, ...]
    source_task_index: int

    def to_dict(self) -> dict:
        return {
            "facts": [f.to_dict() for f in self.facts],
            "source_task_index": self.source_task_index,
        }


def _rule_classify(instruction: str) -> str:
    lowered = instruction.lower()
    if any(marker in lowered for marker in _CONJUNCTION_MARKERS):
        return COMPOSITE
    return ATOMIC


def classify(instruction: str, gateway) -> str:
    """Atomic-or-composite verdict; unparseable backend answers fall back to
    conjunction-marker rules."""
    if not instruction or not instruction.strip():
        raise InvalidInstruction("instruction must be non-empty")
    bundle = PromptBundle(
        "task_classifier",
        "Answer with the single word 'atomic' or 'composite'.",
        (PromptPart("text", instruction),),
        Decoding(temperature=0.0),
    )
    text = gateway.complete(bundle)
    lowered = text.strip().lower()
    if "composite" in lowered:
        return COMPOSITE
    if "atomic" in lowered:
        return ATOMIC
    logger.warning("classifier answer unparseable (%r); using rule fallback", text[:80])
    return _rule_classify(instruction)


def _parse_task_list(text: str) -> list[str]:
    try:
        doc = json.loads(text)
        if isinstance(doc, list) and all(isinstance(x, str) for x in doc):
            return [x.strip() for x in doc if x.strip()]
    except json.JSONDecodeError:
        pass
    tasks = []
    for line in text.splitlines():
        line = re.sub(r"^\s*(?:[-*]|\d+[.)])\s*", "", line).strip()
        if line:
            tasks.append(line)
    return tasks


def decompose(instruction: str, gateway) -> list[AtomicTask]:
    """Split a composite instruction into ordered atomic tasks (>= 2), raising
    DegenerateDecomposition so callers can fall back to treating it as atomic."""
    bundle = PromptBundle(
        "task_decomposer",
        "Decompose the instruction into its natural atomic tasks, one per line. "
        "Preserve the user's structure; do not plan UI steps.",
        (PromptPart("text", instruction),),
        Decoding(temperature=0.0),
    )
    parts = _parse_task_list(gateway.complete(bundle))
    if len(parts) < 2:
        raise DegenerateDecomposition(f"decomposition produced {len(parts)} part(s)")
    return [AtomicTask(index=i, text=t) for i, t in enumerate(parts)]


def plan_instruction(instruction: str, gateway) -> list[AtomicTask]:
    """Classify then decompose; any degenerate outcome collapses to a
    single-task plan. ScriptExhausted counts as an unparseable answer so
    offline scripts without classifier rules still run."""
    if not instruction or not instruction.strip():
        raise InvalidInstruction("instruction must be non-empty")
    try:
        verdict = classify(instruction, gateway)
    except ScriptExhausted:
        logger.warning("no scripted classifier; using rule fallback")
        verdict = _rule_classify(instruction)
    if verdict == COMPOSITE:
        try:
            return decompose(instruction, gateway)
        except (DegenerateDecomposition, ScriptExhausted) as e:
            logger.warning("decomposition fell back to atomic: %s", e)
    return [AtomicTask(index=0, text=instruction)]


def _facts_from_json(text: str, max_step: int) -> list[Fact]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return []
    if isinstance(doc, dict):
        doc = doc.get("facts", [])
    if not isinstance(doc, list):
        return []
    facts = []
    for item in doc:
        if not isinstance(item, dict) or "key" not in item or "value" not in item:
            continue
        steps = tuple(
            s for s in item.get("steps", [0]) if isinstance(s, int) and 0 <= s <= max_step
        ) or (0,)
        facts.append(Fact(key=str(item["key"]), value=str(item["value"]), steps=steps))
    return facts


def extract_memory(
    trajectory: Trajectory, gateway, next_task: AtomicTask | None = None
) -> ExtractedMemory:
    """Distill the facts a later task will need from a finished trajectory.
    Every fact carries the step indices it was observed at."""
    summaries = [
        f"step {s.index}: {s.response.action_summary}" for s in trajectory.steps if s.response
    ]
    screens = [
        f"step {s.index} screen: {s.snapshot_after.canonical_json()}" for s in trajectory.steps
    ]
    parts = [
        PromptPart("text", f"Completed task: {trajectory.instruction}"),
        PromptPart("text", "Steps:\n" + "\n".join(summaries)),
        PromptPart("snapshot", "\n".join(screens)),
    ]
    if next_task is not None:
        parts.append(PromptPart("text", f"Upcoming task: {next_task.text}"))
    bundle = PromptBundle(
        "memory_extractor",
        'Extract the critical facts as a JSON array of {"key", "value", "steps"} '
        "objects; [] when nothing carries over.",
        tuple(parts),
        Decoding(temperature=0.0),
    )
    max_step = max((s.index for s in trajectory.steps), default=0)
    try:
        facts = _facts_from_json(gateway.complete(bundle), max_step)
    except GatewayError as e:
        if isinstance(e, ScriptExhausted):
            logger.warning("no scripted extractor; returning empty memory")
            facts = []
        else:
            raise
    return ExtractedMemory(facts=tuple(facts), source_task_index=0)


def rewrite_task(next_task: AtomicTask, memory: ExtractedMemory, gateway) -> AtomicTask:
    """Fold extracted facts into the next task's text. Empty memory is a
    strict identity rewrite (no backend call, exact text equality)."""
    if not memory.facts:
        return replace(next_task, rewritten_text=next_task.text)
    fact_lines = [f"- {f.key}: {f.value}" for f in memory.facts]
    bundle = PromptBundle(
        "task_rewriter",
        "Rewrite the task so it embeds the facts it depends on. "
        "Reply with the rewritten task text only.",
        (
            PromptPart("text", f"Task: {next_task.text}"),
            PromptPart("text", "Facts:\n" + "\n".join(fact_lines)),
        ),
        Decoding(temperature=0.0),
    )
    rewritten = gateway.complete(bundle).strip()
    if not rewritten:
        rewritten = next_task.text
    return replace(next_task, rewritten_text=rewritten)


@dataclass
class PlanResult:
    plan: list[AtomicTask]
    trajectories: list[Trajectory]
    outcome: EnvOutcome
    memories: list[ExtractedMemory] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "plan": [t.to_dict() for t in self.plan],
            "trajectories": [t.to_dict() for t in self.trajectories],
            "outcome": self.outcome.to_dict(),
            "memories": [m.to_dict() for m in self.memories],
        }


class PlanRun:
    """Sequential execution of a plan over one shared environment.

    Tasks run strictly in order; task k+1 never starts before task k's
    trajectory is terminal. A pending ASK suspends the whole plan.
    """

    def __init__(
        self,
        instruction: str,
        env: SimEnv,
        gateway,
        config: ExecutorConfig | None = None,
        knowledge_store: KnowledgeStore | None = None,
        memory_transfer: bool = True,
        accumulate_memory: bool = False,
        retrieval_k: int = 3,
        retrieval_scope: str = "task",  # task | instruction
        extra_knowledge: list = (),
        run_id: str = "",
        on_event: Callable[[dict], None] | None = None,
        step_gate: Callable[[], None] | None = None,
    ):
        if retrieval_scope not in ("task", "instruction"):
            raise ValueError("retrieval_scope must be 'task' or 'instruction'")
        self.instruction = instruction
        self.env = env
        self.gateway = gateway
        self.config = config or ExecutorConfig()
        self.knowledge_store = knowledge_store
        self.memory_transfer = memory_transfer
        self.accumulate_memory = accumulate_memory
        self.retrieval_k = retrieval_k
        self.retrieval_scope = retrieval_scope
        self.extra_knowledge = list(extra_knowledge)
        self.run_id = run_id or f"plan-{env.scenario.name}-{env.task.id}"
        self._on_event = on_event
        self._step_gate = step_gate
        self.plan = plan_instruction(instruction, gateway)
        self.trajectories: list[Trajectory] = []
        self.memories: list[ExtractedMemory] = []
        self.task_index = 0
        self.current_run: ExecutorRun | None = None
        self.status = "running"
        self._emit({"type": "plan", "tasks": [t.to_dict() for t in self.plan]})

    def _emit(self, event: dict):
        if self._on_event is not None:
            self._on_event(event)

    @property
    def pending_question(self) -> str | None:
        return self.current_run.pending_question if self.current_run else None

    def provide_answer(self, answer: str):
        if self.current_run is None:
            raise OrchestrationError("no active task")
        self.current_run.provide_answer(answer)
        self.status = "running"

    def inject_knowledge(self, docs: list):
        self.extra_knowledge.extend(docs)
        if self.current_run is not None:
            self.current_run.knowledge.extend(docs)
            self._emit({
                "type": "knowledge",
                "task_index": self.task_index,
                "docs": [d.id for d in docs],
            })

    def _task_knowledge(self, task: AtomicTask) -> list:
        docs = []
        if self.knowledge_store is not None and len(self.knowledge_store):
            query = self.instruction if self.retrieval_scope == "instruction" \
                else task.effective_text
            docs = [r.doc for r in self.knowledge_store.retrieve(query, self.retrieval_k)]
        return docs + self.extra_knowledge

    def _task_events(self, task_index: int) -> Callable[[dict], None] | None:
        if self._on_event is None:
            return None

        def wrap(event: dict):
            tagged = dict(event)
            tagged["task_index"] = task_index
            self._emit(tagged)

        return wrap

    def run_until_blocked(self) -> str:
        while self.task_index < len(self.plan):
            task = self.plan[self.task_index]
            if self.current_run is None:
                if self.env.frozen:
                    self.env.resume()  # the previous task's terminate froze the env
                self.current_run = ExecutorRun(
                    task.effective_text,
                    self.env,
                    self.gateway,
                    self.config,
                    knowledge=self._task_knowledge(task),
                    trajectory_id=f"{self.run_id}-task{task.index}",
                    on_event=self._task_events(task.index),
                    step_gate=self._step_gate,
                )
                self._emit({
                    "type": "task_start",
                    "task_index": task.index,
                    "trajectory_id": self.current_run.trajectory_id,
                    "instruction": task.effective_text,
                    "knowledge_used": [d.id for d in self.current_run.knowledge],
                    "scenario": self.env.scenario.name,
                    "task_id": self.env.task.id,
                    "seed": self.env._seed,
                })
            status = self.current_run.run_until_blocked()
            if status == ASK_PENDING:
                self.status = "ask_pending"
                return self.status
            assert status == DONE
            trajectory = self.current_run.trajectory()
            self.trajectories.append(trajectory)
            self.current_run = None
            next_index = self.task_index + 1
            if next_index < len(self.plan) and self.memory_transfer:
                memory = extract_memory(trajectory, self.gateway, next_task=self.plan[next_index])
                memory = replace(memory, source_task_index=self.task_index)
                self.memories.append(memory)
                self._emit({"type": "memory", "task_index": self.task_index,
                            "memory": memory.to_dict()})
                if self.accumulate_memory:
                    # fold facts from every finished task in, not just task k
                    seen = set()
                    merged = []
                    for m in self.memories:
                        for fact in m.facts:
                            key = (fact.key, fact.value)
                            if key not in seen:
                                seen.add(key)
                                merged.append(fact)
                    memory = ExtractedMemory(facts=tuple(merged),
                                             source_task_index=self.task_index)
                rewritten = rewrite_task(self.plan[next_index], memory, self.gateway)
                self.plan[next_index] = rewritten
                self._emit({"type": "plan_update", "task": rewritten.to_dict()})
            self.task_index = next_index
        self.status = "done"
        return self.status

    def result(self) -> PlanResult:
        if self.trajectories:
            last = self.trajectories[-1].outcome
            outcome = last if last.status != "ongoing" else self.env.success_check()
        else:
            outcome = self.env.success_check()
        return PlanResult(
            plan=list(self.plan),
            trajectories=list(self.trajectories),
            outcome=outcome,
            memories=list(self.memories),
        )


def run_plan(
    instruction: str,
    env: SimEnv,
    gateway,
    config: ExecutorConfig | None = None,
    knowledge_store: KnowledgeStore | None = None,
    memory_transfer: bool = True,
    accumulate_memory: bool = False,
    retrieval_scope: str = "task",
    answer_provider: Callable[[str], str | None] | None = None,
    on_event: Callable[[dict], None] | None = None,
    run_id: str = "",
) -> PlanResult:
    """Plan and execute an instruction end to end on an already-reset env."""
    run = PlanRun(
        instruction, env, gateway, config,
        knowledge_store=knowledge_store, memory_transfer=memory_transfer,
        accumulate_memory=accumulate_memory, retrieval_scope=retrieval_scope,
        run_id=run_id, on_event=on_event,
    )
    while True:
        status = run.run_until_blocked()
        if status == "done":
            break
        answer = answer_provider(run.pending_question) if answer_provider else None
        if answer is None:
            break
        run.provide_answer(answer)
    return run.result()
