"""The central execution agent.

Each step: assemble context (instruction, knowledge, running history,
reflection feedback, QA pairs, current screen), query the policy backend,
parse the three-part response, execute exactly one action, then let the
reflection stack inspect the result. The running history is the
concatenation of the per-step action summaries the model itself produced.

Runs are resumable state machines so a pending ASK can suspend a run until
an answer arrives (from the runtime API, a scripted user, or the console).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .actions import (
    Action,
    ModelResponse,
    ParseFailure,
    parse_response,
    render_response,
    serialize_action,
)
from .ask import AskConfig, QaPair, TrustDecision, assess_scenario
from .gateway import Decoding, GatewayError, PromptBundle, PromptPart
from .knowledge import KnowledgeDoc
from .reflection import (
    FeedbackBoard,
    ReflectionConfig,
    ReflectionVerdict,
    reflect_action,
    reflect_global,
    reflect_trajectory,
)
from .simenv import (
    EnvOutcome,
    NoFocusedField,
    ScreenSnapshot,
    SimEnv,
    UnknownApp,
    snapshot_from_dict,
)

logger = logging.getLogger(__name__)

RUNNING = "running"
ASK_PENDING = "ask_pending"
DONE = "done"


class ExecutorError(Exception):
    pass


class ExecutorBackendError(ExecutorError):
    """Policy backend failure; carries the partial trajectory so far."""

    def __init__(self, message: str, partial):
        super().__init__(message)
        self.partial = partial


@dataclass
class HistorySummary:
    entries: list[str] = field(default_factory=list)

    @property
    def rendered(self) -> str:
        return "\n".join(f"{i + 1}. {e}" for i, e in enumerate(self.entries))

    def append(self, entry: str):
        self.entries.append(entry)


@dataclass
class StepRecord:
    index: int
    snapshot_before: ScreenSnapshot
    response: Optional[ModelResponse]
    action: Optional[Action]
    snapshot_after: ScreenSnapshot
    outcome: EnvOutcome
    reflections: list[ReflectionVerdict] = field(default_factory=list)
    qa: Optional[QaPair] = None
    error: Optional[str] = None
    parse_failure: Optional[str] = None
    trust: Optional[TrustDecision] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "snapshot_before": self.snapshot_before.to_dict(),
            "response": None if self.response is None else {
                "thought": self.response.thought,
                "action_summary": self.response.action_summary,
                "action": json.loads(serialize_action(self.response.action)),
                "raw": self.response.raw,
            },
            "action": None if self.action is None else json.loads(serialize_action(self.action)),
            "snapshot_after": self.snapshot_after.to_dict(),
            "outcome": self.outcome.to_dict(),
            "reflections": [v.to_dict() for v in self.reflections],
            "qa": self.qa.to_dict() if self.qa else None,
            "error": self.error,
            "parse_failure": self.parse_failure,
        }


@dataclass
class Trajectory:
    id: str
    instruction: str
    steps: list[StepRecord]
    outcome: EnvOutcome
    knowledge_used: list[str] = field(default_factory=list)
    scenario: str = ""
    task_id: str = ""
    seed: int = 0
    corrected: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "steps": [s.to_dict() for s in self.steps],
            "outcome": self.outcome.to_dict(),
            "knowledge_used": list(self.knowledge_used),
            "scenario": self.scenario,
            "task_id": self.task_id,
            "seed": self.seed,
            "corrected": self.corrected,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def actions(self) -> list[Action]:
        return [s.action for s in self.steps if s.action is not None]


def trajectory_from_dict(d: dict[str, Any]) -> Trajectory:
    """Inverse of Trajectory.to_dict (file and event-log interchange)."""
    from .actions import decode_action

    steps = []
    for s in d["steps"]:
        response = None
        if s["response"] is not None:
            response = ModelResponse(
                thought=s["response"]["thought"],
                action_summary=s["response"]["action_summary"],
                action=decode_action(s["response"]["action"]),
                raw=s["response"]["raw"],
            )
        steps.append(
            StepRecord(
                index=s["index"],
                snapshot_before=snapshot_from_dict(s["snapshot_before"]),
                response=response,
                action=decode_action(s["action"]) if s["action"] is not None else None,
                snapshot_after=snapshot_from_dict(s["snapshot_after"]),
                outcome=EnvOutcome(**s["outcome"]),
                reflections=[
                    ReflectionVerdict(
                        level=v["level"], ok=v["ok"], diagnosis=v["diagnosis"],
                        suggestion=v["suggestion"], step_span=tuple(v["step_span"]),
                    )
                    for v in s.get("reflections", [])
                ],
                qa=QaPair(**s["qa"]) if s.get("qa") else None,
                error=s.get("error"),
                parse_failure=s.get("parse_failure"),
            )
        )
    return Trajectory(
        id=d["id"],
        instruction=d["instruction"],
        steps=steps,
        outcome=EnvOutcome(**d["outcome"]),
        knowledge_used=list(d.get("knowledge_used", [])),
        scenario=d.get("scenario", ""),
        task_id=d.get("task_id", ""),
        seed=d.get("seed", 0),
        corrected=bool(d.get("corrected", False)),
    )


@dataclass
class ExecutorConfig:
    max_steps: int = 30
    parse_retries: int = 1
    temperature: float = 0.0
    reflection: Optional[ReflectionConfig] = None
    ask: AskConfig = field(default_factory=AskConfig)

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


EXECUTOR_SYSTEM = (
    "You operate a mobile device to complete the user's instruction. "
    "Respond every turn with exactly three tagged blocks: <thinking>...</thinking>, "
    "<summary>one sentence</summary>, and <action>one JSON object</action>."
)

ACTION_CONTRACT = """Available actions (JSON object in the <action> block):
{"action": "click", "coordinate": [x, y]}
{"action": "long_press", "coordinate": [x, y], "time": seconds}
{"action": "swipe", "coordinate": [x, y], "coordinate2": [x2, y2]}
{"action": "type", "text": "..."} (into the focused field)
{"action": "clear_text"}
{"action": "system_button", "button": "Back" | "Home" | "Menu" | "Enter"}
{"action": "open", "text": "app name"}
{"action": "wait", "time": seconds}
{"action": "answer", "text": "..."}
{"action": "terminate", "status": "success" | "failure"}"""


def build_prompt(
    instruction: str,
    history: HistorySummary,
    snapshot: ScreenSnapshot,
    knowledge: list[KnowledgeDoc] = (),
    feedback: list[str] = (),
    qa: list[QaPair] = (),
    temperature: float = 0.0,
) -> PromptBundle:
    """Deterministic prompt assembly in fixed section order; identical inputs
    produce identical bytes."""
    knowledge_lines = [f"- [{d.id}] {d.title}: {d.body}" for d in knowledge]
    qa_lines = [f"Q: {p.question}\nA: {p.answer}" for p in qa]
    sections = [
        ("Instruction", instruction),
        ("Knowledge", "\n".join(knowledge_lines) or "(none)"),
        ("History", history.rendered or "(empty)"),
        ("Feedback", "\n".join(feedback) or "(none)"),
        ("QA", "\n".join(qa_lines) or "(none)"),
    ]
    parts = [PromptPart("text", f"## {name}\n{body}") for name, body in sections]
    parts.append(PromptPart("snapshot", "## Screen\n" + snapshot.canonical_json()))
    parts.append(PromptPart("text", "## Response contract\n" + ACTION_CONTRACT))
    return PromptBundle(
        role_name="executor",
        system_text=EXECUTOR_SYSTEM,
        user_parts=tuple(parts),
        decoding=Decoding(temperature=temperature),
    )


class ExecutorRun:
    """One resumable task execution over a single environment instance."""

    def __init__(
        self,
        instruction: str,
        env: SimEnv,
        gateway,
        config: ExecutorConfig | None = None,
        knowledge: list[KnowledgeDoc] = (),
        qa: list[QaPair] | None = None,
        feedback: FeedbackBoard | None = None,
        trajectory_id: str | None = None,
        on_event: Callable[[dict], None] | None = None,
        step_gate: Callable[[], None] | None = None,
    ):
        self.instruction = instruction
        self.env = env
        self.gateway = gateway
        self.config = config or ExecutorConfig()
        self.knowledge = list(knowledge)
        self.history = HistorySummary()
        self.steps: list[StepRecord] = []
        self.qa: list[QaPair] = list(qa or [])
        self.feedback = feedback if feedback is not None else FeedbackBoard()
        self.status = RUNNING
        self.pending_question: str | None = None
        self.final_outcome: EnvOutcome | None = None
        self.asks_made = 0
        self.resumes_done = 0
        self._steps_since_window = 0
        self._on_event = on_event
        self._step_gate = step_gate
        task = env.task
        self.trajectory_id = trajectory_id or f"t-{env.scenario.name}-{task.id}-{env._seed}"

    # -- events

    def _emit(self, event: dict):
        if self._on_event is not None:
            self._on_event(event)

    # -- trajectory view

    def trajectory(self) -> Trajectory:
        outcome = self.final_outcome or self.env.success_check()
        return Trajectory(
            id=self.trajectory_id,
            instruction=self.instruction,
            steps=list(self.steps),
            outcome=outcome,
            knowledge_used=[d.id for d in self.knowledge],
            scenario=self.env.scenario.name,
            task_id=self.env.task.id,
            seed=self.env._seed,
        )

    # -- answering

    def provide_answer(self, answer: str):
        if self.status != ASK_PENDING or self.pending_question is None:
            raise ExecutorError("no pending question to answer")
        pair = QaPair(self.pending_question, answer, step_index=len(self.steps) - 1)
        self.qa.append(pair)
        if self.steps:
            self.steps[-1].qa = pair
        self.env.clear_pending_question()
        self.pending_question = None
        self.status = RUNNING
        self._emit({"type": "answer", "question": pair.question, "answer": answer})

    # -- policy interaction

    def _policy_call(self, snapshot: ScreenSnapshot, extra_feedback: list[str]):
        bundle = build_prompt(
            self.instruction,
            self.history,
            snapshot,
            knowledge=self.knowledge,
            feedback=self.feedback.feedback_lines() + extra_feedback,
            qa=self.qa,
            temperature=self.config.temperature,
        )
        try:
            return parse_response(self.gateway.complete(bundle))
        except GatewayError as e:
            raise ExecutorBackendError(str(e), self.trajectory()) from e

    def _query_policy(self, snapshot: ScreenSnapshot):
        """One policy query with a single reprompt on parse/protocol failure."""
        result = self._policy_call(snapshot, [])
        for _ in range(self.config.parse_retries):
            problem = None
            if isinstance(result, ParseFailure):
                problem = f"Your previous reply was malformed ({result.kind}: {result.detail})."
            elif result.action.kind == "ask":
                problem = "The ask action is reserved for the engagement module; choose another action."
            if problem is None:
                return result
            result = self._policy_call(
                snapshot, [problem + " Answer again following the response contract."]
            )
        if isinstance(result, ModelResponse) and result.action.kind == "ask":
            return ParseFailure("bad_parameter", "policy emitted a gated ask action",
                                result.raw, param="action")
        return result

    # -- reflection wiring

    def _run_action_reflection(self, record: StepRecord):
        cfg = self.config.reflection
        if cfg is None or not cfg.action_enabled or record.response is None:
            return
        verdict = reflect_action(
            record.snapshot_before,
            record.snapshot_after,
            record.response,
            self.gateway,
            step_index=record.index,
            env_error=record.error,
        )
        record.reflections.append(verdict)
        self.feedback.record(verdict)
        self._emit({"type": "reflection", "verdict": verdict.to_dict()})

    def _maybe_window_reflection(self, record: StepRecord):
        cfg = self.config.reflection
        if cfg is None or not cfg.trajectory_enabled:
            return
        self._steps_since_window += 1
        window = self.steps[-cfg.window:]
        action_failures = sum(
            1 for s in window for v in s.reflections if v.level == "action" and not v.ok
        )
        if self._steps_since_window >= cfg.window or action_failures >= 2:
            self._steps_since_window = 0
            verdict = reflect_trajectory(window, self.gateway)
            record.reflections.append(verdict)
            self.feedback.record(verdict)
            self._emit({"type": "reflection", "verdict": verdict.to_dict()})

    def _global_reflection(self) -> ReflectionVerdict | None:
        cfg = self.config.reflection
        if cfg is None or not cfg.global_enabled:
            return None
        self._emit({"type": "phase", "phase": "reflecting"})
        verdict = reflect_global(self.steps, self.instruction, self.gateway)
        self._emit({"type": "reflection", "verdict": verdict.to_dict()})
        return verdict

    # -- stepping

    def _finalize(self, outcome: EnvOutcome):
        self.final_outcome = outcome
        self.status = DONE
        self._emit({"type": "done", "outcome": outcome.to_dict()})

    def _record(self, record: StepRecord):
        self.steps.append(record)
        self._emit({"type": "step", "record": record.to_dict()})

    def step_once(self):
        """Execute one perceive-prompt-parse-act cycle; returns the StepRecord
        or None when the run is already blocked or done."""
        if self.status != RUNNING:
            return None
        if self._step_gate is not None:
            self._step_gate()  # pause/cancel synchronization point
        if len(self.steps) >= self.config.max_steps:
            self._finalize(EnvOutcome("failure", "MaxStepsExceeded"))
            return None

        snapshot_before = self.env.snapshot()

        # Trustworthiness gate: an untrustworthy scene turns this step into an ASK.
        if self.config.ask.enabled and self.asks_made < self.config.ask.max_asks_per_run:
            decision = assess_scenario(
                self.instruction, snapshot_before, self.history.entries,
                self.qa, self.gateway, scenario=self.env.scenario,
            )
            if not decision.trustworthy:
                question = decision.proposed_question
                action = Action("ask", text=question)
                response = ModelResponse(
                    thought=decision.reason,
                    action_summary=f"Asked the user: {question}",
                    action=action,
                    raw=render_response(decision.reason, f"Asked the user: {question}", action),
                )
                snapshot_after, outcome = self.env.step(action)
                record = StepRecord(
                    index=len(self.steps),
                    snapshot_before=snapshot_before,
                    response=response,
                    action=action,
                    snapshot_after=snapshot_after,
                    outcome=outcome,
                    trust=decision,
                )
                self.history.append(response.action_summary)
                self.asks_made += 1
                self.pending_question = question
                self.status = ASK_PENDING
                self._record(record)
                self._emit({"type": "ask", "question": question})
                return record

        result = self._query_policy(snapshot_before)

        if isinstance(result, ParseFailure):
            self.env.tick()
            snapshot_after = self.env.snapshot()
            record = StepRecord(
                index=len(self.steps),
                snapshot_before=snapshot_before,
                response=None,
                action=None,
                snapshot_after=snapshot_after,
                outcome=self.env.success_check(),
                parse_failure=f"{result.kind}: {result.detail}",
            )
            self._record(record)
            return record

        response = result
        error_name = None
        try:
            snapshot_after, outcome = self.env.step(response.action)
        except (NoFocusedField, UnknownApp) as e:
            error_name = type(e).__name__
            self.env.tick()
            snapshot_after = self.env.snapshot()
            outcome = self.env.success_check()
        record = StepRecord(
            index=len(self.steps),
            snapshot_before=snapshot_before,
            response=response,
            action=response.action,
            snapshot_after=snapshot_after,
            outcome=outcome,
            error=error_name,
        )
        self.history.append(response.action_summary)
        self._record(record)

        self._run_action_reflection(record)
        self._maybe_window_reflection(record)

        if response.action.kind == "terminate":
            verdict = self._global_reflection()
            if verdict is not None and not verdict.ok:
                if self.resumes_done < (self.config.reflection.resume_budget
                                        if self.config.reflection else 0):
                    self.resumes_done += 1
                    self.feedback.record(verdict)
                    record.reflections.append(verdict)
                    self.env.resume()
                    self._emit({"type": "phase", "phase": "running"})
                    return record
                record.reflections.append(verdict)
                self._finalize(EnvOutcome("failure", "GlobalReflectorBudget"))
                return record
            if verdict is not None:
                record.reflections.append(verdict)
            self._finalize(outcome)
        return record

    def run_until_blocked(self) -> str:
        while self.status == RUNNING:
            self.step_once()
        return self.status


def run_task(
    instruction: str,
    env: SimEnv,
    gateway,
    config: ExecutorConfig | None = None,
    knowledge: list[KnowledgeDoc] = (),
    answer_provider: Callable[[str], str | None] | None = None,
    trajectory_id: str | None = None,
    on_event: Callable[[dict], None] | None = None,
) -> Trajectory:
    """Run one task to completion (or to a pending ASK when no answer
    provider is given). The environment must already be reset for the task."""
    run = ExecutorRun(
        instruction, env, gateway, config,
        knowledge=knowledge, trajectory_id=trajectory_id, on_event=on_event,
    )
    while True:
        status = run.run_until_blocked()
        if status == DONE:
            break
        if status == ASK_PENDING:
            answer = answer_provider(run.pending_question) if answer_provider else None
            if answer is None:
                break
            run.provide_answer(answer)
    return run.trajectory()
