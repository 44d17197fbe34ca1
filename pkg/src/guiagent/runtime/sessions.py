"""Run sessions: the operational state machine around plan execution.

Each session owns one worker thread driving a PlanRun over a fresh env.
Control commands synchronize with the step loop at step boundaries through a
gate callable; a pending ASK parks the worker on a condition until an answer
arrives. Persistence is an append-only JSONL event log per session plus an
atomically rewritten session.json and the completed trajectories, so a
reloaded store equals the pre-shutdown records for terminal and
awaiting-user sessions.

Status machine (the only transitions the engine will perform)::

    planning -> running | done_failure
    running -> awaiting_user | reflecting | paused | done_success | done_failure
    awaiting_user -> running | done_failure
    reflecting -> running | done_success | done_failure
    paused -> running | done_failure
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from ..ask import AskConfig
from ..config import RuntimeConfig
from ..executor import ExecutorConfig
from ..knowledge import KnowledgeDoc, KnowledgeStore
from ..orchestration import PlanRun
from ..reflection import ReflectionConfig
from ..simenv import Scenario, SimEnv, load_scenario
from .. import fixtures

logger = logging.getLogger(__name__)

STATUSES = (
    "planning", "running", "awaiting_user", "reflecting",
    "done_success", "done_failure", "paused",
)
TERMINAL = frozenset({"done_success", "done_failure"})

ALLOWED_TRANSITIONS: dict[str, frozenset[str]] = {
    "planning": frozenset({"running", "done_failure"}),
    "running": frozenset({"awaiting_user", "reflecting", "paused", "done_success", "done_failure"}),
    "awaiting_user": frozenset({"running", "done_failure"}),
    "reflecting": frozenset({"running", "done_success", "done_failure"}),
    "paused": frozenset({"running", "done_failure"}),
    "done_success": frozenset(),
    "done_failure": frozenset(),
}

COMMANDS = ("pause", "resume", "cancel")


class SessionError(Exception):
    pass


class UnknownSession(SessionError):
    pass


class UnknownScenario(SessionError):
    pass


class NoPendingQuestion(SessionError):
    pass


class InvalidTransition(SessionError):
    pass


class ValidationError(SessionError):
    pass


class SessionCancelled(Exception):
    pass


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class EventLog:
    """Per-session ordered event log with live fan-out subscriptions."""

    def __init__(self, path: Path | None = None):
        self.path = path
        self.events: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        self._subscribers: list[Any] = []

    def append(self, event: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            record = dict(event)
            record["seq"] = len(self.events) + 1
            record["ts"] = time.time()
            self.events.append(record)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            for q in list(self._subscribers):
                q.put(record)
            return record

    def read_since(self, seq: int) -> list[dict[str, Any]]:
        with self._lock:
            return [e for e in self.events if e["seq"] > seq]

    def subscribe(self) -> "queue.Queue":
        q = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    @staticmethod
    def load_events(path: Path) -> list[dict[str, Any]]:
        events = []
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    events.append(json.loads(line))
        return events


def replay_trajectories(events: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Rebuild the per-task trajectory dicts purely from granular events
    (task_start, step, done, knowledge); the event log is complete exactly
    when this equals the persisted trajectories bit for bit."""
    tasks: dict[int, dict[str, Any]] = {}
    for e in events:
        etype = e.get("type")
        idx = e.get("task_index")
        if etype == "task_start":
            tasks[idx] = {
                "id": e["trajectory_id"],
                "instruction": e["instruction"],
                "steps": [],
                "outcome": None,
                "knowledge_used": list(e["knowledge_used"]),
                "scenario": e["scenario"],
                "task_id": e["task_id"],
                "seed": e["seed"],
                "corrected": False,
            }
        elif etype == "step" and idx in tasks:
            tasks[idx]["steps"].append(e["record"])
        elif etype == "answer" and idx in tasks and tasks[idx]["steps"]:
            record = tasks[idx]["steps"][-1]
            record["qa"] = {
                "question": e["question"],
                "answer": e["answer"],
                "step_index": record["index"],
            }
        elif etype == "reflection" and idx in tasks and tasks[idx]["steps"]:
            verdict = e["verdict"]
            record = tasks[idx]["steps"][-1]
            if verdict not in record["reflections"]:
                record["reflections"].append(verdict)
        elif etype == "done" and idx in tasks:
            tasks[idx]["outcome"] = e["outcome"]
        elif etype == "knowledge" and idx in tasks:
            tasks[idx]["knowledge_used"].extend(e["docs"])
    out = []
    for idx in sorted(tasks):
        t = tasks[idx]
        if t["outcome"] is not None:
            out.append(t)
    return out


@dataclass
class SessionRequest:
    instruction: str
    scenario: str
    task: str
    config: dict[str, Any] = field(default_factory=dict)


class Session:
    """One live run session; drive happens on a dedicated worker thread."""

    def __init__(
        self,
        session_id: str,
        request: SessionRequest,
        scenario: Scenario,
        backend,
        runtime_config: RuntimeConfig,
        root: Path,
        knowledge_store: KnowledgeStore | None = None,
    ):
        self.session_id = session_id
        self.request = request
        self.scenario = scenario
        self.backend = backend
        self.runtime_config = runtime_config
        self.dir = root / session_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self.events = EventLog(self.dir / "events.jsonl")
        self.knowledge_store = knowledge_store

        self.status = "planning"
        self.plan: list[dict[str, Any]] = []
        self.steps_count = 0
        self.pending_question: str | None = None
        self.outcome: dict[str, Any] | None = None
        self.injected_knowledge: list[str] = []
        self.created_at = time.time()
        self.updated_at = self.created_at
        self.failure_reason: str | None = None

        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._pause_requested = False
        self._cancel_requested = False
        self._answered: list[dict[str, str]] = []
        self._injected_docs: list[KnowledgeDoc] = []
        self._plan_run: PlanRun | None = None
        self._thread = threading.Thread(target=self._drive, daemon=True,
                                        name=f"session-{session_id}")

    # -- configuration plumbing

    def _executor_config(self) -> ExecutorConfig:
        overrides = self.request.config
        reflection = None
        if overrides.get("reflection", True):
            r = overrides.get("reflection")
            kwargs = r if isinstance(r, dict) else {}
            reflection = ReflectionConfig(
                window=kwargs.get("window", self.runtime_config.reflection_window),
                resume_budget=kwargs.get("resume_budget", self.runtime_config.resume_budget),
                action_enabled=kwargs.get("action_enabled", False),
                trajectory_enabled=kwargs.get("trajectory_enabled", False),
                global_enabled=kwargs.get("global_enabled", False),
            )
        return ExecutorConfig(
            max_steps=overrides.get("max_steps", self.runtime_config.max_steps),
            parse_retries=self.runtime_config.parse_retries,
            reflection=reflection,
            ask=AskConfig(
                enabled=overrides.get("ask_enabled", True),
                max_asks_per_run=self.runtime_config.max_asks_per_run,
            ),
        )

    # -- record/persistence

    def record(self) -> dict[str, Any]:
        with self._lock:
            return {
                "session_id": self.session_id,
                "instruction": self.request.instruction,
                "scenario": self.request.scenario,
                "task": self.request.task,
                "status": self.status,
                "plan": list(self.plan),
                "steps_count": self.steps_count,
                "pending_question": self.pending_question,
                "outcome": self.outcome,
                "failure_reason": self.failure_reason,
                "injected_knowledge": list(self.injected_knowledge),
                "config": dict(self.request.config),
                "created_at": self.created_at,
                "updated_at": self.updated_at,
            }

    def _persist(self):
        _atomic_write(self.dir / "session.json",
                      json.dumps(self.record(), indent=2, sort_keys=True))

    def _persist_trajectories(self, trajectories: list[dict[str, Any]]):
        _atomic_write(self.dir / "trajectories.json",
                      json.dumps(trajectories, sort_keys=True, separators=(",", ":")))

    # -- state machine

    def _transition(self, to: str):
        with self._lock:
            if to not in ALLOWED_TRANSITIONS[self.status]:
                raise InvalidTransition(f"{self.status} -> {to} is not a declared transition")
            self.status = to
            self.updated_at = time.time()
            self.events.append({"type": "status", "status": to})
            self._persist()
            self._cond.notify_all()

    # -- worker

    def start(self):
        self.events.append({"type": "status", "status": "planning"})
        self._persist()
        self._thread.start()

    def join(self, timeout: float | None = None):
        self._thread.join(timeout)

    def _gate(self):
        with self._cond:
            while True:
                if self._cancel_requested:
                    raise SessionCancelled()
                if self.status == "paused":
                    self._cond.wait(timeout=0.5)
                    continue
                return

    def _on_run_event(self, event: dict[str, Any]):
        etype = event.get("type")
        if etype == "phase":
            with self._lock:
                if event["phase"] == "reflecting" and self.status == "running":
                    self._transition("reflecting")
                elif event["phase"] == "running" and self.status == "reflecting":
                    self._transition("running")
            return
        self.events.append(event)
        with self._lock:
            if etype == "step":
                self.steps_count += 1
            elif etype == "plan" or etype == "plan_update":
                if etype == "plan":
                    self.plan = list(event["tasks"])
                else:
                    for i, t in enumerate(self.plan):
                        if t["index"] == event["task"]["index"]:
                            self.plan[i] = event["task"]

    def _drive(self):
        trajectories: list[dict[str, Any]] = []
        try:
            env = SimEnv(self.scenario)
            env.reset(self.request.task, seed=int(self.request.config.get("seed", 0)))
            self._gate()
            with self._lock:
                preloaded_docs = list(self._injected_docs)
            plan_run = PlanRun(
                self.request.instruction,
                env,
                self.backend,
                self._executor_config(),
                knowledge_store=self.knowledge_store,
                memory_transfer=self.request.config.get("memory_transfer", True),
                retrieval_k=self.runtime_config.retrieval_k,
                extra_knowledge=preloaded_docs,
                run_id=self.session_id,
                on_event=self._on_run_event,
                step_gate=self._gate,
            )
            with self._lock:
                self._plan_run = plan_run
                self._transition("running")
            while True:
                status = plan_run.run_until_blocked()
                trajectories = [t.to_dict() for t in plan_run.trajectories]
                self._persist_trajectories(trajectories)
                if status == "done":
                    break
                with self._cond:
                    self.pending_question = plan_run.pending_question
                    self._transition("awaiting_user")
                    while self.status == "awaiting_user" and not self._cancel_requested:
                        self._cond.wait(timeout=0.5)
                    if self._cancel_requested:
                        raise SessionCancelled()
            result = plan_run.result()
            with self._lock:
                self.outcome = result.outcome.to_dict()
                self._transition(
                    "done_success" if result.outcome.status == "success" else "done_failure"
                )
        except SessionCancelled:
            with self._lock:
                self.failure_reason = "cancelled"
                self.outcome = {"status": "failure", "reason": "cancelled"}
                self._persist_trajectories(trajectories)
                if self.status not in TERMINAL:
                    self._transition("done_failure")
        except Exception as e:  # noqa: BLE001 - a session must always finalize
            logger.exception("session %s crashed", self.session_id)
            with self._lock:
                self.failure_reason = f"{type(e).__name__}: {e}"
                self.outcome = {"status": "failure", "reason": self.failure_reason}
                if self.status not in TERMINAL:
                    self._transition("done_failure")

    # -- operations

    def post_answer(self, answer: str) -> dict[str, Any]:
        with self._cond:
            if self.status != "awaiting_user":
                if self._answered and self._answered[-1]["answer"] == answer:
                    return self.record()  # idempotent duplicate post
                raise NoPendingQuestion(f"session {self.session_id} has no pending question")
            question = self.pending_question or ""
            assert self._plan_run is not None
            self._plan_run.provide_answer(answer)
            self._answered.append({"question": question, "answer": answer})
            self.pending_question = None
            self._transition("running")
        return self.record()

    def control(self, command: str) -> dict[str, Any]:
        if command not in COMMANDS:
            raise ValidationError(f"unknown command {command!r}")
        with self._cond:
            if command == "pause":
                if self.status != "running":
                    raise InvalidTransition(f"cannot pause a {self.status} session")
                self._pause_requested = True
                self._transition("paused")
            elif command == "resume":
                if self.status != "paused":
                    raise InvalidTransition(f"cannot resume a {self.status} session")
                self._pause_requested = False
                self._transition("running")
            elif command == "cancel":
                if self.status in TERMINAL:
                    raise InvalidTransition("cannot cancel a finished session")
                self._cancel_requested = True
                self._cond.notify_all()
        return self.record()

    def inject_knowledge(self, docs: list[KnowledgeDoc]) -> dict[str, Any]:
        with self._lock:
            if self.status in TERMINAL:
                raise InvalidTransition("cannot inject knowledge into a finished session")
            if self._plan_run is not None:
                self._plan_run.inject_knowledge(docs)
            else:
                self._injected_docs.extend(docs)  # queued until the plan run exists
            self.injected_knowledge.extend(d.id for d in docs)
            self._persist()
        return self.record()

    def trajectories(self) -> list[dict[str, Any]]:
        path = self.dir / "trajectories.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return []


class SessionManager:
    """Creates, indexes, and persists sessions; loads bundled + user scenarios."""

    def __init__(self, root: str | Path, runtime_config: RuntimeConfig | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.runtime_config = runtime_config or RuntimeConfig()
        self.knowledge_store = KnowledgeStore()
        self._sessions: dict[str, Session] = {}
        self._counter = 0
        self._lock = threading.Lock()
        self.scenarios: dict[str, Scenario] = {}
        for name in fixtures.scenario_names():
            self.scenarios[name] = fixtures.scenario(name)
        for d in self.runtime_config.scenario_dirs:
            for path in sorted(Path(d).glob("*.json")):
                s = load_scenario(path)
                self.scenarios[s.name] = s

    def _backend_for(self, request: SessionRequest):
        script = request.config.get("script")
        if script and not Path(str(script)).exists():
            # allow bundled script names like "burger_scripts"
            script = str(fixtures.fixture_path(str(script)))
        return self.runtime_config.build_backend(script_path=script)

    def create_session(self, request: SessionRequest) -> Session:
        if request.scenario not in self.scenarios:
            raise UnknownScenario(f"unknown scenario {request.scenario!r}")
        scenario = self.scenarios[request.scenario]
        scenario.task(request.task)  # raises UnknownTask
        if not request.instruction or not request.instruction.strip():
            raise ValidationError("instruction must be non-empty")
        try:
            backend = self._backend_for(request)
        except (ValueError, FileNotFoundError) as e:
            raise ValidationError(str(e)) from e
        with self._lock:
            self._counter += 1
            session_id = f"s{self._counter:04d}"
        session = Session(
            session_id, request, scenario, backend, self.runtime_config,
            self.root, knowledge_store=self.knowledge_store,
        )
        self._sessions[session_id] = session
        session.start()
        return session

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"unknown session {session_id!r}")
        return session

    def list_records(self) -> list[dict[str, Any]]:
        return [self._sessions[k].record() for k in sorted(self._sessions)]

    @staticmethod
    def load_records(root: str | Path) -> dict[str, dict[str, Any]]:
        """Reload persisted session records (crash-safety / inspection)."""
        out = {}
        for session_dir in sorted(Path(root).glob("s*")):
            record_path = session_dir / "session.json"
            if record_path.exists():
                record = json.loads(record_path.read_text(encoding="utf-8"))
                out[record["session_id"]] = record
        return out
