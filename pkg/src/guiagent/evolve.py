"""Self-evolving data loop: query pool, diversified rollouts, the
seven-discriminator trajectory gate, a persisted correction queue, and
fine-tuning dataset export.

Every discriminator is a prompted judge with a deterministic rule fallback
so the gate works offline: task completion falls back to the environment's
success predicate, action validity to per-step env error records, redundancy
to a repeated-identical-actions check, and the remaining dimensions pass by
default when no judge answers.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .actions import Action, serialize_action
from .datalab import split_trajectory, write_samples
from .executor import ExecutorConfig, Trajectory, run_task
from .gateway import Decoding, GatewayError, PromptBundle, PromptPart
from .simenv import Scenario, SimEnv

logger = logging.getLogger(__name__)

DISCRIMINATORS = (
    "task_completion",
    "action_validity",
    "path_relevance",
    "reasoning_coherence",
    "redundancy",
    "user_centric",
    "behavioral",
)

REDUNDANCY_RUN_LIMIT = 3  # >= this many identical consecutive actions fails

_VERDICT_RE = re.compile(r"<verdict>(.*?)</verdict>", re.DOTALL)
_RATIONALE_RE = re.compile(r"<rationale>(.*?)</rationale>", re.DOTALL)


class EvolveError(Exception):
    pass


class EmptySeedPool(EvolveError):
    pass


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    origin: str = "seed"  # seed | expanded
    parent_id: Optional[str] = None

    def __post_init__(self):
        if self.origin not in ("seed", "expanded"):
            raise ValueError("origin must be 'seed' or 'expanded'")
        if self.origin == "expanded" and not self.parent_id:
            raise ValueError("expanded queries must reference their seed")

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "origin": self.origin,
                "parent_id": self.parent_id}


class QueryPool:
    """Case-insensitively deduplicated query collection with provenance."""

    def __init__(self, records: list[QueryRecord] | None = None):
        self.records: list[QueryRecord] = []
        self._texts: set[str] = set()
        for r in records or []:
            self.add(r)

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: QueryRecord) -> bool:
        key = record.text.strip().lower()
        if not key or key in self._texts:
            return False
        if record.origin == "expanded" and record.parent_id not in {r.id for r in self.records}:
            raise ValueError(f"expanded query references unknown seed {record.parent_id!r}")
        self.records.append(record)
        self._texts.add(key)
        return True

    def save(self, path: str | Path):
        Path(path).write_text(
            "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "QueryPool":
        pool = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                pool.add(QueryRecord(d["id"], d["text"], d.get("origin", "seed"),
                                     d.get("parent_id")))
        return pool


def expand_queries(
    seeds: list[QueryRecord], n_per_seed: int, gateway, pool: QueryPool | None = None
) -> tuple[list[QueryRecord], int]:
    """Expand seed queries via the expander role; duplicates (against the pool
    and the seeds, case-insensitive) are dropped. Returns (new records,
    warning count); backend failures skip the seed and count a warning."""
    if not seeds:
        raise EmptySeedPool("expansion needs at least one seed query")
    pool = pool or QueryPool(list(seeds))
    new_records: list[QueryRecord] = []
    warnings = 0
    counter = 0
    for seed in seeds:
        bundle = PromptBundle(
            "query_expander",
            f"Propose up to {n_per_seed} varied user queries with the same intent, "
            "one per line.",
            (PromptPart("text", seed.text),),
            Decoding(temperature=1.0),
        )
        try:
            text = gateway.complete(bundle)
        except GatewayError as e:
            logger.warning("expander failed for seed %s: %s", seed.id, e)
            warnings += 1
            continue
        added_for_seed = 0
        for line in text.splitlines():
            line = re.sub(r"^\s*(?:[-*]|\d+[.)])\s*", "", line).strip()
            if not line:
                continue
            if added_for_seed >= n_per_seed:
                break
            record = QueryRecord(
                id=f"{seed.id}-x{counter}", text=line, origin="expanded", parent_id=seed.id
            )
            if pool.add(record):
                new_records.append(record)
                added_for_seed += 1
                counter += 1
    return new_records, warnings


@dataclass
class RolloutRun:
    trajectory: Optional[Trajectory]
    error: Optional[str]
    start_screen: Optional[str]


def rollout(
    query: QueryRecord,
    scenario: Scenario,
    repeats: int,
    gateway,
    vary_start: bool = False,
    temperature: float = 1.0,
    task_id: str | None = None,
    seed: int = 0,
    config: ExecutorConfig | None = None,
) -> list[RolloutRun]:
    """Repeat executor runs for one query. With vary_start the start screen
    cycles through the scenario's declared start set; per-repeat failures are
    attached without aborting the batch."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    starts = scenario.start_screens
    if vary_start and len(starts) < 2:
        raise ValueError("vary_start needs at least two declared start screens")
    if task_id is None:
        for task in scenario.tasks.values():
            if task.instruction.strip().lower() == query.text.strip().lower():
                task_id = task.id
                break
        else:
            task_id = next(iter(scenario.tasks))
    config = config or ExecutorConfig()
    config = replace(config, temperature=temperature)
    runs: list[RolloutRun] = []
    for i in range(repeats):
        start = starts[i % len(starts)] if vary_start else None
        env = SimEnv(scenario)
        env.reset(task_id, seed=seed, start_screen=start)
        try:
            trajectory = run_task(
                query.text, env, gateway, config,
                trajectory_id=f"{query.id}-r{i}",
            )
            runs.append(RolloutRun(trajectory, None, start))
        except Exception as e:  # noqa: BLE001 - batch must survive bad repeats
            logger.warning("rollout repeat %d failed: %s", i, e)
            runs.append(RolloutRun(None, f"{type(e).__name__}: {e}", start))
    return runs


@dataclass(frozen=True)
class DiscriminatorVerdict:
    name: str
    passed: bool
    rationale: str

    def __post_init__(self):
        if self.name not in DISCRIMINATORS:
            raise ValueError(f"unknown discriminator {self.name!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "pass": self.passed, "rationale": self.rationale}


@dataclass(frozen=True)
class GateResult:
    trajectory_id: str
    verdicts: tuple[DiscriminatorVerdict, ...]
    accepted: bool
    routed_to: str  # finetune_set | correction_queue

    def __post_init__(self):
        if len(self.verdicts) != len(DISCRIMINATORS):
            raise ValueError("a gate result carries exactly seven verdicts")
        if self.accepted != all(v.passed for v in self.verdicts):
            raise ValueError("accepted must equal the conjunction of all verdicts")
        expected = "finetune_set" if self.accepted else "correction_queue"
        if self.routed_to != expected:
            raise ValueError("routed_to is inconsistent with accepted")

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "accepted": self.accepted,
            "routed_to": self.routed_to,
        }


def max_identical_run(actions: list[Action]) -> int:
    best = run = 0
    previous = None
    for a in actions:
        serialized = serialize_action(a)
        run = run + 1 if serialized == previous else 1
        previous = serialized
        best = max(best, run)
    return best


def _rule_verdict(name: str, trajectory: Trajectory) -> DiscriminatorVerdict:
    if name == "task_completion":
        ok = trajectory.outcome.status == "success"
        return DiscriminatorVerdict(name, ok, f"env outcome: {trajectory.outcome.status}")
    if name == "action_validity":
        errors = [s.error for s in trajectory.steps if s.error]
        parse_failures = [s.parse_failure for s in trajectory.steps if s.parse_failure]
        ok = not errors and not parse_failures
        return DiscriminatorVerdict(
            name, ok, "no step errors" if ok else f"step errors: {errors + parse_failures}"
        )
    if name == "redundancy":
        longest = max_identical_run(trajectory.actions())
        ok = longest < REDUNDANCY_RUN_LIMIT
        return DiscriminatorVerdict(
            name, ok, f"longest identical action run: {longest}"
        )
    return DiscriminatorVerdict(name, True, "default pass (no judge available)")


def _judge_verdict(name: str, trajectory: Trajectory, gateway) -> DiscriminatorVerdict | None:
    if gateway is None:
        return None
    steps = "\n".join(
        f"step {s.index}: {s.response.action_summary if s.response else '(unparsed)'}"
        for s in trajectory.steps
    )
    bundle = PromptBundle(
        "trajectory_discriminator",
        f"Evaluate the {name} dimension of this trajectory. Reply "
        "<verdict>pass</verdict> or <verdict>fail</verdict> with a "
        "<rationale>...</rationale>.",
        (
            PromptPart("text", f"dimension: {name}"),
            PromptPart("text", f"Instruction: {trajectory.instruction}"),
            PromptPart("text", f"Outcome: {trajectory.outcome.status}"),
            PromptPart("text", "Steps:\n" + steps),
        ),
        Decoding(temperature=0.0),
    )
    try:
        text = gateway.complete(bundle)
    except GatewayError:
        return None
    m = _VERDICT_RE.search(text)
    if m is None or m.group(1).strip().lower() not in ("pass", "fail"):
        return None
    r = _RATIONALE_RE.search(text)
    return DiscriminatorVerdict(
        name,
        m.group(1).strip().lower() == "pass",
        r.group(1).strip() if r else "judge verdict",
    )


def gate_trajectory(trajectory: Trajectory, gateway=None) -> GateResult:
    """Run all seven discriminators; a trajectory is retained for fine-tuning
    only when every one of them passes."""
    verdicts = []
    for name in DISCRIMINATORS:
        verdict = _judge_verdict(name, trajectory, gateway)
        if verdict is None:
            verdict = _rule_verdict(name, trajectory)
        verdicts.append(verdict)
    accepted = all(v.passed for v in verdicts)
    return GateResult(
        trajectory_id=trajectory.id,
        verdicts=tuple(verdicts),
        accepted=accepted,
        routed_to="finetune_set" if accepted else "correction_queue",
    )


class CorrectionQueue:
    """Append-only persisted queue of rejected trajectories awaiting
    step-edit patches."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, trajectory_id: str) -> Path:
        return self.root / f"{trajectory_id}.json"

    def add(self, trajectory: Trajectory, gate: GateResult):
        doc = {"trajectory": trajectory.to_dict(), "gate": gate.to_dict()}
        self._path(trajectory.id).write_text(
            json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8"
        )

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))

    def get(self, trajectory_id: str) -> dict:
        return json.loads(self._path(trajectory_id).read_text(encoding="utf-8"))

    def remove(self, trajectory_id: str):
        self._path(trajectory_id).unlink()

    def apply_patch(
        self,
        trajectory_id: str,
        step_index: int,
        new_action: Action,
        scenario: Scenario,
    ) -> Trajectory:
        """Replace the action at one step and replay the corrected action list
        through a fresh deterministic env, yielding a consistent corrected
        trajectory flagged corrected=True."""
        from .actions import decode_action

        doc = self.get(trajectory_id)
        t = doc["trajectory"]
        actions = []
        for s in t["steps"]:
            if s["action"] is not None:
                actions.append(decode_action(s["action"]))
        if not 0 <= step_index < len(actions):
            raise EvolveError(f"step {step_index} out of range (0..{len(actions) - 1})")
        actions[step_index] = new_action

        env = SimEnv(scenario)
        env.reset(t["task_id"], seed=t.get("seed", 0))
        steps = []
        from .executor import StepRecord
        from .actions import ModelResponse, render_response

        outcome = env.success_check()
        for i, action in enumerate(actions):
            if env.frozen:
                break
            before = env.snapshot()
            after, outcome = env.step(action)
            summary = f"Replayed: {serialize_action(action)}"
            steps.append(
                StepRecord(
                    index=i,
                    snapshot_before=before,
                    response=ModelResponse("correction replay", summary, action,
                                           render_response("correction replay", summary, action)),
                    action=action,
                    snapshot_after=after,
                    outcome=outcome,
                )
            )
        corrected = Trajectory(
            id=f"{trajectory_id}-corrected",
            instruction=t["instruction"],
            steps=steps,
            outcome=outcome,
            knowledge_used=list(t.get("knowledge_used", [])),
            scenario=t.get("scenario", scenario.name),
            task_id=t.get("task_id", ""),
            seed=t.get("seed", 0),
            corrected=True,
        )
        return corrected


def export_finetune_set(trajectories: list[Trajectory], path: str | Path) -> int:
    """Write line-delimited step samples for the accepted (and corrected)
    trajectories; corrected trajectories flag every sample they produce."""
    samples = []
    for t in trajectories:
        for sample in split_trajectory(t):
            samples.append(replace(sample, corrected=t.corrected))
    try:
        return write_samples(path, samples, header=True)
    except OSError as e:
        raise EvolveError(f"cannot write finetune set: {e}") from e
