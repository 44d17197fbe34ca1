"""Hierarchical reflection: per-action, sliding-window, and whole-task review.

Every reflector is a prompted judge returning fixed-field structured text::

    <verdict>ok | not_ok</verdict>
    <diagnosis>what went wrong</diagnosis>
    <suggestion>what to do about it</suggestion>

Reflection must never halt execution: backend failures degrade to an ok
verdict with a logged warning, and unparseable judge output falls back to
deterministic rules (identical before/after screens for action reflection,
repeated identical actions for window reflection).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .actions import ModelResponse
from .gateway import Decoding, GatewayError, PromptBundle, PromptPart, ScriptExhausted
from .simenv import ScreenSnapshot

logger = logging.getLogger(__name__)

LEVELS = ("action", "trajectory", "global")

_VERDICT_RE = re.compile(r"<verdict>(.*?)</verdict>", re.DOTALL)
_DIAGNOSIS_RE = re.compile(r"<diagnosis>(.*?)</diagnosis>", re.DOTALL)
_SUGGESTION_RE = re.compile(r"<suggestion>(.*?)</suggestion>", re.DOTALL)


@dataclass(frozen=True)
class ReflectionVerdict:
    level: str
    ok: bool
    diagnosis: str
    suggestion: str
    step_span: tuple[int, int]

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if self.level == "action" and self.step_span[0] != self.step_span[1]:
            raise ValueError("action-level verdicts span exactly one step")

    def feedback_text(self) -> str:
        text = f"[{self.level}] {self.diagnosis}"
        if self.suggestion:
            text += f" Suggestion: {self.suggestion}"
        return text

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "ok": self.ok,
            "diagnosis": self.diagnosis,
            "suggestion": self.suggestion,
            "step_span": list(self.step_span),
        }


@dataclass(frozen=True)
class ReflectionConfig:
    action_enabled: bool = True
    trajectory_enabled: bool = True
    global_enabled: bool = True
    window: int = 3  # paper-stated range: last 3-5 actions
    resume_budget: int = 2

    def __post_init__(self):
        if not 3 <= self.window <= 5:
            raise ValueError("trajectory reflection window must lie in [3, 5]")
        if self.resume_budget < 0:
            raise ValueError("resume_budget must be >= 0")


def parse_verdict_text(text: str) -> tuple[bool, str, str] | None:
    m = _VERDICT_RE.search(text)
    if m is None:
        return None
    raw = m.group(1).strip().lower()
    if raw not in ("ok", "not_ok"):
        return None
    d = _DIAGNOSIS_RE.search(text)
    s = _SUGGESTION_RE.search(text)
    return (
        raw == "ok",
        d.group(1).strip() if d else "",
        s.group(1).strip() if s else "",
    )


# Sentinel: the backend errored, so degrade straight to ok (skip rule fallback).
_DEGRADED = object()


def _judge(gateway, role: str, system_text: str, parts: list[PromptPart]):
    """Run one reflector prompt; None means the judge gave no usable verdict."""
    if gateway is None:
        return None
    bundle = PromptBundle(role, system_text, tuple(parts), Decoding(temperature=0.0))
    try:
        return parse_verdict_text(gateway.complete(bundle))
    except ScriptExhausted:
        return None  # nothing scripted for this judge: use the rule fallback
    except GatewayError as e:
        logger.warning("%s backend failed (%s); degrading to ok", role, e)
        return _DEGRADED


_REFLECTOR_SYSTEM = (
    "Review the evidence and reply with <verdict>ok</verdict> or "
    "<verdict>not_ok</verdict>, a <diagnosis>...</diagnosis> and a "
    "<suggestion>...</suggestion>."
)


def reflect_action(
    before: ScreenSnapshot,
    after: ScreenSnapshot,
    response: ModelResponse,
    gateway,
    step_index: int = 0,
    env_error: str | None = None,
) -> ReflectionVerdict:
    """Compare the screens around one action against its declared intent."""
    span = (step_index, step_index)
    parts = [
        PromptPart("text", f"Intended action: {response.action_summary}"),
        PromptPart("text", f"Env error: {env_error or 'none'}"),
        PromptPart("snapshot", "BEFORE: " + before.canonical_json()),
        PromptPart("snapshot", "AFTER: " + after.canonical_json()),
    ]
    verdict = _judge(gateway, "action_reflector", _REFLECTOR_SYSTEM, parts)
    if verdict is not None and verdict is not _DEGRADED:
        ok, diagnosis, suggestion = verdict
        return ReflectionVerdict("action", ok, diagnosis, suggestion, span)
    if verdict is None:
        # Rule fallback: an env error or a screen-changing action that changed
        # nothing is evidence of a grounding/perception problem.
        if env_error is not None:
            return ReflectionVerdict(
                "action", False,
                f"action failed in the environment: {env_error}",
                "address the error before retrying (e.g. focus the field first)",
                span,
            )
        if response.action.kind in ("click", "long_press", "swipe") and before.layout_equal(after):
            return ReflectionVerdict(
                "action", False,
                "the action left the screen unchanged (likely grounding error)",
                "re-ground the target widget and try a different coordinate",
                span,
            )
    return ReflectionVerdict("action", True, "", "", span)


def reflect_trajectory(window: list, gateway) -> ReflectionVerdict:
    """Judge coherence of the last few steps (window size validated by config)."""
    if not window:
        raise ValueError("window must not be empty")
    span = (window[0].index, window[-1].index)
    lines = [
        f"step {s.index}: {s.response.action_summary if s.response else '(unparsed)'}"
        for s in window
    ]
    parts = [PromptPart("text", "Recent steps:\n" + "\n".join(lines))]
    verdict = _judge(gateway, "trajectory_reflector", _REFLECTOR_SYSTEM, parts)
    if verdict is not None and verdict is not _DEGRADED:
        ok, diagnosis, suggestion = verdict
        return ReflectionVerdict("trajectory", ok, diagnosis, suggestion, span)
    if verdict is None:
        actions = [s.action for s in window if s.action is not None]
        if len(actions) == len(window) and len(set(map(repr, actions))) == 1:
            return ReflectionVerdict(
                "trajectory", False,
                "the same action was repeated across the whole window without progress",
                "stop repeating it and try an alternative path",
                span,
            )
    return ReflectionVerdict("trajectory", True, "", "", span)


def reflect_global(trajectory_steps: list, instruction: str, gateway) -> ReflectionVerdict:
    """Whole-task review at a tentative endpoint (after the agent terminates)."""
    span = (0, trajectory_steps[-1].index if trajectory_steps else 0)
    lines = [
        f"step {s.index}: {s.response.action_summary if s.response else '(unparsed)'}"
        for s in trajectory_steps
    ]
    parts = [
        PromptPart("text", f"Instruction: {instruction}"),
        PromptPart("text", "Executed steps:\n" + "\n".join(lines)),
    ]
    if trajectory_steps:
        parts.append(
            PromptPart("snapshot", "FINAL: " + trajectory_steps[-1].snapshot_after.canonical_json())
        )
    verdict = _judge(gateway, "global_reflector", _REFLECTOR_SYSTEM, parts)
    if verdict is not None and verdict is not _DEGRADED:
        ok, diagnosis, suggestion = verdict
        return ReflectionVerdict("global", ok, diagnosis, suggestion, span)
    return ReflectionVerdict("global", True, "", "", span)


class FeedbackBoard:
    """Routes not-ok verdicts into the next prompts; a verdict persists until
    superseded by a newer verdict of the same level."""

    def __init__(self):
        self._by_level: dict[str, ReflectionVerdict] = {}

    def record(self, verdict: ReflectionVerdict):
        if verdict.ok:
            self._by_level.pop(verdict.level, None)
        else:
            self._by_level[verdict.level] = verdict

    def active(self) -> list[ReflectionVerdict]:
        return [self._by_level[level] for level in LEVELS if level in self._by_level]

    def feedback_lines(self) -> list[str]:
        return [v.feedback_text() for v in self.active()]
