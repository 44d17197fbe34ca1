"""Proactive engagement: trustworthiness decisions, ASK gating, and the
two-sample meta-knowledge decoupling generator for training data.

The trust judge answers with::

    <verdict>trust | ask</verdict>
    <question>the clarification to pose (when verdict is ask)</question>

A dead judge backend degrades to trustworthy (autonomy over interruption);
without any backend the deterministic rule fires: the step is untrustworthy
when the instruction contains a declared ambiguity marker that no recorded
question-answer pair has resolved yet.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any, Optional

from .actions import Action, ask as ask_action, serialize_action
from .gateway import Decoding, GatewayError, PromptBundle, PromptPart, ScriptExhausted
from .simenv import Scenario, ScreenSnapshot

logger = logging.getLogger(__name__)

_VERDICT_RE = re.compile(r"<verdict>(.*?)</verdict>", re.DOTALL)
_QUESTION_RE = re.compile(r"<question>(.*?)</question>", re.DOTALL)


class MissingQuestion(ValueError):
    pass


class MissingQa(ValueError):
    pass


@dataclass(frozen=True)
class TrustDecision:
    trustworthy: bool
    reason: str
    proposed_question: Optional[str] = None

    def __post_init__(self):
        if self.trustworthy and self.proposed_question is not None:
            raise ValueError("trustworthy decisions carry no question")
        if not self.trustworthy and not self.proposed_question:
            raise ValueError("untrustworthy decisions must propose a question")


@dataclass(frozen=True)
class QaPair:
    question: str
    answer: str
    step_index: int = 0

    def to_dict(self) -> dict:
        return {"question": self.question, "answer": self.answer, "step_index": self.step_index}


@dataclass(frozen=True)
class AskConfig:
    enabled: bool = False
    max_asks_per_run: int = 3


def _rule_assessment(instruction: str, scenario: Scenario | None, qa: list[QaPair]) -> TrustDecision:
    if scenario is not None:
        lowered = instruction.lower()
        for amb in scenario.ambiguities:
            if amb.marker.lower() in lowered:
                resolved = any(
                    p.question == amb.question or amb.marker.lower() in p.question.lower()
                    for p in qa
                )
                if not resolved:
                    return TrustDecision(
                        trustworthy=False,
                        reason=f"instruction mentions ambiguous {amb.marker!r} with no clarifying answer",
                        proposed_question=amb.question,
                    )
    return TrustDecision(trustworthy=True, reason="no unresolved ambiguity detected")


def assess_scenario(
    instruction: str,
    snapshot: ScreenSnapshot,
    history: list[str],
    qa: list[QaPair],
    gateway,
    scenario: Scenario | None = None,
) -> TrustDecision:
    """Decide whether to act autonomously or convert the step into an ASK."""
    if gateway is None:
        return _rule_assessment(instruction, scenario, qa)
    parts = [
        PromptPart("text", f"Instruction: {instruction}"),
        PromptPart("text", "History:\n" + ("\n".join(history) or "(empty)")),
        PromptPart(
            "text",
            "QA so far:\n" + ("\n".join(f"Q: {p.question}\nA: {p.answer}" for p in qa) or "(none)"),
        ),
        PromptPart("snapshot", snapshot.canonical_json()),
    ]
    bundle = PromptBundle(
        "trust_judge",
        "Decide whether the scenario is trustworthy enough to proceed without "
        "asking the user. Reply <verdict>trust</verdict> or <verdict>ask</verdict> "
        "with a <question>...</question> when asking.",
        tuple(parts),
        Decoding(temperature=0.0),
    )
    try:
        text = gateway.complete(bundle)
    except ScriptExhausted:
        return _rule_assessment(instruction, scenario, qa)  # no judge scripted
    except GatewayError as e:
        logger.warning("trust judge backend failed (%s); defaulting to trustworthy", e)
        return TrustDecision(trustworthy=True, reason=f"judge unavailable: {e}")
    m = _VERDICT_RE.search(text)
    if m is None:
        return _rule_assessment(instruction, scenario, qa)
    verdict = m.group(1).strip().lower()
    if verdict == "ask":
        q = _QUESTION_RE.search(text)
        question = q.group(1).strip() if q else ""
        if not question:
            return _rule_assessment(instruction, scenario, qa)
        return TrustDecision(trustworthy=False, reason="judge requested clarification",
                             proposed_question=question)
    if verdict == "trust":
        return TrustDecision(trustworthy=True, reason="judge approved autonomous execution")
    return _rule_assessment(instruction, scenario, qa)


@dataclass(frozen=True)
class AnnotatedScreen:
    """One annotated screenshot for the decoupling generator."""

    instruction: str
    snapshot: ScreenSnapshot
    gold_action: Action
    needs_ask: bool
    question: Optional[str] = None
    qa: Optional[list[QaPair]] = None


def interleave_training_samples(annotated: AnnotatedScreen) -> list[dict[str, Any]]:
    """Decouple one screenshot into the two meta-knowledge samples.

    Record 1 omits QA history; its gold becomes ASK(question) when the scene
    needs asking, else the original gold. Record 2 includes QA history and
    always keeps the original non-ASK gold. They are emitted adjacently so a
    concatenated export interleaves the two sample kinds.
    """
    if annotated.needs_ask and not annotated.question:
        raise MissingQuestion("needs_ask samples must carry the question to pose")
    if annotated.qa is None:
        raise MissingQa("the QA-conditioned sample needs its question-answer history")
    first_gold = ask_action(annotated.question) if annotated.needs_ask else annotated.gold_action
    base = {
        "instruction": annotated.instruction,
        "snapshot": annotated.snapshot.to_dict(),
    }
    first = dict(base)
    first.update({"qa": None, "gold": serialize_action(first_gold), "meta": "ask_decision"})
    second = dict(base)
    second.update({
        "qa": [p.to_dict() for p in annotated.qa],
        "gold": serialize_action(annotated.gold_action),
        "meta": "qa_conditioned",
    })
    return [first, second]
