"""Training-data laboratory: step splitting, multi-path augmentation,
difficulty filtering, rule-based rewards, and group-relative policy math.

Reward layout
-------------
r_fmt    1 iff the raw response parses as the three-part format.
r_type   1 iff the predicted kind matches the reference kind.
r_params 1 iff the predicted parameters are correct for that kind:
         coordinates strictly inside the reference bbox; text compared by
         token-level F1 against a threshold; swipes by dominant-axis
         direction; enums and parameterless kinds by exact equality.
r_acc    r_type AND r_params, best over {gold} + alternates.
r_final  r_acc + alpha * r_fmt with alpha = 0.2.

Group-relative math
-------------------
advantage_i = (r_i - mean(r)) / population_std(r), all zeros when std = 0.
objective   = mean_i[ min(ratio_i*A_i, clip(ratio_i, 1-eps, 1+eps)*A_i)
                      - beta * (ref_i - ln(ref_i) - 1) ]
The KL term is the non-negative k3 estimator of D_KL(policy || reference).
Pure scalar evaluation; no parameter updates happen here.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .actions import (
    Action,
    COORDINATE_KINDS,
    ModelResponse,
    click,
    decode_action,
    open_app,
    parse_response,
    serialize_action,
    system_button,
)
from .simenv import Scenario, ScreenSnapshot, snapshot_from_dict, swipe_direction

DEFAULT_ALPHA = 0.2
DEFAULT_F1_THRESHOLD = 0.5
DEFAULT_KEEP_ZERO_FRACTION = 0.25


class DatalabError(Exception):
    pass


class EmptyTrajectory(DatalabError):
    pass


class MissingDifficulty(DatalabError):
    pass


class GroupTooSmall(DatalabError):
    pass


class LengthMismatch(DatalabError):
    pass


class NonPositiveRatio(DatalabError):
    pass


@dataclass(frozen=True)
class StepSample:
    """One step-wise training record: {instruction, history, snapshot, gold}."""

    instruction: str
    history: tuple[str, ...]
    snapshot: ScreenSnapshot
    gold: Action
    gold_bbox: Optional[tuple[int, int, int, int]] = None
    alternates: tuple[Action, ...] = ()
    difficulty_count: Optional[int] = None
    corrected: bool = False

    def __post_init__(self):
        if (self.gold.kind in COORDINATE_KINDS) != (self.gold_bbox is not None):
            raise ValueError("gold_bbox must be present exactly for coordinate-based golds")
        if self.gold in self.alternates:
            raise ValueError("alternates must not contain the gold action")
        if self.difficulty_count is not None and not 0 <= self.difficulty_count <= 8:
            raise ValueError("difficulty_count must lie in [0, 8]")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "instruction": self.instruction,
            "history": list(self.history),
            "snapshot": self.snapshot.to_dict(),
            "gold": json.loads(serialize_action(self.gold)),
            "gold_bbox": list(self.gold_bbox) if self.gold_bbox else None,
            "alternates": [json.loads(serialize_action(a)) for a in self.alternates],
            "difficulty_count": self.difficulty_count,
        }
        if self.corrected:
            rec["corrected"] = True
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "StepSample":
        snapshot = snapshot_from_dict(rec["snapshot"])
        return cls(
            instruction=rec["instruction"],
            history=tuple(rec["history"]),
            snapshot=snapshot,
            gold=decode_action(rec["gold"]),
            gold_bbox=tuple(rec["gold_bbox"]) if rec.get("gold_bbox") else None,
            alternates=tuple(decode_action(a) for a in rec.get("alternates", [])),
            difficulty_count=rec.get("difficulty_count"),
            corrected=bool(rec.get("corrected", False)),
        )


@dataclass(frozen=True)
class RewardBreakdown:
    r_fmt: int
    r_type: int
    r_params: int
    r_acc: int
    r_final: float
    alpha: float = DEFAULT_ALPHA


def strictly_inside(x: int, y: int, bbox: Sequence[int]) -> bool:
    l, t, r, b = bbox
    return l < x < r and t < y < b


def _bbox_under(coordinate, snapshot: ScreenSnapshot) -> tuple[int, int, int, int] | None:
    hit = snapshot.widget_at(coordinate.x, coordinate.y)
    return hit.bbox if hit is not None else None


def _point_fallback_bbox(coordinate) -> tuple[int, int, int, int]:
    # 5px box so the gold point itself still counts as strictly inside.
    return (coordinate.x - 2, coordinate.y - 2, coordinate.x + 3, coordinate.y + 3)


# --- splitting ---------------------------------------------------------------

def split_trajectory(trajectory, instruction: str | None = None) -> list[StepSample]:
    """One StepSample per executed action; sample t's history holds the
    action summaries of the preceding samples (sample 0: empty history)."""
    steps = [s for s in trajectory.steps if s.action is not None]
    if not steps:
        raise EmptyTrajectory("trajectory has no executed actions")
    instruction = instruction if instruction is not None else trajectory.instruction
    samples: list[StepSample] = []
    history: list[str] = []
    for step in steps:
        gold = step.action
        gold_bbox = None
        if gold.kind in COORDINATE_KINDS:
            gold_bbox = _bbox_under(gold.coordinate, step.snapshot_before)
            if gold_bbox is None:
                gold_bbox = _point_fallback_bbox(gold.coordinate)
        samples.append(
            StepSample(
                instruction=instruction,
                history=tuple(history),
                snapshot=step.snapshot_before,
                gold=gold,
                gold_bbox=gold_bbox,
            )
        )
        summary = step.response.action_summary if step.response is not None else ""
        history.append(summary)
    return samples


# --- multi-path augmentation -------------------------------------------------

def _equivalence_alternates(sample: StepSample, scenario: Scenario) -> list[Action]:
    """Rule oracle: declared open-app/icon-click and back-arrow/system-button
    pairs, applied in both directions when the sample's screen matches."""
    snap = sample.snapshot
    screen_ref = f"{snap.app}:{snap.screen_id}"
    alternates: list[Action] = []
    for eq in scenario.equivalences:
        if eq.click_screen != screen_ref:
            continue
        widget = snap.find_widget(eq.click_widget)
        if widget is None:
            continue
        cx, cy = widget.center()
        if eq.open_target is not None:
            if sample.gold.kind == "open" and sample.gold.text.lower() == eq.open_target.lower():
                alternates.append(click(cx, cy))
            elif sample.gold.kind == "click" and widget.contains(
                sample.gold.coordinate.x, sample.gold.coordinate.y
            ):
                alternates.append(open_app(eq.open_target))
        if eq.system_button is not None:
            if sample.gold.kind == "system_button" and sample.gold.button == eq.system_button:
                alternates.append(click(cx, cy))
            elif sample.gold.kind == "click" and widget.contains(
                sample.gold.coordinate.x, sample.gold.coordinate.y
            ):
                alternates.append(system_button(eq.system_button))
    return alternates


def _judge_alternates(sample: StepSample, gateway) -> list[Action]:
    from .gateway import GatewayError, PromptBundle, PromptPart

    prompt = PromptBundle(
        role_name="augment_judge",
        system_text=(
            "List alternative actions that complete the same step. "
            "Reply with a JSON array of action objects; [] if none."
        ),
        user_parts=(
            PromptPart("text", f"Gold action: {serialize_action(sample.gold)}"),
            PromptPart("snapshot", sample.snapshot.canonical_json()),
        ),
    )
    try:
        text = gateway.complete(prompt)
        doc = json.loads(text)
        if not isinstance(doc, list):
            return []
        return [decode_action(obj) for obj in doc]
    except Exception:
        return []  # judge failure degrades to the rule oracle only


def augment_multipath(sample: StepSample, scenario: Scenario, gateway=None) -> StepSample:
    """Extend ``alternates`` with equal-reward valid actions for this step."""
    found = _equivalence_alternates(sample, scenario)
    if gateway is not None:
        found.extend(_judge_alternates(sample, gateway))
    merged = list(sample.alternates)
    for a in found:
        if a != sample.gold and a not in merged:
            merged.append(a)
    return replace(sample, alternates=tuple(merged))


# --- difficulty filtering ----------------------------------------------------

def filter_by_difficulty(
    samples: list[StepSample],
    keep_zero_fraction: float = DEFAULT_KEEP_ZERO_FRACTION,
    seed: int = 0,
) -> list[StepSample]:
    """Drop c=8 (trivially solved) samples, keep c in [1,7] unconditionally,
    and keep c=0 samples with the given probability under a seeded generator.
    Relative order is preserved and the result is deterministic per seed."""
    if not 0.0 <= keep_zero_fraction <= 1.0:
        raise ValueError("keep_zero_fraction must lie in [0, 1]")
    missing = [i for i, s in enumerate(samples) if s.difficulty_count is None]
    if missing:
        raise MissingDifficulty(f"samples {missing[:5]} have no difficulty_count")
    rng = random.Random(seed)
    kept = []
    for s in samples:
        c = s.difficulty_count
        if c == 8:
            continue
        if c == 0 and rng.random() >= keep_zero_fraction:
            continue
        kept.append(s)
    return kept


# --- rule-based rewards --------------------------------------------------------

def score_format(raw: str) -> int:
    return 1 if isinstance(parse_response(raw), ModelResponse) else 0


def token_f1(predicted: str, reference: str) -> float:
    """Token-level F1 over lowercase word tokens (multiset overlap)."""
    from .knowledge import tokenize

    p, r = tokenize(predicted), tokenize(reference)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    counts: dict[str, int] = {}
    for t in r:
        counts[t] = counts.get(t, 0) + 1
    overlap = 0
    for t in p:
        if counts.get(t, 0) > 0:
            counts[t] -= 1
            overlap += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(r)
    return 2 * precision * recall / (precision + recall)


TEXT_SCORED_KINDS = frozenset({"type", "open", "answer", "ask"})


def _params_correct(
    predicted: Action,
    reference: Action,
    reference_bbox: tuple[int, int, int, int] | None,
    snapshot: ScreenSnapshot,
    f1_threshold: float,
) -> bool:
    kind = reference.kind
    if kind in ("click", "long_press"):
        bbox = reference_bbox
        if bbox is None:
            bbox = _bbox_under(reference.coordinate, snapshot)
        if bbox is not None:
            return strictly_inside(predicted.coordinate.x, predicted.coordinate.y, bbox)
        return predicted.coordinate == reference.coordinate
    if kind == "swipe":
        pred_dir = swipe_direction(
            predicted.coordinate2.x - predicted.coordinate.x,
            predicted.coordinate2.y - predicted.coordinate.y,
        )
        ref_dir = swipe_direction(
            reference.coordinate2.x - reference.coordinate.x,
            reference.coordinate2.y - reference.coordinate.y,
        )
        return pred_dir == ref_dir
    if kind in TEXT_SCORED_KINDS:
        return token_f1(predicted.text, reference.text) >= f1_threshold
    if kind == "clear_text":
        return True
    if kind == "system_button":
        return predicted.button == reference.button
    if kind == "terminate":
        return predicted.status == reference.status
    if kind == "wait":
        return predicted.time == reference.time
    raise AssertionError(kind)


def score_accuracy(
    predicted: Action,
    sample: StepSample,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> tuple[int, int, int]:
    """(r_type, r_params, r_acc) for a prediction, best over gold and every
    alternate: any alternate carries the same reward weight as the gold."""
    references: list[tuple[Action, tuple[int, int, int, int] | None]] = [
        (sample.gold, sample.gold_bbox)
    ]
    references.extend((alt, None) for alt in sample.alternates)
    best = (0, 0, 0)
    for reference, bbox in references:
        r_type = 1 if predicted.kind == reference.kind else 0
        r_params = 0
        if r_type:
            r_params = int(
                _params_correct(predicted, reference, bbox, sample.snapshot, f1_threshold)
            )
        r_acc = r_type & r_params
        candidate = (r_type, r_params, r_acc)
        if (candidate[2], candidate[0]) > (best[2], best[0]):
            best = candidate
        if best[2]:
            break
    return best


def score_final(r_acc: int, r_fmt: int, alpha: float = DEFAULT_ALPHA) -> float:
    if r_acc not in (0, 1) or r_fmt not in (0, 1):
        raise ValueError("r_acc and r_fmt must be 0 or 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return r_acc + alpha * r_fmt


def score_response(
    raw: str,
    sample: StepSample,
    alpha: float = DEFAULT_ALPHA,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> RewardBreakdown:
    """Full reward for one raw model response against one sample."""
    r_fmt = score_format(raw)
    r_type = r_params = r_acc = 0
    if r_fmt:
        response = parse_response(raw)
        r_type, r_params, r_acc = score_accuracy(response.action, sample, f1_threshold)
    return RewardBreakdown(
        r_fmt=r_fmt,
        r_type=r_type,
        r_params=r_params,
        r_acc=r_acc,
        r_final=score_final(r_acc, r_fmt, alpha),
        alpha=alpha,
    )


# --- group-relative policy math ----------------------------------------------

def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Standardize rewards within their sampling group (population std).

    Zero-variance groups carry no signal and map to all-zero advantages.
    """
    if len(rewards) < 2:
        raise GroupTooSmall("advantage normalization needs a group of at least 2")
    r = np.asarray(rewards, dtype=np.float64)
    if np.ptp(r) == 0.0:
        # identical rewards carry no signal; detect before the mean is taken,
        # since fl(mean([x]*n)) can differ from x and fabricate tiny deviations
        return [0.0] * len(rewards)
    deviations = r - r.mean()
    std = float(np.sqrt(np.mean(deviations**2)))
    if std == 0.0:
        return [0.0] * len(rewards)
    return (deviations / std).tolist()


@dataclass
class GroupEvaluation:
    rewards: list[float]
    advantages: list[float]
    ratios: Optional[list[float]] = None
    ref_ratios: Optional[list[float]] = None
    epsilon: float = 0.2
    beta: float = 0.0
    objective: Optional[float] = None

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("advantages", "ratios", "ref_ratios"):
            seq = getattr(self, name)
            if seq is not None and len(seq) != n:
                raise LengthMismatch(f"{name} has length {len(seq)}, expected {n}")


def kl_k3(ref_ratio: np.ndarray) -> np.ndarray:
    """k3 estimator of D_KL(policy || reference): r - ln r - 1, non-negative."""
    return ref_ratio - np.log(ref_ratio) - 1.0


def grpo_objective(evaluation: GroupEvaluation) -> float:
    """Clipped surrogate objective with KL regularization, evaluated as a
    scalar over one response group. Requires per-response probability ratios
    (current/old) and, when beta > 0, reference ratios (reference/current)."""
    if evaluation.ratios is None:
        raise LengthMismatch("ratios are required")
    advantages = np.asarray(evaluation.advantages, dtype=np.float64)
    ratios = np.asarray(evaluation.ratios, dtype=np.float64)
    if np.any(ratios <= 0):
        raise NonPositiveRatio("probability ratios must be positive")
    eps = evaluation.epsilon
    clipped = np.clip(ratios, 1.0 - eps, 1.0 + eps)
    surrogate = np.minimum(ratios * advantages, clipped * advantages)
    kl = np.zeros_like(surrogate)
    if evaluation.beta != 0.0:
        if evaluation.ref_ratios is None:
            raise LengthMismatch("ref_ratios are required when beta is nonzero")
        ref = np.asarray(evaluation.ref_ratios, dtype=np.float64)
        if np.any(ref <= 0):
            raise NonPositiveRatio("reference ratios must be positive")
        kl = kl_k3(ref)
    return float(np.mean(surrogate - evaluation.beta * kl))


def evaluate_group(
    rewards: Sequence[float],
    ratios: Sequence[float],
    ref_ratios: Sequence[float] | None = None,
    epsilon: float = 0.2,
    beta: float = 0.0,
) -> GroupEvaluation:
    """Advantages + objective for one sampled group in a single call."""
    evaluation = GroupEvaluation(
        rewards=list(rewards),
        advantages=group_advantages(rewards),
        ratios=list(ratios),
        ref_ratios=list(ref_ratios) if ref_ratios is not None else None,
        epsilon=epsilon,
        beta=beta,
    )
    evaluation.objective = grpo_objective(evaluation)
    return evaluation


# --- dataset IO ----------------------------------------------------------------

SAMPLE_SCHEMA = "step_sample/v1"


def write_samples(path: str | Path, samples: Iterable[StepSample], header: bool = True) -> int:
    samples = list(samples)
    lines = []
    if header:
        lines.append(json.dumps({"record": "header", "schema": SAMPLE_SCHEMA, "count": len(samples)},
                                sort_keys=True))
    for s in samples:
        lines.append(json.dumps(s.to_record(), sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(samples)


def read_samples(path: str | Path) -> list[StepSample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("record") == "header":
            continue
        out.append(StepSample.from_record(rec))
    return out
