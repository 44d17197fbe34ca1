"""Personalized intent recognition over per-user interaction history.

Build phase: distill an SOP (ordered natural-language steps) per historical
query and aggregate repeated choices into a user profile. Deploy phase:
retrieve the most similar stored query (same lexical scorer as the knowledge
retriever), adapt its SOP, and rewrite the incoming query with the user's
preferences. With no matching record and no preferences the output is the
identity: rewritten text equals the original exactly and the SOP is empty.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .executor import Trajectory
from .gateway import Decoding, GatewayError, PromptBundle, PromptPart
from .knowledge import score_document, tokenize

logger = logging.getLogger(__name__)

# Action kinds that carry no user-visible intent; SOP distillation drops them.
_TRIVIAL_SOP_KINDS = frozenset({"wait", "terminate"})


@dataclass(frozen=True)
class SopRecord:
    id: str
    query: str
    sop: tuple[str, ...]
    source_trajectory_id: str
    user_id: str

    def __post_init__(self):
        if not self.sop:
            raise ValueError("an SOP must contain at least one step")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "sop": list(self.sop),
            "source_trajectory_id": self.source_trajectory_id,
            "user_id": self.user_id,
        }


@dataclass(frozen=True)
class Preference:
    topic: str
    value: str
    evidence: tuple[str, ...]  # trajectory ids

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("a preference needs at least one evidence trajectory")

    def to_dict(self) -> dict:
        return {"topic": self.topic, "value": self.value, "evidence": list(self.evidence)}


@dataclass
class UserProfile:
    user_id: str
    preferences: list[Preference] = field(default_factory=list)
    updated_at: float = 0.0

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "preferences": [p.to_dict() for p in self.preferences],
            "updated_at": self.updated_at,
        }


@dataclass(frozen=True)
class PersonalizedQuery:
    original: str
    rewritten: str
    sop: tuple[str, ...]
    matched_record_id: Optional[str] = None

    def __post_init__(self):
        if not self.rewritten:
            raise ValueError("rewritten query must be non-empty")

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "rewritten": self.rewritten,
            "sop": list(self.sop),
            "matched_record_id": self.matched_record_id,
        }


def _distill_sop(trajectory: Trajectory, gateway) -> list[str]:
    """SOP steps from a trajectory: one step per meaningful action summary,
    with a gateway-backed refinement when a sop_extractor responds usefully."""
    rule_steps = [
        s.response.action_summary
        for s in trajectory.steps
        if s.response is not None and s.action is not None
        and s.action.kind not in _TRIVIAL_SOP_KINDS
    ]
    if gateway is None:
        return rule_steps
    bundle = PromptBundle(
        "sop_extractor",
        "Condense these steps into a standard operating procedure, "
        "a JSON array of step strings.",
        (
            PromptPart("text", f"Query: {trajectory.instruction}"),
            PromptPart("text", "Steps:\n" + "\n".join(rule_steps)),
        ),
        Decoding(temperature=0.0),
    )
    try:
        doc = json.loads(gateway.complete(bundle))
        if isinstance(doc, list) and doc and all(isinstance(x, str) for x in doc):
            return [x.strip() for x in doc]
    except (GatewayError, json.JSONDecodeError):
        logger.warning("sop extractor unavailable/unparseable; using raw summaries")
    return rule_steps


def _choice_clicks(trajectory: Trajectory) -> list[tuple[str, str]]:
    """(topic, value) pairs for clicks that picked one of several same-kind
    widgets on a screen — the deterministic signature of a user choice."""
    choices = []
    for step in trajectory.steps:
        if step.action is None or step.action.kind != "click":
            continue
        snap = step.snapshot_before
        hit = snap.widget_at(step.action.coordinate.x, step.action.coordinate.y)
        if hit is None or not hit.text:
            continue
        siblings = [w for w in snap.widgets if w.kind == hit.kind]
        if len(siblings) >= 2:
            choices.append((f"{snap.app}:{snap.screen_id}", hit.text))
    return choices


def _rule_preferences(history: list[Trajectory]) -> list[Preference]:
    seen: dict[tuple[str, str], list[str]] = {}
    for t in history:
        for topic, value in set(_choice_clicks(t)):
            seen.setdefault((topic, value), []).append(t.id)
    prefs = [
        Preference(topic=topic, value=value, evidence=tuple(ids))
        for (topic, value), ids in sorted(seen.items())
        if len(ids) >= 2
    ]
    return prefs


def _judge_preferences(history: list[Trajectory], gateway) -> list[Preference] | None:
    if gateway is None:
        return None
    lines = []
    for t in history:
        steps = "; ".join(s.response.action_summary for s in t.steps if s.response)
        lines.append(f"{t.id}: {t.instruction} -> {steps}")
    bundle = PromptBundle(
        "profile_extractor",
        'Infer stable user preferences as a JSON array of {"topic", "value", '
        '"evidence"} objects (evidence lists trajectory ids); [] if none.',
        (PromptPart("text", "\n".join(lines)),),
        Decoding(temperature=0.0),
    )
    try:
        doc = json.loads(gateway.complete(bundle))
        if not isinstance(doc, list):
            return None
        known = {t.id for t in history}
        prefs = []
        for item in doc:
            evidence = tuple(e for e in item.get("evidence", []) if e in known)
            if evidence:
                prefs.append(Preference(str(item["topic"]), str(item["value"]), evidence))
        return prefs
    except (GatewayError, json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None


def extract_intention_flows(
    history: list[Trajectory], user_id: str, gateway=None
) -> tuple[list[SopRecord], UserProfile]:
    """Build the explicit (query -> SOP) and implicit (profile) knowledge
    bases from a user's historical trajectories."""
    by_query: dict[str, Trajectory] = {}
    for t in history:
        by_query[t.instruction] = t  # keep the most recent per distinct query
    records = []
    for i, (query, trajectory) in enumerate(by_query.items()):
        sop = _distill_sop(trajectory, gateway)
        if not sop:
            continue
        records.append(
            SopRecord(
                id=f"{user_id}-sop-{i}",
                query=query,
                sop=tuple(sop),
                source_trajectory_id=trajectory.id,
                user_id=user_id,
            )
        )
    preferences = _judge_preferences(history, gateway)
    if preferences is None:
        preferences = _rule_preferences(history)
    profile = UserProfile(user_id=user_id, preferences=preferences, updated_at=time.time())
    return records, profile


class PersonaStore:
    """Per-user persistence: sops.jsonl + profile.json under one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _user_dir(self, user_id: str) -> Path:
        return self.root / user_id

    def save(self, user_id: str, records: list[SopRecord], profile: UserProfile):
        d = self._user_dir(user_id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "sops.jsonl").write_text(
            "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records),
            encoding="utf-8",
        )
        (d / "profile.json").write_text(
            json.dumps(profile.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )

    def load(self, user_id: str) -> tuple[list[SopRecord], UserProfile]:
        d = self._user_dir(user_id)
        records: list[SopRecord] = []
        profile = UserProfile(user_id=user_id)
        sop_path = d / "sops.jsonl"
        if sop_path.exists():
            for line in sop_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    records.append(
                        SopRecord(
                            id=rec["id"],
                            query=rec["query"],
                            sop=tuple(rec["sop"]),
                            source_trajectory_id=rec["source_trajectory_id"],
                            user_id=rec["user_id"],
                        )
                    )
        profile_path = d / "profile.json"
        if profile_path.exists():
            doc = json.loads(profile_path.read_text(encoding="utf-8"))
            profile = UserProfile(
                user_id=doc["user_id"],
                preferences=[
                    Preference(p["topic"], p["value"], tuple(p["evidence"]))
                    for p in doc.get("preferences", [])
                ],
                updated_at=doc.get("updated_at", 0.0),
            )
        return records, profile


def match_sop_record(query: str, records: list[SopRecord]) -> tuple[SopRecord | None, float]:
    """Top-1 record by the shared lexical scorer; no match when every score
    is zero. df counts each stored query as one document."""
    q_tokens = tokenize(query)
    df: dict[str, int] = {}
    for r in records:
        for t in set(tokenize(r.query)):
            df[t] = df.get(t, 0) + 1
    best: SopRecord | None = None
    best_score = 0.0
    for r in sorted(records, key=lambda r: r.id):
        s = score_document(q_tokens, tokenize(r.query), df)
        if s > best_score:
            best, best_score = r, s
    return best, best_score


def _adapt_sop(query: str, record: SopRecord, gateway) -> tuple[str, ...]:
    if gateway is None:
        return record.sop
    bundle = PromptBundle(
        "sop_extractor",
        "Adapt the stored procedure to the new query; reply with a JSON array "
        "of step strings.",
        (
            PromptPart("text", f"New query: {query}"),
            PromptPart("text", f"Stored query: {record.query}"),
            PromptPart("text", "Stored SOP:\n" + "\n".join(record.sop)),
        ),
        Decoding(temperature=0.0),
    )
    try:
        doc = json.loads(gateway.complete(bundle))
        if isinstance(doc, list) and doc and all(isinstance(x, str) for x in doc):
            return tuple(x.strip() for x in doc)
    except (GatewayError, json.JSONDecodeError):
        pass
    return record.sop


def _relevant_preferences(
    profile: UserProfile, matched: SopRecord | None, query: str
) -> list[Preference]:
    """Preferences tied to the matched record's source trajectory, or (with no
    match) those whose evidence queries share tokens with the incoming query."""
    if matched is not None:
        linked = [p for p in profile.preferences if matched.source_trajectory_id in p.evidence]
        if linked:
            return linked
    q = set(tokenize(query))
    return [
        p for p in profile.preferences
        if q & set(tokenize(p.topic)) or q & set(tokenize(p.value))
    ]


def _rewrite_with_preferences(query: str, preferences: list[Preference], gateway) -> str:
    if not preferences:
        return query
    if gateway is not None:
        bundle = PromptBundle(
            "query_rewriter",
            "Rewrite the query so it names the user's preferences explicitly. "
            "Reply with the rewritten query only.",
            (
                PromptPart("text", f"Query: {query}"),
                PromptPart(
                    "text",
                    "Preferences:\n" + "\n".join(f"- {p.topic}: {p.value}" for p in preferences),
                ),
            ),
            Decoding(temperature=0.0),
        )
        try:
            rewritten = gateway.complete(bundle).strip()
            if rewritten:
                return rewritten
        except GatewayError:
            logger.warning("query rewriter unavailable; using rule rewrite")
    values = "; ".join(p.value for p in preferences)
    return f"{query} (user preference: {values})"


def personalize(
    query: str,
    user_id: str,
    store: PersonaStore,
    gateway=None,
) -> PersonalizedQuery:
    """Rewrite a query and produce an SOP from the user's knowledge bases."""
    records, profile = store.load(user_id)
    matched, score = match_sop_record(query, records)
    sop: tuple[str, ...] = ()
    matched_id = None
    if matched is not None and score > 0.0:
        sop = _adapt_sop(query, matched, gateway)
        matched_id = matched.id
    else:
        matched = None
    preferences = _relevant_preferences(profile, matched, query)
    rewritten = _rewrite_with_preferences(query, preferences, gateway)
    return PersonalizedQuery(
        original=query,
        rewritten=rewritten,
        sop=sop,
        matched_record_id=matched_id,
    )
