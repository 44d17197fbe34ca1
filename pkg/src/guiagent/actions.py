"""Typed action vocabulary, the three-part response format, and its wire encoding.

An agent turn is three tagged blocks::

    <thinking> free-form reasoning </thinking>
    <summary> one sentence describing the action </summary>
    <action> {"action": "click", "coordinate": [120, 340]} </action>

``parse_response`` is total: it returns either a :class:`ModelResponse` or a
:class:`ParseFailure` describing what was missing or malformed, and never
raises on arbitrary input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Optional, Union

SYSTEM_BUTTONS = ("Back", "Home", "Menu", "Enter")
TERMINATE_STATUSES = ("success", "failure")

# kind -> ordered parameter names (order fixes the canonical serialization)
PARAMETER_TABLE: dict[str, tuple[str, ...]] = {
    "click": ("coordinate",),
    "long_press": ("coordinate", "time"),
    "swipe": ("coordinate", "coordinate2"),
    "type": ("text",),
    "clear_text": (),
    "system_button": ("button",),
    "open": ("text",),
    "wait": ("time",),
    "answer": ("text",),
    "terminate": ("status",),
    "ask": ("text",),
}

ACTION_KINDS = tuple(PARAMETER_TABLE)

COORDINATE_KINDS = frozenset({"click", "long_press", "swipe"})
TEXT_KINDS = frozenset({"type", "open", "answer", "ask"})


class ActionError(ValueError):
    """Invalid action construction or decoding."""

    def __init__(self, reason: str, param: str | None = None, kind: str | None = None):
        super().__init__(reason)
        self.reason = reason
        self.param = param
        self.kind = kind


class UnknownActionKind(ActionError):
    pass


class BadParameter(ActionError):
    pass


@dataclass(frozen=True)
class Coordinate:
    """Integer pixel position, origin at top-left. Components must be >= 0."""

    x: int
    y: int

    def __post_init__(self):
        for name, v in (("x", self.x), ("y", self.y)):
            if isinstance(v, bool) or not isinstance(v, int):
                raise BadParameter(f"coordinate {name} must be an integer", param="coordinate")
            if v < 0:
                raise BadParameter(f"coordinate {name} must be non-negative", param="coordinate")

    def as_list(self) -> list[int]:
        return [self.x, self.y]


@dataclass(frozen=True)
class Action:
    """One validated action. Exactly the parameters of its kind are set."""

    kind: str
    coordinate: Optional[Coordinate] = None
    coordinate2: Optional[Coordinate] = None
    time: Optional[float] = None
    text: Optional[str] = None
    button: Optional[str] = None
    status: Optional[str] = None

    def __post_init__(self):
        if self.kind not in PARAMETER_TABLE:
            raise UnknownActionKind(f"unknown action kind {self.kind!r}", kind=self.kind)
        required = PARAMETER_TABLE[self.kind]
        for name in ("coordinate", "coordinate2", "time", "text", "button", "status"):
            value = getattr(self, name)
            if name in required:
                if value is None:
                    raise BadParameter(f"{self.kind} requires parameter {name!r}", param=name)
            elif value is not None:
                raise BadParameter(f"{self.kind} does not take parameter {name!r}", param=name)
        if self.time is not None:
            if isinstance(self.time, bool) or not isinstance(self.time, (int, float)):
                raise BadParameter("time must be a number", param="time")
            if self.time <= 0:
                raise BadParameter("time must be > 0 seconds", param="time")
        if self.text is not None and not isinstance(self.text, str):
            raise BadParameter("text must be a string", param="text")
        if self.button is not None and self.button not in SYSTEM_BUTTONS:
            raise BadParameter(
                f"button must be one of {SYSTEM_BUTTONS}, got {self.button!r}", param="button"
            )
        if self.status is not None and self.status not in TERMINATE_STATUSES:
            raise BadParameter(
                f"status must be one of {TERMINATE_STATUSES}, got {self.status!r}", param="status"
            )

    def to_wire(self) -> dict[str, Any]:
        """Wire-format dict: {"action": kind, <params>} with coordinates as [x, y]."""
        obj: dict[str, Any] = {"action": self.kind}
        for name in PARAMETER_TABLE[self.kind]:
            value = getattr(self, name)
            if isinstance(value, Coordinate):
                value = value.as_list()
            obj[name] = value
        return obj


# Constructor helpers; these keep fixtures and tests readable.

def click(x: int, y: int) -> Action:
    return Action("click", coordinate=Coordinate(x, y))


def long_press(x: int, y: int, seconds: float) -> Action:
    return Action("long_press", coordinate=Coordinate(x, y), time=seconds)


def swipe(x1: int, y1: int, x2: int, y2: int) -> Action:
    return Action("swipe", coordinate=Coordinate(x1, y1), coordinate2=Coordinate(x2, y2))


def type_text(text: str) -> Action:
    return Action("type", text=text)


def clear_text() -> Action:
    return Action("clear_text")


def system_button(button: str) -> Action:
    return Action("system_button", button=button)


def open_app(name: str) -> Action:
    return Action("open", text=name)


def wait(seconds: float) -> Action:
    return Action("wait", time=seconds)


def answer(text: str) -> Action:
    return Action("answer", text=text)


def terminate(status: str) -> Action:
    return Action("terminate", status=status)


def ask(question: str) -> Action:
    return Action("ask", text=question)


@dataclass(frozen=True)
class ModelResponse:
    """A successfully parsed three-part response. ``raw`` is kept verbatim."""

    thought: str
    action_summary: str
    action: Action
    raw: str


@dataclass(frozen=True)
class ParseFailure:
    """Why a response failed to parse; drives the format reward to 0.

    kind is one of: missing_section, malformed_structure, malformed_action,
    unknown_action_kind, bad_parameter.
    """

    kind: str
    detail: str
    raw: str
    section: str | None = None  # thought | summary | action, for missing_section
    param: str | None = None  # offending parameter, for bad_parameter


SECTION_TAGS = (("thought", "thinking"), ("summary", "summary"), ("action", "action"))

_BLOCK_RES = {
    tag: re.compile(rf"<{tag}>(.*?)</{tag}>", re.DOTALL) for _, tag in SECTION_TAGS
}


def _decode_coordinate(value: Any, name: str) -> Coordinate:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or any(isinstance(v, bool) or not isinstance(v, int) for v in value)
    ):
        raise BadParameter(f"{name} must be a two-element integer array", param=name)
    return Coordinate(value[0], value[1])


def decode_action(obj: Any) -> Action:
    """Decode a wire-format dict into a validated Action.

    Raises UnknownActionKind / BadParameter / ActionError on violations,
    including extraneous parameters.
    """
    if not isinstance(obj, dict):
        raise ActionError("action block must hold a single JSON object")
    if "action" not in obj:
        raise ActionError("missing 'action' field naming the kind")
    kind = obj["action"]
    if not isinstance(kind, str) or kind not in PARAMETER_TABLE:
        raise UnknownActionKind(f"unknown action kind {kind!r}", kind=str(kind))
    required = PARAMETER_TABLE[kind]
    for key in obj:
        if key != "action" and key not in required:
            raise BadParameter(f"{kind} does not take parameter {key!r}", param=key)
    params: dict[str, Any] = {}
    for name in required:
        if name not in obj:
            raise BadParameter(f"{kind} requires parameter {name!r}", param=name)
        value = obj[name]
        if name in ("coordinate", "coordinate2"):
            value = _decode_coordinate(value, name)
        params[name] = value
    return Action(kind, **params)


def parse_action(text: str) -> Action:
    """Decode a serialized action string (inverse of serialize_action)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ActionError(f"invalid JSON: {e}") from e
    return decode_action(obj)


def serialize_action(action: Action) -> str:
    """Canonical key-ordered wire encoding; parse_action inverts it exactly."""
    return json.dumps(action.to_wire(), separators=(", ", ": "))


def _classify_action_error(e: ActionError, raw: str) -> ParseFailure:
    if isinstance(e, UnknownActionKind):
        return ParseFailure("unknown_action_kind", e.reason, raw)
    if isinstance(e, BadParameter):
        return ParseFailure("bad_parameter", e.reason, raw, param=e.param)
    return ParseFailure("malformed_action", e.reason, raw)


def parse_response(raw: str) -> Union[ModelResponse, ParseFailure]:
    """Parse a three-part model response; total over arbitrary input.

    The three tagged blocks must appear in order (thinking, summary, action).
    Whitespace around and between blocks is tolerated, plus at most one
    non-empty trailing commentary line after the action block.
    """
    if not isinstance(raw, str):
        return ParseFailure("malformed_structure", "response is not text", raw=str(raw))
    matches: dict[str, re.Match] = {}
    for section, tag in SECTION_TAGS:
        m = _BLOCK_RES[tag].search(raw)
        if m is None:
            return ParseFailure(
                "missing_section", f"missing <{tag}> section", raw, section=section
            )
        matches[section] = m

    spans = [matches[section].span() for section, _ in SECTION_TAGS]
    if not (spans[0][1] <= spans[1][0] and spans[1][1] <= spans[2][0]):
        return ParseFailure(
            "malformed_structure", "sections out of order", raw
        )
    if raw[: spans[0][0]].strip() or raw[spans[0][1]:spans[1][0]].strip() \
            or raw[spans[1][1]:spans[2][0]].strip():
        return ParseFailure(
            "malformed_structure", "unexpected content outside the tagged sections", raw
        )
    trailing = [ln for ln in raw[spans[2][1]:].splitlines() if ln.strip()]
    if len(trailing) > 1:
        return ParseFailure(
            "malformed_structure",
            "more than one trailing commentary line after the action block",
            raw,
        )

    action_text = matches["action"].group(1).strip()
    try:
        obj = json.loads(action_text)
    except json.JSONDecodeError as e:
        return ParseFailure("malformed_action", f"action block is not valid JSON: {e}", raw)
    try:
        action = decode_action(obj)
    except ActionError as e:
        return _classify_action_error(e, raw)

    return ModelResponse(
        thought=matches["thought"].group(1).strip(),
        action_summary=matches["summary"].group(1).strip(),
        action=action,
        raw=raw,
    )


def render_response(thought: str, summary: str, action: Action) -> str:
    """Compose a well-formed three-part response (used by fixtures and scripts)."""
    return (
        f"<thinking>{thought}</thinking>\n"
        f"<summary>{summary}</summary>\n"
        f"<action>{serialize_action(action)}</action>"
    )
