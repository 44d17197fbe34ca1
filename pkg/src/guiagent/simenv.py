"""Deterministic scriptable mobile environment.

Apps are screen graphs of widgets; actions drive declared transitions.
Observations are structured widget trees (``ScreenSnapshot``), not pixels:
every method the agent stack needs (hit testing, grounding rewards,
reflection diffs) operates on bounding boxes.

Determinism contract: a fixed (scenario, task, seed, action sequence)
produces a bit-identical trajectory log, hence identical log hashes across
processes and platforms.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .actions import Action, serialize_action

WIDGET_KINDS = ("button", "text_field", "label", "list_item", "toggle", "icon")

# State keys the environment maintains itself; predicates may reference them.
BUILTIN_STATE_KEYS = ("current_app", "current_screen", "last_answer")


class ScenarioError(Exception):
    pass


class SchemaError(ScenarioError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class DanglingTransition(ScenarioError):
    pass


class UnknownStateKey(ScenarioError):
    pass


class EnvError(Exception):
    pass


class UnknownTask(EnvError):
    pass


class UnknownApp(EnvError):
    pass


class NoFocusedField(EnvError):
    pass


class FrozenEnv(EnvError):
    pass


@dataclass(frozen=True)
class Widget:
    id: str
    kind: str
    text: str
    bbox: tuple[int, int, int, int]  # (left, top, right, bottom)
    state: dict[str, Any] = field(default_factory=dict)
    state_key: str | None = None  # scenario state key mirroring a text field's content

    def contains(self, x: int, y: int) -> bool:
        l, t, r, b = self.bbox
        return l <= x < r and t <= y < b

    def center(self) -> tuple[int, int]:
        l, t, r, b = self.bbox
        return ((l + r) // 2, (t + b) // 2)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "kind": self.kind,
            "text": self.text,
            "bbox": list(self.bbox),
        }
        if self.state:
            d["state"] = dict(sorted(self.state.items()))
        return d


@dataclass(frozen=True)
class ScreenSnapshot:
    """Immutable structured observation of the current screen."""

    app: str
    screen_id: str
    widgets: tuple[Widget, ...]
    screen_width: int
    screen_height: int
    step_index: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "app": self.app,
            "screen_id": self.screen_id,
            "screen_width": self.screen_width,
            "screen_height": self.screen_height,
            "step_index": self.step_index,
            "widgets": [w.to_dict() for w in self.widgets],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def widget_at(self, x: int, y: int) -> Widget | None:
        """Topmost widget containing the point; later in the list is on top."""
        for w in reversed(self.widgets):
            if w.contains(x, y):
                return w
        return None

    def find_widget(self, widget_id: str) -> Widget | None:
        for w in self.widgets:
            if w.id == widget_id:
                return w
        return None

    def layout_equal(self, other: "ScreenSnapshot") -> bool:
        """Equality ignoring step_index; used to detect no-effect actions."""
        a, b = self.to_dict(), other.to_dict()
        a.pop("step_index")
        b.pop("step_index")
        return a == b


@dataclass(frozen=True)
class EnvOutcome:
    status: str  # ongoing | success | failure
    reason: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"status": self.status, "reason": self.reason}


def snapshot_from_dict(d: dict[str, Any]) -> ScreenSnapshot:
    return ScreenSnapshot(
        app=d["app"],
        screen_id=d["screen_id"],
        widgets=tuple(
            Widget(
                w["id"], w["kind"], w.get("text", ""), tuple(w["bbox"]),
                dict(w.get("state", {})), w.get("state_key"),
            )
            for w in d["widgets"]
        ),
        screen_width=d["screen_width"],
        screen_height=d["screen_height"],
        step_index=d["step_index"],
    )


# --- success predicates -----------------------------------------------------

_PREDICATE_OPS = ("eq", "ne", "lt", "le", "gt", "ge", "and", "or", "not", "contains", "always")


@dataclass(frozen=True)
class Predicate:
    op: str
    key: str | None = None
    value: Any = None
    args: tuple["Predicate", ...] = ()

    def evaluate(self, state: dict[str, Any]) -> bool:
        if self.op == "always":
            return bool(self.value)
        if self.op == "and":
            return all(a.evaluate(state) for a in self.args)
        if self.op == "or":
            return any(a.evaluate(state) for a in self.args)
        if self.op == "not":
            return not self.args[0].evaluate(state)
        current = state.get(self.key)
        if self.op == "eq":
            return current == self.value
        if self.op == "ne":
            return current != self.value
        if self.op == "contains":
            return isinstance(current, (list, tuple, str)) and self.value in current
        try:
            if self.op == "lt":
                return current < self.value
            if self.op == "le":
                return current <= self.value
            if self.op == "gt":
                return current > self.value
            if self.op == "ge":
                return current >= self.value
        except TypeError:
            return False
        raise AssertionError(self.op)

    def referenced_keys(self) -> set[str]:
        keys = {self.key} if self.key is not None else set()
        for a in self.args:
            keys |= a.referenced_keys()
        return keys


def _parse_predicate(obj: Any, path: str) -> Predicate:
    if not isinstance(obj, dict) or "op" not in obj:
        raise SchemaError(path, "predicate must be an object with an 'op' field")
    op = obj["op"]
    if op not in _PREDICATE_OPS:
        raise SchemaError(path, f"unknown predicate op {op!r}")
    if op in ("and", "or"):
        args = obj.get("args")
        if not isinstance(args, list) or not args:
            raise SchemaError(path, f"{op} needs a non-empty 'args' list")
        return Predicate(op, args=tuple(_parse_predicate(a, f"{path}.args[{i}]") for i, a in enumerate(args)))
    if op == "not":
        if "arg" not in obj:
            raise SchemaError(path, "not needs an 'arg'")
        return Predicate(op, args=(_parse_predicate(obj["arg"], f"{path}.arg"),))
    if op == "always":
        return Predicate(op, value=obj.get("value", True))
    if "key" not in obj or "value" not in obj:
        raise SchemaError(path, f"{op} needs 'key' and 'value'")
    return Predicate(op, key=obj["key"], value=obj["value"])


# --- scenario structure -----------------------------------------------------

@dataclass(frozen=True)
class Transition:
    on: str  # click | long_press | system_button
    widget: str | None = None
    button: str | None = None
    goto: str | None = None  # "App:screen"
    set: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ScreenDef:
    id: str
    pages: tuple[tuple[Widget, ...], ...]  # page 0 is the unscrolled view
    transitions: tuple[Transition, ...]
    scroll_axis: str = "vertical"  # axis the screen pages along


@dataclass(frozen=True)
class AppDef:
    name: str
    entry: str
    screens: dict[str, ScreenDef]


@dataclass(frozen=True)
class TaskDef:
    id: str
    instruction: str
    success: Predicate
    reset: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Equivalence:
    """A declared pair of interchangeable actions for multi-path augmentation."""

    click_screen: str  # "App:screen"
    click_widget: str
    open_target: str | None = None
    system_button: str | None = None


@dataclass(frozen=True)
class Ambiguity:
    marker: str
    question: str


@dataclass(frozen=True)
class Scenario:
    name: str
    screen_width: int
    screen_height: int
    home: str  # "App:screen"
    apps: dict[str, AppDef]
    tasks: dict[str, TaskDef]
    initial_state: dict[str, Any]
    start_screens: tuple[str, ...]
    equivalences: tuple[Equivalence, ...] = ()
    ambiguities: tuple[Ambiguity, ...] = ()
    declared_keys: frozenset[str] = frozenset()

    def task(self, task_id: str) -> TaskDef:
        if task_id not in self.tasks:
            raise UnknownTask(f"unknown task {task_id!r}")
        return self.tasks[task_id]

    def screen(self, ref: str) -> tuple[AppDef, ScreenDef]:
        app_name, _, screen_id = ref.partition(":")
        app = self.apps.get(app_name)
        if app is None or screen_id not in app.screens:
            raise ScenarioError(f"unknown screen reference {ref!r}")
        return app, app.screens[screen_id]

    def resolve_app(self, name: str) -> AppDef | None:
        lowered = name.lower()
        for app in self.apps.values():
            if app.name.lower() == lowered:
                return app
        return None


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise SchemaError(path, f"missing required field {key!r}")
    return obj[key]


def _parse_widget(obj: Any, path: str, width: int, height: int) -> Widget:
    if not isinstance(obj, dict):
        raise SchemaError(path, "widget must be an object")
    wid = _require(obj, "id", path)
    kind = _require(obj, "kind", path)
    if kind not in WIDGET_KINDS:
        raise SchemaError(path, f"unknown widget kind {kind!r}")
    bbox = _require(obj, "bbox", path)
    if not (isinstance(bbox, list) and len(bbox) == 4 and all(isinstance(v, int) for v in bbox)):
        raise SchemaError(path, "bbox must be [left, top, right, bottom] integers")
    l, t, r, b = bbox
    if not (l < r and t < b):
        raise SchemaError(path, f"degenerate bbox {bbox}")
    if l < 0 or t < 0 or r > width or b > height:
        raise SchemaError(path, f"bbox {bbox} outside the {width}x{height} screen")
    return Widget(
        id=wid,
        kind=kind,
        text=obj.get("text", ""),
        bbox=(l, t, r, b),
        state=dict(obj.get("state", {})),
        state_key=obj.get("state_key"),
    )


def _parse_transition(obj: Any, path: str) -> Transition:
    if not isinstance(obj, dict):
        raise SchemaError(path, "transition must be an object")
    on = _require(obj, "on", path)
    if on not in ("click", "long_press", "system_button"):
        raise SchemaError(path, f"unsupported trigger {on!r}")
    if on == "system_button":
        if "button" not in obj:
            raise SchemaError(path, "system_button trigger needs 'button'")
    elif "widget" not in obj:
        raise SchemaError(path, f"{on} trigger needs 'widget'")
    return Transition(
        on=on,
        widget=obj.get("widget"),
        button=obj.get("button"),
        goto=obj.get("goto"),
        set=dict(obj.get("set", {})),
    )


def _set_op_keys(update: dict[str, Any]) -> Iterable[str]:
    for key, value in update.items():
        yield key
        if isinstance(value, dict) and "$append_key" in value:
            yield value["$append_key"]


def load_scenario(source: Any) -> Scenario:
    """Validate and load a scenario from a dict, JSON text, or file path.

    Every structural invariant is checked here so the environment can trust
    its inputs: widget bboxes inside screen bounds and non-degenerate, ids
    unique per screen, transition targets existing (DanglingTransition), and
    success predicates restricted to declared state keys (UnknownStateKey).
    """
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    elif isinstance(source, str):
        doc = json.loads(source)
    else:
        doc = source
    if not isinstance(doc, dict):
        raise SchemaError("$", "scenario document must be an object")

    width = _require(doc, "screen_width", "$")
    height = _require(doc, "screen_height", "$")
    apps_doc = _require(doc, "apps", "$")
    if not isinstance(apps_doc, dict) or not apps_doc:
        raise SchemaError("$.apps", "must be a non-empty object")

    apps: dict[str, AppDef] = {}
    for app_name, app_obj in apps_doc.items():
        app_path = f"$.apps.{app_name}"
        screens_doc = _require(app_obj, "screens", app_path)
        entry = _require(app_obj, "entry", app_path)
        screens: dict[str, ScreenDef] = {}
        for screen_id, s_obj in screens_doc.items():
            s_path = f"{app_path}.screens.{screen_id}"
            widgets = [
                _parse_widget(w, f"{s_path}.widgets[{i}]", width, height)
                for i, w in enumerate(s_obj.get("widgets", []))
            ]
            pages: list[tuple[Widget, ...]] = [tuple(widgets)]
            for p_i, page in enumerate(s_obj.get("pages", [])):
                pages.append(
                    tuple(
                        _parse_widget(w, f"{s_path}.pages[{p_i}][{i}]", width, height)
                        for i, w in enumerate(page)
                    )
                )
            seen: set[str] = set()
            for page in pages:
                page_ids = [w.id for w in page]
                dupes = {i for i in page_ids if page_ids.count(i) > 1}
                if dupes:
                    raise SchemaError(s_path, f"duplicate widget ids {sorted(dupes)}")
                seen.update(page_ids)
            transitions = tuple(
                _parse_transition(t, f"{s_path}.transitions[{i}]")
                for i, t in enumerate(s_obj.get("transitions", []))
            )
            for i, tr in enumerate(transitions):
                if tr.widget is not None and tr.widget not in seen:
                    raise SchemaError(
                        f"{s_path}.transitions[{i}]", f"unknown widget {tr.widget!r}"
                    )
            screens[screen_id] = ScreenDef(
                id=screen_id,
                pages=tuple(pages),
                transitions=transitions,
                scroll_axis=s_obj.get("scroll_axis", "vertical"),
            )
        if entry not in screens:
            raise SchemaError(app_path, f"entry screen {entry!r} not defined")
        apps[app_name] = AppDef(name=app_name, entry=entry, screens=screens)

    def check_ref(ref: str, path: str):
        app_name, _, screen_id = ref.partition(":")
        if app_name not in apps or screen_id not in apps[app_name].screens:
            raise DanglingTransition(f"{path}: target screen {ref!r} does not exist")

    home = doc.get("home")
    if home is None:
        first_app = next(iter(apps.values()))
        home = f"{first_app.name}:{first_app.entry}"
    check_ref(home, "$.home")

    declared: set[str] = set(BUILTIN_STATE_KEYS)
    initial_state = dict(doc.get("initial_state", {}))
    declared.update(initial_state)
    for app in apps.values():
        for screen in app.screens.values():
            for page in screen.pages:
                for w in page:
                    if w.state_key:
                        declared.add(w.state_key)
            for i, tr in enumerate(screen.transitions):
                if tr.goto is not None:
                    check_ref(tr.goto, f"$.apps.{app.name}.screens.{screen.id}.transitions[{i}]")
                declared.update(_set_op_keys(tr.set))

    tasks: dict[str, TaskDef] = {}
    for i, t_obj in enumerate(doc.get("tasks", [])):
        t_path = f"$.tasks[{i}]"
        tid = _require(t_obj, "id", t_path)
        predicate = _parse_predicate(_require(t_obj, "success", t_path), f"{t_path}.success")
        reset = dict(t_obj.get("reset", {}))
        declared.update(reset)
        tasks[tid] = TaskDef(
            id=tid,
            instruction=_require(t_obj, "instruction", t_path),
            success=predicate,
            reset=reset,
        )
    for tid, task in tasks.items():
        unknown = task.success.referenced_keys() - declared
        if unknown:
            raise UnknownStateKey(
                f"task {tid!r} predicate references undeclared keys {sorted(unknown)}"
            )

    start_screens = tuple(doc.get("start_screens", [home]))
    for i, ref in enumerate(start_screens):
        check_ref(ref, f"$.start_screens[{i}]")

    equivalences = []
    for i, e_obj in enumerate(doc.get("equivalences", [])):
        e_path = f"$.equivalences[{i}]"
        click = _require(e_obj, "click", e_path)
        ref = _require(click, "screen", e_path)
        check_ref(ref, e_path)
        widget_id = _require(click, "widget", e_path)
        _, screen = Scenario(
            name="", screen_width=width, screen_height=height, home=home,
            apps=apps, tasks={}, initial_state={}, start_screens=(),
        ).screen(ref)
        if not any(w.id == widget_id for page in screen.pages for w in page):
            raise SchemaError(e_path, f"widget {widget_id!r} not on screen {ref!r}")
        equivalences.append(
            Equivalence(
                click_screen=ref,
                click_widget=widget_id,
                open_target=e_obj.get("open"),
                system_button=e_obj.get("system_button"),
            )
        )

    ambiguities = tuple(
        Ambiguity(marker=_require(a, "marker", f"$.ambiguities[{i}]"),
                  question=_require(a, "question", f"$.ambiguities[{i}]"))
        for i, a in enumerate(doc.get("ambiguities", []))
    )

    return Scenario(
        name=doc.get("name", "scenario"),
        screen_width=width,
        screen_height=height,
        home=home,
        apps=apps,
        tasks=tasks,
        initial_state=initial_state,
        start_screens=start_screens,
        equivalences=tuple(equivalences),
        ambiguities=ambiguities,
        declared_keys=frozenset(declared),
    )


# --- the environment --------------------------------------------------------

def swipe_direction(dx: int, dy: int) -> str:
    """Dominant-axis direction of a displacement; ties resolve vertically."""
    if dx == 0 and dy == 0:
        return "none"
    if abs(dy) >= abs(dx):
        return "up" if dy < 0 else "down"
    return "left" if dx < 0 else "right"


class SimEnv:
    """Single-owner deterministic environment instance.

    Instances are stepped sequentially by one caller; run many instances for
    concurrency. ``reset`` fully restores the scenario's initial state plus
    the task's reset list, so reset;reset == reset.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._task: TaskDef | None = None
        self._seed = 0
        self.state: dict[str, Any] = {}
        self._log: list[dict[str, Any]] = []
        self._frozen = False
        self._terminate_status: str | None = None
        self._pending_question: str | None = None
        self._focus: tuple[str, str, str] | None = None  # (app, screen, widget_id)
        self._scroll: dict[tuple[str, str], int] = {}
        self._field_text: dict[tuple[str, str, str], str] = {}
        self._current: tuple[str, str] = ("", "")
        self._step_index = 0

    # -- lifecycle

    def reset(self, task_id: str, seed: int = 0, start_screen: str | None = None) -> ScreenSnapshot:
        task = self.scenario.task(task_id)
        self._task = task
        self._seed = seed
        self.state = copy.deepcopy(self.scenario.initial_state)
        self.state.update(copy.deepcopy(task.reset))
        self._frozen = False
        self._terminate_status = None
        self._pending_question = None
        self._focus = None
        self._scroll = {}
        self._field_text = {}
        self._step_index = 0
        ref = start_screen or self.scenario.home
        self._goto(ref)
        self._log = [{
            "record": "reset",
            "scenario": self.scenario.name,
            "task": task_id,
            "seed": seed,
            "start": ref,
            "snapshot": self.snapshot().digest(),
        }]
        return self.snapshot()

    def resume(self):
        """Unfreeze after a terminate (global-reflector resume / next atomic task)."""
        self._frozen = False
        self._terminate_status = None

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def pending_question(self) -> str | None:
        return self._pending_question

    def clear_pending_question(self):
        self._pending_question = None

    @property
    def task(self) -> TaskDef:
        if self._task is None:
            raise EnvError("environment has not been reset")
        return self._task

    # -- observation

    def _current_screen(self) -> tuple[AppDef, ScreenDef]:
        app = self.scenario.apps[self._current[0]]
        return app, app.screens[self._current[1]]

    def _visible_widgets(self) -> tuple[Widget, ...]:
        app, screen = self._current_screen()
        page = self._scroll.get(self._current, 0)
        widgets = screen.pages[min(page, len(screen.pages) - 1)]
        out = []
        for w in widgets:
            state = dict(w.state)
            key = (app.name, screen.id, w.id)
            if w.kind == "text_field":
                if key in self._field_text:
                    state["text_value"] = self._field_text[key]
                if self._focus == key:
                    state["focused"] = True
            if w.kind == "toggle" and w.state_key:
                state["on"] = bool(self.state.get(w.state_key))
            out.append(Widget(w.id, w.kind, w.text, w.bbox, state, w.state_key))
        return tuple(out)

    def snapshot(self) -> ScreenSnapshot:
        return ScreenSnapshot(
            app=self._current[0],
            screen_id=self._current[1],
            widgets=self._visible_widgets(),
            screen_width=self.scenario.screen_width,
            screen_height=self.scenario.screen_height,
            step_index=self._step_index,
        )

    # -- success evaluation

    def success_check(self) -> EnvOutcome:
        """Evaluate the task predicate without mutating anything."""
        holds = self.task.success.evaluate(self.state)
        if holds:
            return EnvOutcome("success", "success predicate holds")
        if self._frozen:
            reason = "terminated without satisfying the success predicate"
            if self._terminate_status == "failure":
                reason = "agent declared failure"
            return EnvOutcome("failure", reason)
        return EnvOutcome("ongoing", "success predicate not yet satisfied")

    # -- mutation helpers

    def _goto(self, ref: str):
        app, screen = self.scenario.screen(ref)
        self._current = (app.name, screen.id)
        self._focus = None
        self.state["current_app"] = app.name
        self.state["current_screen"] = screen.id

    def _apply_set(self, update: dict[str, Any]):
        for key, value in update.items():
            if isinstance(value, dict) and "$append" in value:
                self.state.setdefault(key, [])
                self.state[key] = list(self.state[key]) + [value["$append"]]
            elif isinstance(value, dict) and "$append_key" in value:
                self.state.setdefault(key, [])
                self.state[key] = list(self.state[key]) + [self.state.get(value["$append_key"])]
            elif isinstance(value, dict) and "$toggle" in value:
                self.state[key] = not bool(self.state.get(key))
            else:
                self.state[key] = copy.deepcopy(value)

    def _fire_transition(self, on: str, widget_id: str | None = None, button: str | None = None) -> bool:
        _, screen = self._current_screen()
        for tr in screen.transitions:
            if tr.on != on:
                continue
            if on == "system_button":
                if tr.button != button:
                    continue
            elif tr.widget != widget_id:
                continue
            self._apply_set(tr.set)
            if tr.goto is not None:
                self._goto(tr.goto)
            return True
        return False

    def tick(self):
        """Advance step_index without touching state (failed steps still take time)."""
        if self._frozen:
            raise FrozenEnv("environment is frozen after terminate")
        self._step_index += 1

    # -- stepping

    def step(self, action: Action) -> tuple[ScreenSnapshot, EnvOutcome]:
        if self._frozen:
            raise FrozenEnv("environment is frozen after terminate")
        kind = action.kind

        if kind == "ask":
            # Leaves env state untouched and does not advance step_index.
            self._pending_question = action.text
            snap = self.snapshot()
            outcome = self.success_check()
            self._log_step(action, snap, outcome)
            return snap, outcome

        if kind in ("click", "long_press"):
            x, y = action.coordinate.x, action.coordinate.y
            snap = self.snapshot()
            hit = snap.widget_at(x, y)
            if hit is not None:
                app, screen = self._current_screen()
                if hit.kind == "text_field":
                    self._focus = (app.name, screen.id, hit.id)
                self._fire_transition(kind, widget_id=hit.id)
        elif kind == "type":
            self._type_into_focus(action.text, append=True)
        elif kind == "clear_text":
            self._type_into_focus("", append=False)
        elif kind == "swipe":
            self._apply_swipe(action)
        elif kind == "open":
            app = self.scenario.resolve_app(action.text)
            if app is None:
                raise UnknownApp(f"no app named {action.text!r}")
            self._goto(f"{app.name}:{app.entry}")
        elif kind == "system_button":
            fired = self._fire_transition("system_button", button=action.button)
            if not fired and action.button == "Home":
                self._goto(self.scenario.home)
        elif kind == "wait":
            pass
        elif kind == "answer":
            self.state["last_answer"] = action.text
        elif kind == "terminate":
            self._frozen = True
            self._terminate_status = action.status

        self._step_index += 1
        snap = self.snapshot()
        outcome = self.success_check()
        self._log_step(action, snap, outcome)
        return snap, outcome

    def _type_into_focus(self, text: str, append: bool):
        if self._focus is None or self._focus[:2] != self._current:
            raise NoFocusedField("no focused text field on the current screen")
        key = self._focus
        current = self._field_text.get(key, "") if append else ""
        new_value = current + text if append else ""
        self._field_text[key] = new_value
        app, screen = self._current_screen()
        widget = next(
            (w for page in screen.pages for w in page if w.id == key[2]), None
        )
        if widget is not None and widget.state_key:
            self.state[widget.state_key] = new_value

    def _apply_swipe(self, action: Action):
        dx = action.coordinate2.x - action.coordinate.x
        dy = action.coordinate2.y - action.coordinate.y
        direction = swipe_direction(dx, dy)
        _, screen = self._current_screen()
        pages = len(screen.pages)
        if pages <= 1 or direction == "none":
            return
        current = self._scroll.get(self._current, 0)
        # Swiping content toward the start (up/left) reveals the next page.
        if screen.scroll_axis == "vertical":
            delta = 1 if direction == "up" else -1 if direction == "down" else 0
        else:
            delta = 1 if direction == "left" else -1 if direction == "right" else 0
        self._scroll[self._current] = max(0, min(pages - 1, current + delta))

    def _log_step(self, action: Action, snap: ScreenSnapshot, outcome: EnvOutcome):
        self._log.append({
            "record": "step",
            "step_index": snap.step_index,
            "action": serialize_action(action),
            "snapshot": snap.digest(),
            "outcome": outcome.to_dict(),
        })

    # -- trajectory log

    def log_lines(self) -> list[str]:
        return [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in self._log]

    def log_hash(self) -> str:
        return hashlib.sha256("\n".join(self.log_lines()).encode("utf-8")).hexdigest()


def run_actions(
    scenario: Scenario,
    task_id: str,
    seed: int,
    actions: list[Action],
    start_screen: str | None = None,
) -> tuple[SimEnv, EnvOutcome]:
    """Replay a fixed action list from reset; action-level errors are logged
    and consume a step, matching how the executor records them."""
    env = SimEnv(scenario)
    env.reset(task_id, seed, start_screen=start_screen)
    outcome = env.success_check()
    for action in actions:
        if env.frozen:
            break
        try:
            _, outcome = env.step(action)
        except (NoFocusedField, UnknownApp) as e:
            env.tick()
            env._log.append({
                "record": "step_error",
                "step_index": env.snapshot().step_index,
                "action": serialize_action(action),
                "error": type(e).__name__,
            })
            outcome = env.success_check()
    return env, outcome
