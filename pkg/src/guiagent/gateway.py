"""Uniform backend for every model-driven role.

Two interchangeable backends sit behind ``complete(bundle) -> text``: a live
HTTP chat-completion client and a deterministic scripted mock that lets the
whole stack run offline. Scripts match on role name and prompt content;
rules consume their responses in order, so multi-turn flows are expressible.
"""

from __future__ import annotations

import json
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

REGISTERED_ROLES = frozenset({
    "executor",
    "action_reflector",
    "trajectory_reflector",
    "global_reflector",
    "task_classifier",
    "task_decomposer",
    "memory_extractor",
    "task_rewriter",
    "query_expander",
    "augment_judge",
    "trajectory_discriminator",
    "sop_extractor",
    "profile_extractor",
    "query_rewriter",
    "trust_judge",
})


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    pass


class GatewayTimeout(TransportError):
    pass


class ScriptExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class PromptPart:
    kind: str  # text | snapshot
    text: str


@dataclass(frozen=True)
class PromptBundle:
    role_name: str
    system_text: str
    user_parts: tuple[PromptPart, ...]
    decoding: Decoding = Decoding()

    def __post_init__(self):
        if self.role_name not in REGISTERED_ROLES:
            raise ValueError(f"unregistered role {self.role_name!r}")

    def user_text(self) -> str:
        return "\n".join(p.text for p in self.user_parts)

    def full_text(self) -> str:
        return self.system_text + "\n" + self.user_text()


@dataclass
class ScriptRule:
    role: str | None = None
    contains: str | None = None
    regex: str | None = None
    responses: list[str] = field(default_factory=list)
    cycle: bool = False
    raise_error: str | None = None  # "transport" | "timeout" to simulate failures

    def matches(self, bundle: PromptBundle) -> bool:
        if self.role is not None and self.role != bundle.role_name:
            return False
        text = bundle.full_text()
        if self.contains is not None and self.contains not in text:
            return False
        if self.regex is not None and re.search(self.regex, text) is None:
            return False
        return True


@dataclass
class BackendScript:
    rules: list[ScriptRule] = field(default_factory=list)
    default_response: str | None = None

    def __post_init__(self):
        if not self.rules and self.default_response is None:
            raise ValueError("script needs at least one rule or a default response")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "BackendScript":
        rules = [
            ScriptRule(
                role=r.get("role"),
                contains=r.get("contains"),
                regex=r.get("regex"),
                responses=list(r.get("responses", [])),
                cycle=bool(r.get("cycle", False)),
                raise_error=r.get("raise_error"),
            )
            for r in doc.get("rules", [])
        ]
        return cls(rules=rules, default_response=doc.get("default_response"))

    @classmethod
    def from_file(cls, path: str | Path) -> "BackendScript":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class Backend:
    def complete(self, bundle: PromptBundle) -> str:
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Pure function of (script, call sequence): the first matching rule with
    an unconsumed response answers; exhausted rules are skipped; otherwise the
    default answers; otherwise ScriptExhausted."""

    def __init__(self, script: BackendScript):
        self.script = script
        self._counts = [0] * len(script.rules)
        self._lock = threading.Lock()
        self.calls: list[dict[str, Any]] = []

    def complete(self, bundle: PromptBundle) -> str:
        with self._lock:
            for i, rule in enumerate(self.script.rules):
                if not rule.matches(bundle):
                    continue
                if rule.raise_error == "timeout":
                    raise GatewayTimeout(f"scripted timeout for role {bundle.role_name}")
                if rule.raise_error == "transport":
                    raise TransportError(f"scripted transport failure for role {bundle.role_name}")
                n = self._counts[i]
                if rule.cycle and rule.responses:
                    response = rule.responses[n % len(rule.responses)]
                elif n < len(rule.responses):
                    response = rule.responses[n]
                else:
                    continue  # exhausted; try later rules
                self._counts[i] += 1
                self.calls.append({"role": bundle.role_name, "rule": i})
                return response
            if self.script.default_response is not None:
                self.calls.append({"role": bundle.role_name, "rule": None})
                return self.script.default_response
        raise ScriptExhausted(f"no scripted response for role {bundle.role_name!r}")


@dataclass
class HttpGatewayConfig:
    url: str
    model: str = "default"
    token: str | None = None
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5


class HttpBackend(Backend):
    """Chat-completion style HTTP client with bounded retry on transient
    transport failures. Structured snapshot parts travel as serialized text."""

    def __init__(self, config: HttpGatewayConfig):
        self.config = config

    def _request(self, payload: dict[str, Any]) -> dict[str, Any]:
        data = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.config.token:
            headers["Authorization"] = f"Bearer {self.config.token}"
        req = urllib.request.Request(self.config.url, data=data, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def complete(self, bundle: PromptBundle) -> str:
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text()},
            ],
            "temperature": bundle.decoding.temperature,
            "max_tokens": bundle.decoding.max_tokens,
        }
        if bundle.decoding.seed is not None:
            payload["seed"] = bundle.decoding.seed
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                doc = self._request(payload)
                return doc["choices"][0]["message"]["content"]
            except urllib.error.HTTPError as e:
                if e.code >= 500 and attempt < self.config.retries:
                    last_error = e
                else:
                    raise TransportError(f"HTTP {e.code} from model endpoint") from e
            except (urllib.error.URLError, TimeoutError, OSError) as e:
                last_error = e
            except (KeyError, IndexError, json.JSONDecodeError) as e:
                raise TransportError(f"malformed model endpoint response: {e}") from e
            if attempt < self.config.retries:
                time.sleep(self.config.backoff * (2 ** attempt))
        raise TransportError(f"model endpoint unreachable: {last_error}")


def scripted(doc_or_path: Any) -> ScriptedBackend:
    """Build a ScriptedBackend from a dict, a script file path, or a script."""
    if isinstance(doc_or_path, BackendScript):
        return ScriptedBackend(doc_or_path)
    if isinstance(doc_or_path, dict):
        return ScriptedBackend(BackendScript.from_dict(doc_or_path))
    return ScriptedBackend(BackendScript.from_file(doc_or_path))
