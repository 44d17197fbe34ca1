"""Runtime configuration: JSON config file plus environment overrides.

Environment variables (all optional) override file values:
GUIAGENT_GATEWAY_URL, GUIAGENT_GATEWAY_TOKEN, GUIAGENT_GATEWAY_MODEL,
GUIAGENT_GATEWAY_TIMEOUT, GUIAGENT_GATEWAY_RETRIES, GUIAGENT_SCRIPT,
GUIAGENT_MAX_STEPS, GUIAGENT_SERVICE_TOKEN.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import Backend, HttpBackend, HttpGatewayConfig, scripted


@dataclass
class RuntimeConfig:
    gateway_url: str | None = None
    gateway_token: str | None = None
    gateway_model: str = "default"
    gateway_timeout: float = 30.0
    gateway_retries: int = 2
    script_path: str | None = None
    max_steps: int = 30
    parse_retries: int = 1
    rollout_temperature: float = 1.0
    retrieval_k: int = 3
    f1_threshold: float = 0.5
    keep_zero_fraction: float = 0.25
    reflection_window: int = 3
    resume_budget: int = 2
    max_asks_per_run: int = 3
    service_token: str | None = None
    scenario_dirs: list[str] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RuntimeConfig":
        cfg = cls()
        path = path or os.environ.get("GUIAGENT_CONFIG")
        if path and Path(path).exists():
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            for key, value in doc.items():
                if hasattr(cfg, key):
                    setattr(cfg, key, value)
        env = os.environ
        cfg.gateway_url = env.get("GUIAGENT_GATEWAY_URL", cfg.gateway_url)
        cfg.gateway_token = env.get("GUIAGENT_GATEWAY_TOKEN", cfg.gateway_token)
        cfg.gateway_model = env.get("GUIAGENT_GATEWAY_MODEL", cfg.gateway_model)
        cfg.script_path = env.get("GUIAGENT_SCRIPT", cfg.script_path)
        cfg.service_token = env.get("GUIAGENT_SERVICE_TOKEN", cfg.service_token)
        if "GUIAGENT_GATEWAY_TIMEOUT" in env:
            cfg.gateway_timeout = float(env["GUIAGENT_GATEWAY_TIMEOUT"])
        if "GUIAGENT_GATEWAY_RETRIES" in env:
            cfg.gateway_retries = int(env["GUIAGENT_GATEWAY_RETRIES"])
        if "GUIAGENT_MAX_STEPS" in env:
            cfg.max_steps = int(env["GUIAGENT_MAX_STEPS"])
        return cfg

    def build_backend(self, script_path: str | None = None) -> Backend:
        """Scripted backend when a script is given, else the live HTTP one."""
        script = script_path or self.script_path
        if script:
            return scripted(script)
        if not self.gateway_url:
            raise ValueError("no backend configured: set a script path or a gateway URL")
        return HttpBackend(
            HttpGatewayConfig(
                url=self.gateway_url,
                model=self.gateway_model,
                token=self.gateway_token,
                timeout=self.gateway_timeout,
                retries=self.gateway_retries,
            )
        )
