"""Operational shell: CLI, HTTP session service, and run persistence."""

from .sessions import SessionManager, SessionRequest  # noqa: F401
