"""Prompting, feedback and chat access for reward generation."""

from .client import API_KEY_ENV, AuthError, LlmEndpoint, LlmError, ProtocolError, RetriesExhausted, chat
from .prompts import (
    TASK_DESCRIPTION, Message, PromptStrategy, Transcript, build_initial_prompt, parse_signature,
    signature_names, strategy_roster,
)
from .reflection import build_reflection, parse_reflection
from .stub import DEFAULT_LIBRARY, Template, lineage_of, stub_chat

__all__ = [
    "API_KEY_ENV", "AuthError", "DEFAULT_LIBRARY", "LlmEndpoint", "LlmError", "Message",
    "PromptStrategy", "ProtocolError", "RetriesExhausted", "TASK_DESCRIPTION", "Template",
    "Transcript", "build_initial_prompt", "build_reflection", "chat", "lineage_of",
    "parse_reflection", "parse_signature", "signature_names", "stub_chat", "strategy_roster",
]
