"""Chat-completions client for OpenAI-compatible endpoints, with an offline stub scheme."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import requests

from .prompts import Transcript
from .stub import stub_chat

API_KEY_ENV = "REWARD_FORGE_API_KEY"
STUB_SCHEME = "stub://"

log = logging.getLogger(__name__)


class LlmError(RuntimeError):
    pass


class AuthError(LlmError):
    pass


class ProtocolError(LlmError):
    pass


class RetriesExhausted(LlmError):
    pass


@dataclass
class LlmEndpoint:
    base_url: str
    model: str = "gpt-4o"
    api_key: str | None = None
    timeout: float = 120.0
    max_retries: int = 3
    temperature: float = 1.0
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)

    @property
    def is_stub(self) -> bool:
        return self.base_url.startswith(STUB_SCHEME)

    @property
    def stub_seed(self) -> int:
        text = self.base_url[len(STUB_SCHEME):].strip("/") or "0"
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"stub endpoint needs an integer seed, got {self.base_url!r}") from None

    def describe(self) -> dict:
        """Endpoint settings safe to persist (no key)."""
        return {"base_url": self.base_url, "model": self.model, "temperature": self.temperature}


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


def chat(endpoint: LlmEndpoint, transcript: Transcript, sample: int = 0, session=None,
         sleep=time.sleep) -> str:
    """Send the transcript and return the first choice's content.

    ``sample`` distinguishes parallel requests for the same transcript; only the
    stub uses it. Server errors, rate limiting and timeouts are retried with
    exponential backoff; authentication failures are not.
    """
    if endpoint.is_stub:
        return stub_chat(endpoint.stub_seed, transcript, sample)

    http = session or requests
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"
    body = {"model": endpoint.model, "messages": transcript.to_list(), "temperature": endpoint.temperature}

    last = "no attempt made"
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            sleep(endpoint.backoff * 2 ** (attempt - 1))
        try:
            resp = http.post(url, json=body, headers=headers, timeout=endpoint.timeout)
        except (requests.Timeout, requests.ConnectionError) as e:
            last = f"{type(e).__name__}: {e}"
            log.warning("chat attempt %d failed: %s", attempt + 1, last)
            continue
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if _retryable(resp.status_code):
            last = f"HTTP {resp.status_code}"
            log.warning("chat attempt %d failed: %s", attempt + 1, last)
            continue
        if resp.status_code != 200:
            raise LlmError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return _content(resp)
    raise RetriesExhausted(f"gave up after {endpoint.max_retries + 1} attempts ({last})")


def _content(resp) -> str:
    try:
        data = resp.json()
    except ValueError as e:
        raise ProtocolError(f"response is not JSON: {e}") from None
    choices = data.get("choices") if isinstance(data, dict) else None
    if not isinstance(choices, list) or not choices:
        raise ProtocolError("response has no choices")
    message = choices[0].get("message") if isinstance(choices[0], dict) else None
    content = message.get("content") if isinstance(message, dict) else None
    if not isinstance(content, str):
        raise ProtocolError("first choice has no message content")
    return content
