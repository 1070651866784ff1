"""Chat-completion backend abstraction.

Backends speak a minimal wire shape: a list of messages whose content is
text and/or PNG-image parts, plus a sampling temperature.  The scripted
adapter answers from a canned reply list and memoizes by request payload
so identical requests always get identical replies; the HTTP adapter
targets an OpenAI-style chat-completions endpoint with the API key taken
from an environment variable.  Backends hold no per-call state and are
safe to share across workers.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from dataclasses import dataclass, field
from typing import Sequence

import requests


class BackendError(RuntimeError):
    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.detail = detail or {}


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    png_base64: str

    @classmethod
    def from_bytes(cls, png: bytes) -> "ImagePart":
        return cls(base64.b64encode(png).decode("ascii"))


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    parts: tuple = ()


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0

    def canonical_payload(self) -> str:
        """Deterministic JSON form used for hashing and transport."""
        doc = {
            "temperature": self.temperature,
            "messages": [
                {
                    "role": m.role,
                    "parts": [
                        {"type": "text", "text": p.text}
                        if isinstance(p, TextPart)
                        else {"type": "image", "png_base64": p.png_base64}
                        for p in m.parts
                    ],
                }
                for m in self.messages
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


class AgentBackend:
    """Base interface; subclasses implement ``complete``."""

    name: str = "backend"
    supports_vision: bool = False

    def complete(self, request: ChatRequest) -> str:
        raise NotImplementedError


class ScriptedExhausted(BackendError):
    pass


class ScriptedBackend(AgentBackend):
    """Deterministic test backend.

    ``replies`` is consumed in order; each served reply is memoized by
    the request payload, so resending an identical request returns the
    memoized text instead of consuming a new reply.  A dict script maps
    a payload substring to its reply instead (first match in key order).
    """

    def __init__(self, replies: Sequence[str] | dict[str, str], name: str = "scripted", vision: bool = True):
        self.name = name
        self.supports_vision = vision
        self._lock = threading.Lock()
        self._memo: dict[str, str] = {}
        self.requests_seen: list[str] = []
        if isinstance(replies, dict):
            self._by_substring = dict(replies)
            self._queue = None
        else:
            self._by_substring = None
            self._queue = list(replies)
        self._cursor = 0

    def complete(self, request: ChatRequest) -> str:
        payload = request.canonical_payload()
        with self._lock:
            self.requests_seen.append(payload)
            if payload in self._memo:
                return self._memo[payload]
            if self._by_substring is not None:
                for key, reply in self._by_substring.items():
                    if key in payload:
                        self._memo[payload] = reply
                        return reply
                raise ScriptedExhausted("no scripted reply matches request")
            if self._cursor >= len(self._queue):
                raise ScriptedExhausted("scripted reply queue exhausted")
            reply = self._queue[self._cursor]
            self._cursor += 1
            self._memo[payload] = reply
            return reply


class HttpBackend(AgentBackend):
    """OpenAI-style chat-completions adapter.

    ``max_in_flight`` bounds concurrent requests across sharing workers
    (the adapter-side rate limit).
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "SKETCHBENCH_API_KEY",
        vision: bool = True,
        timeout_s: float = 120.0,
        max_in_flight: int = 4,
        name: str | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.supports_vision = vision
        self.timeout_s = timeout_s
        self.name = name or model
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))

    def _wire_messages(self, request: ChatRequest) -> list[dict]:
        messages = []
        for m in request.messages:
            content = []
            for p in m.parts:
                if isinstance(p, TextPart):
                    content.append({"type": "text", "text": p.text})
                else:
                    content.append(
                        {
                            "type": "image_url",
                            "image_url": {"url": f"data:image/png;base64,{p.png_base64}"},
                        }
                    )
            messages.append({"role": m.role, "content": content})
        return messages

    def complete(self, request: ChatRequest) -> str:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise BackendError(f"API key env var {self.api_key_env} is not set")
        body = {
            "model": self.model,
            "temperature": request.temperature,
            "messages": self._wire_messages(request),
        }
        try:
            with self._slots:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers={"Authorization": f"Bearer {api_key}"},
                    timeout=self.timeout_s,
                )
        except requests.RequestException as exc:
            raise BackendError(f"transport error: {exc}", {"backend": self.name}) from exc
        if resp.status_code != 200:
            raise BackendError(
                f"backend returned {resp.status_code}",
                {"backend": self.name, "body": resp.text[:500]},
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
