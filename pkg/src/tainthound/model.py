"""Chat-completion access with tool calling.

Two backends share one interface: a live HTTP backend speaking the de-facto
chat-completions wire shape, and a deterministic scripted backend that
replays recorded transcripts (or hand-authored scripts) for tests and
offline runs.  Sessions accumulate token usage and record a replayable
transcript of every exchange.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import requests

log = logging.getLogger(__name__)

TRANSCRIPT_FORMAT = "tainthound-transcript"
TRANSCRIPT_VERSION = 1


class ModelClientError(RuntimeError):
    pass


class ScriptExhaustedError(ModelClientError):
    """The scripted backend ran out of queued responses."""


class ProviderError(ModelClientError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"provider returned HTTP {status}: {body[:500]}")


class SessionBusyError(ModelClientError):
    """A session received interleaved complete calls."""


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: dict[str, Any]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None

    def __post_init__(self) -> None:
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool message requires tool_call_id")


@dataclass
class UsageStats:
    input_tokens: int = 0
    output_tokens: int = 0
    request_count: int = 0

    def add(self, other: "UsageStats") -> None:
        self.input_tokens += other.input_tokens
        self.output_tokens += other.output_tokens
        self.request_count += other.request_count

    def copy(self) -> "UsageStats":
        return UsageStats(self.input_tokens, self.output_tokens, self.request_count)

    def to_dict(self) -> dict[str, int]:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "request_count": self.request_count,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "UsageStats":
        return cls(
            input_tokens=int(raw.get("input_tokens", 0)),
            output_tokens=int(raw.get("output_tokens", 0)),
            request_count=int(raw.get("request_count", 0)),
        )


def message_to_dict(message: ChatMessage) -> dict[str, Any]:
    out: dict[str, Any] = {"role": message.role, "content": message.content}
    if message.tool_calls:
        out["tool_calls"] = [
            {"id": c.id, "name": c.name, "arguments": c.arguments}
            for c in message.tool_calls
        ]
    if message.tool_call_id:
        out["tool_call_id"] = message.tool_call_id
    return out


def message_from_dict(raw: dict[str, Any]) -> ChatMessage:
    calls = tuple(
        ToolCall(
            id=str(c.get("id", f"call_{i}")),
            name=str(c["name"]),
            arguments=dict(c.get("arguments") or {}),
        )
        for i, c in enumerate(raw.get("tool_calls") or [])
    )
    return ChatMessage(
        role=str(raw.get("role", "assistant")),
        content=str(raw.get("content") or ""),
        tool_calls=calls,
        tool_call_id=raw.get("tool_call_id"),
    )


class ModelBackend(Protocol):
    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[dict[str, Any]]
    ) -> tuple[ChatMessage, UsageStats]:
        ...


class ScriptedBackend:
    """Replays a fixed sequence of assistant messages.

    Accepts hand-authored scripts (one message object per line) and recorded
    transcripts (request/response entries); both are newline-delimited JSON.
    """

    def __init__(self, messages: Sequence[ChatMessage], usages: Sequence[UsageStats] | None = None):
        self._messages = list(messages)
        self._usages = list(usages) if usages is not None else None
        self._index = 0

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedBackend":
        messages: list[ChatMessage] = []
        usages: list[UsageStats] = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("format") == TRANSCRIPT_FORMAT:
                continue  # header line
            if "response" in obj:
                messages.append(message_from_dict(obj["response"]["message"]))
                usages.append(UsageStats.from_dict(obj["response"].get("usage") or {}))
            elif "role" in obj:
                messages.append(message_from_dict(obj))
                usages.append(UsageStats(request_count=1))
            else:
                raise ModelClientError(f"unrecognized script line in {path}: {line[:120]}")
        return cls(messages, usages)

    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[dict[str, Any]]
    ) -> tuple[ChatMessage, UsageStats]:
        if self._index >= len(self._messages):
            raise ScriptExhaustedError(
                f"script exhausted after {len(self._messages)} responses"
            )
        message = self._messages[self._index]
        usage = (
            self._usages[self._index].copy()
            if self._usages is not None
            else UsageStats(request_count=1)
        )
        self._index += 1
        return message, usage


RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class LiveBackend:
    """OpenAI-compatible chat-completions endpoint over HTTPS.

    Base URL, model name, and the credential environment variable are all
    configuration so any compatible provider works.  Transient transport
    errors and 429s are retried with exponential backoff; other 4xx are not.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        credential_env: str = "TAINTHOUND_API_KEY",
        *,
        temperature: float | None = None,
        extra_params: dict[str, Any] | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.credential_env = credential_env
        self.temperature = temperature
        self.extra_params = dict(extra_params or {})
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._http = session or requests.Session()
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.credential_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[dict[str, Any]]
    ) -> tuple[ChatMessage, UsageStats]:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [self._wire_message(m) for m in messages],
        }
        if tools:
            payload["tools"] = [
                {"type": "function", "function": dict(schema)} for schema in tools
            ]
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        payload.update(self.extra_params)

        attempts = 0
        last_error: Exception | None = None
        while attempts < self.max_attempts:
            attempts += 1
            try:
                resp = self._http.post(
                    f"{self.base_url}/chat/completions",
                    headers=self._headers(),
                    json=payload,
                    timeout=120,
                )
            except requests.RequestException as exc:
                last_error = exc
                if attempts < self.max_attempts:
                    self._sleep(self.backoff_base * 2 ** (attempts - 1))
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = ProviderError(resp.status_code, resp.text)
                if attempts < self.max_attempts:
                    self._sleep(self.backoff_base * 2 ** (attempts - 1))
                continue
            if resp.status_code >= 400:
                raise ProviderError(resp.status_code, resp.text)
            try:
                body = resp.json()
            except ValueError as exc:
                raise ModelClientError(f"provider returned non-JSON body: {exc}") from exc
            return self._parse_message(body), self._parse_usage(body, attempts)
        raise ModelClientError(
            f"transport failed after {attempts} attempts: {last_error}"
        )

    @staticmethod
    def _wire_message(message: ChatMessage) -> dict[str, Any]:
        out: dict[str, Any] = {"role": message.role, "content": message.content}
        if message.tool_calls:
            out["tool_calls"] = [
                {
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": json.dumps(c.arguments)},
                }
                for c in message.tool_calls
            ]
        if message.tool_call_id:
            out["tool_call_id"] = message.tool_call_id
        return out

    @staticmethod
    def _parse_message(body: dict[str, Any]) -> ChatMessage:
        try:
            raw = body["choices"][0]["message"]
        except (KeyError, IndexError) as exc:
            raise ModelClientError(f"malformed completion response: {exc}") from exc
        calls: list[ToolCall] = []
        for i, item in enumerate(raw.get("tool_calls") or []):
            fn = item.get("function") or {}
            raw_args = fn.get("arguments")
            if isinstance(raw_args, str):
                try:
                    args = json.loads(raw_args) if raw_args else {}
                except json.JSONDecodeError:
                    args = {"_raw": raw_args}
            else:
                args = dict(raw_args or {})
            calls.append(
                ToolCall(id=str(item.get("id", f"call_{i}")), name=str(fn.get("name", "")), arguments=args)
            )
        return ChatMessage(
            role=str(raw.get("role", "assistant")),
            content=str(raw.get("content") or ""),
            tool_calls=tuple(calls),
        )

    @staticmethod
    def _parse_usage(body: dict[str, Any], attempts: int) -> UsageStats:
        usage = body.get("usage") or {}
        return UsageStats(
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            request_count=attempts,
        )


@dataclass
class TranscriptEntry:
    request_messages: list[dict[str, Any]]
    request_tools: list[str]
    response_message: dict[str, Any]
    usage: dict[str, int]


class ChatSession:
    """One single-logical-thread conversation with usage accounting."""

    _counter = 0
    _counter_lock = threading.Lock()

    def __init__(self, backend: ModelBackend, session_id: str | None = None):
        if session_id is None:
            with ChatSession._counter_lock:
                ChatSession._counter += 1
                session_id = f"session-{ChatSession._counter}"
        self.id = session_id
        self.backend = backend
        self.usage = UsageStats()
        self.transcript: list[TranscriptEntry] = []
        self._busy = threading.Lock()

    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[dict[str, Any]] = ()
    ) -> tuple[ChatMessage, UsageStats]:
        if not messages:
            raise ValueError("messages must be non-empty")
        if messages[0].role != "system":
            raise ValueError("first message must have role=system")
        if not self._busy.acquire(blocking=False):
            raise SessionBusyError("session received interleaved complete calls")
        try:
            message, delta = self.backend.complete(messages, tools)
            self.usage.add(delta)
            self.transcript.append(
                TranscriptEntry(
                    request_messages=[message_to_dict(m) for m in messages],
                    request_tools=[str(t.get("name", "")) for t in tools],
                    response_message=message_to_dict(message),
                    usage=delta.to_dict(),
                )
            )
            return message, delta
        finally:
            self._busy.release()


def record_transcript(session: ChatSession, sink: Path) -> Path:
    """Write the session transcript as newline-delimited JSON.

    The file starts with a versioned header line and is replayable by
    :meth:`ScriptedBackend.from_file`.
    """
    sink = Path(sink)
    sink.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"format": TRANSCRIPT_FORMAT, "version": TRANSCRIPT_VERSION, "session": session.id})]
    for entry in session.transcript:
        lines.append(
            json.dumps(
                {
                    "request": {"messages": entry.request_messages, "tools": entry.request_tools},
                    "response": {"message": entry.response_message, "usage": entry.usage},
                },
                ensure_ascii=False,
            )
        )
    sink.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return sink
