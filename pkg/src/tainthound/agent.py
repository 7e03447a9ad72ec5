"""Generic tool-using agent loop.

A run alternates model completions with tool dispatch until the stage's
finish tool is called, a terminal submission is accepted, or the iteration
limit is reached.  The limit counts model completions; the default of 54
bounds runaway loops.  Typed submissions are validated before acceptance
and validation errors are fed back to the model as tool results instead of
aborting the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .model import ChatMessage, ChatSession, ToolCall, UsageStats, record_transcript
from .vulns import SubmissionError

log = logging.getLogger(__name__)

DEFAULT_ITERATION_LIMIT = 54
TOOL_RESULT_CAP = 64 * 1024
TRUNCATION_MARKER = "\n... [output truncated: {dropped} bytes omitted] ...\n"


@dataclass
class ToolSchema:
    name: str
    description: str
    parameters: dict[str, Any]
    handler: Callable[..., str] | None = None

    def wire_schema(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
        }


@dataclass
class SubmissionSpec:
    """How a stage's submit tool behaves inside the loop.

    ``validate`` maps the raw tool arguments to a list of typed records and
    raises :class:`SubmissionError` on violation.  ``terminal`` ends the run
    after the first accepted submission (the Exploiter works this way; the
    Finder keeps accumulating until it calls finish).
    """

    tool_name: str
    validate: Callable[[dict[str, Any]], list[Any]]
    terminal: bool = False


@dataclass
class AgentOutcome:
    submissions: list[Any]
    finished: bool
    iterations_used: int
    transcript_ref: str
    usage: UsageStats


def truncate_output(text: str, cap: int = TOOL_RESULT_CAP) -> str:
    data = text.encode("utf-8", errors="replace")
    if len(data) <= cap:
        return text
    head = data[: cap // 2].decode("utf-8", errors="replace")
    tail = data[-(cap // 2):].decode("utf-8", errors="replace")
    return head + TRUNCATION_MARKER.format(dropped=len(data) - cap) + tail


def _check_arguments(schema: ToolSchema, arguments: dict[str, Any]) -> str | None:
    """Light schema validation: required keys and primitive types."""
    params = schema.parameters or {}
    required = params.get("required", [])
    properties = params.get("properties", {})
    missing = [key for key in required if key not in arguments]
    if missing:
        return f"missing required argument(s): {', '.join(missing)}"
    type_map = {
        "string": str,
        "integer": int,
        "number": (int, float),
        "boolean": bool,
        "array": (list, tuple),
        "object": dict,
    }
    for key, value in arguments.items():
        expect = properties.get(key, {}).get("type")
        if expect in type_map and value is not None:
            py_type = type_map[expect]
            if expect in ("integer", "number") and isinstance(value, bool):
                return f"argument {key!r} has wrong type (expected {expect})"
            if not isinstance(value, py_type):
                return f"argument {key!r} has wrong type (expected {expect})"
    return None


def dispatch_tool(call: ToolCall, tools: dict[str, ToolSchema]) -> str:
    """Invoke a tool handler; failures become error text, never exceptions."""
    schema = tools.get(call.name)
    if schema is None or schema.handler is None:
        return f"error: unknown tool {call.name!r}"
    problem = _check_arguments(schema, call.arguments)
    if problem is not None:
        return f"error: invalid arguments for {call.name}: {problem}"
    try:
        result = schema.handler(**call.arguments)
    except Exception as exc:  # tool panics never terminate the loop
        log.debug("tool %s raised", call.name, exc_info=True)
        return f"error: tool {call.name} failed: {exc}"
    return truncate_output(str(result))


def run_agent(
    session: ChatSession,
    system_prompt: str,
    user_prompt: str,
    tools: Sequence[ToolSchema],
    submission: SubmissionSpec,
    *,
    finish_tool_name: str | None = None,
    limit: int = DEFAULT_ITERATION_LIMIT,
    transcript_path: Path | None = None,
) -> AgentOutcome:
    if limit < 1:
        raise ValueError("iteration limit must be positive")
    names = [t.name for t in tools]
    if len(set(names)) != len(names):
        raise ValueError("tool names must be unique within one agent run")
    if submission.tool_name not in names:
        raise ValueError(f"tools must include the submit tool {submission.tool_name!r}")
    if finish_tool_name is not None and finish_tool_name not in names:
        raise ValueError(f"tools must include the finish tool {finish_tool_name!r}")

    tool_map = {t.name: t for t in tools}
    wire_schemas = [t.wire_schema() for t in tools]
    messages: list[ChatMessage] = [
        ChatMessage(role="system", content=system_prompt),
        ChatMessage(role="user", content=user_prompt),
    ]
    submissions: list[Any] = []
    finished = False
    iterations_used = 0

    for _ in range(limit):
        reply, _delta = session.complete(messages, wire_schemas)
        iterations_used += 1
        messages.append(reply)
        ended = False
        for call in reply.tool_calls:
            if finish_tool_name is not None and call.name == finish_tool_name:
                result = "run finished"
                ended = True
            elif call.name == submission.tool_name:
                try:
                    records = submission.validate(call.arguments)
                except SubmissionError as exc:
                    result = "validation error: " + "; ".join(exc.violations)
                else:
                    submissions.extend(records)
                    result = f"accepted {len(records)} record(s)"
                    if submission.terminal:
                        ended = True
            else:
                result = dispatch_tool(call, tool_map)
            messages.append(
                ChatMessage(role="tool", content=result, tool_call_id=call.id)
            )
        if ended:
            finished = True
            break

    transcript_ref = session.id
    if transcript_path is not None:
        record_transcript(session, transcript_path)
        transcript_ref = str(transcript_path)

    return AgentOutcome(
        submissions=submissions,
        finished=finished,
        iterations_used=iterations_used,
        transcript_ref=transcript_ref,
        usage=session.usage.copy(),
    )
