"""Chat messages, the model-client contract, and an HTTP chat-completions client."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import httpx

from .catalog import ToolSpec
from .runtime import ToolCall

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")

ENV_BASE_URL = "TOOLENV_BASE_URL"
ENV_API_KEY = "TOOLENV_API_KEY"
ENV_MODEL = "TOOLENV_MODEL"


@dataclass(frozen=True)
class Message:
    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] | None = None
    tool_call_id: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.tool_calls is not None and self.role != "assistant":
            raise ValueError("only assistant messages carry tool calls")
        if self.tool_call_id is not None and self.role != "tool":
            raise ValueError("only tool messages carry tool_call_id")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls is not None:
            rec["tool_calls"] = [c.to_record() for c in self.tool_calls]
        if self.tool_call_id is not None:
            rec["tool_call_id"] = self.tool_call_id
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Message":
        calls = rec.get("tool_calls")
        return cls(
            rec["role"],
            rec.get("content") or "",
            tuple(ToolCall.from_record(c) for c in calls) if calls is not None else None,
            rec.get("tool_call_id"),
        )


class ModelClientError(RuntimeError):
    """The model endpoint failed after all retries."""


class ModelClient(Protocol):
    def complete(self, messages: Sequence[Message], tools: Sequence[ToolSpec]) -> Message: ...


# --- chat-completions wire format -------------------------------------------


def tool_to_wire(tool: ToolSpec) -> dict[str, Any]:
    props: dict[str, Any] = {}
    for p in tool.parameters:
        if p.ptype == "enum":
            schema: dict[str, Any] = {"enum": list(p.enum_values or ())}
        elif p.ptype == "array":
            schema = {"type": "array", "items": {"type": ["string", "number", "boolean"]}}
        else:
            schema = {"type": p.ptype}
        if p.description:
            schema["description"] = p.description
        props[p.name] = schema
    return {
        "type": "function",
        "function": {
            "name": tool.name,
            "description": tool.description,
            "parameters": {"type": "object", "properties": props, "required": tool.required_names},
        },
    }


def message_to_wire(msg: Message) -> dict[str, Any]:
    out: dict[str, Any] = {"role": msg.role, "content": msg.content}
    if msg.tool_calls:
        out["tool_calls"] = [
            {
                "id": c.call_id,
                "type": "function",
                "function": {"name": c.tool_name, "arguments": json.dumps(dict(c.arguments), sort_keys=True)},
            }
            for c in msg.tool_calls
        ]
    if msg.tool_call_id is not None:
        out["tool_call_id"] = msg.tool_call_id
    return out


def message_from_wire(body: Mapping[str, Any]) -> Message:
    """Parse ``choices[0].message`` of a chat-completions response (or the message itself)."""
    msg = body["choices"][0]["message"] if "choices" in body else body
    calls = None
    if msg.get("tool_calls"):
        parsed = []
        for i, c in enumerate(msg["tool_calls"]):
            fn = c["function"]
            raw = fn.get("arguments") or "{}"
            try:
                args = json.loads(raw) if isinstance(raw, str) else dict(raw)
            except json.JSONDecodeError:
                # keep the call; the environment answers it with an argument error
                args = {"__unparsed__": raw}
            parsed.append(ToolCall(fn["name"], args, c.get("id") or f"call_{i}"))
        calls = tuple(parsed)
    return Message("assistant", msg.get("content") or "", calls)


@dataclass
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    api_key_env: str = ENV_API_KEY
    model: str = "default"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    temperature: float | None = None

    @classmethod
    def from_env(cls, **overrides: Any) -> "EndpointConfig":
        cfg = cls(
            base_url=os.environ.get(ENV_BASE_URL, cls.base_url),
            model=os.environ.get(ENV_MODEL, cls.model),
        )
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        return cfg


@dataclass
class ChatCompletionsClient:
    """POSTs ``{model, messages, tools}`` to ``<base_url>/chat/completions``.

    Transport errors, timeouts, 429 and 5xx responses are retried with
    exponential backoff; anything else, or running out of retries, raises
    ``ModelClientError``.
    """

    config: EndpointConfig = field(default_factory=EndpointConfig)
    transport: httpx.BaseTransport | None = None
    sleep: Any = time.sleep

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def complete(self, messages: Sequence[Message], tools: Sequence[ToolSpec]) -> Message:
        payload: dict[str, Any] = {
            "model": self.config.model,
            "messages": [message_to_wire(m) for m in messages],
        }
        if tools:
            payload["tools"] = [tool_to_wire(t) for t in tools]
        if self.config.temperature is not None:
            payload["temperature"] = self.config.temperature
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last: Exception | None = None
        with httpx.Client(timeout=self.config.timeout, transport=self.transport) as http:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    self.sleep(self.config.backoff * 2 ** (attempt - 1))
                try:
                    resp = http.post(url, json=payload, headers=self._headers())
                except httpx.HTTPError as exc:
                    last = exc
                    log.warning("model request failed (attempt %d): %s", attempt + 1, exc)
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = ModelClientError(f"HTTP {resp.status_code}")
                    log.warning("model endpoint returned %d (attempt %d)", resp.status_code, attempt + 1)
                    continue
                if resp.status_code >= 400:
                    raise ModelClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return message_from_wire(resp.json())
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise ModelClientError(f"malformed completion: {exc}") from exc
        raise ModelClientError(f"gave up after {self.config.max_retries + 1} attempts: {last}")
