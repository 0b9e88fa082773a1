"""Pluggable completion providers behind one ``complete(request) -> str`` call.

Three providers cover every deployment mode: a deterministic scripted oracle
(tests and replay), a recording proxy that persists prompt/response pairs in
the oracle's own script format, and a generic JSON-over-HTTP endpoint for
live models.  Credentials come from environment variables only.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

ENDPOINT_ENV = "AGENT_LLM_ENDPOINT"
API_KEY_ENV = "AGENT_LLM_API_KEY"

DEADLINE_GRACE = 1.0  # seconds a provider may run past the deadline


class GatewayError(Exception):
    pass


class GatewayTimeout(GatewayError):
    def __init__(self, deadline: float) -> None:
        super().__init__(f"completion exceeded deadline of {deadline:.1f}s")


class EndpointError(GatewayError):
    def __init__(self, status: int, body: str) -> None:
        self.status = status
        self.body = body
        super().__init__(f"endpoint returned {status}: {body[:200]}")


class ScriptExhausted(GatewayError):
    def __init__(self, length: int) -> None:
        super().__init__(f"oracle script exhausted after {length} responses")


class PromptDigestMismatch(GatewayError):
    def __init__(self, index: int) -> None:
        super().__init__(f"prompt digest mismatch at script index {index}")


class MalformedScript(GatewayError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_output_chars: int = 4000
    temperature: float = 0.0
    deadline: float = 120.0

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.deadline <= 0:
            raise ValueError("deadline must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ScriptEntry:
    index: int
    response: str
    prompt_sha256: str | None = None
    delay_s: float = 0.0  # simulated model latency, capped by the deadline


@dataclass(frozen=True)
class OracleScript:
    entries: tuple[ScriptEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_responses(cls, responses: list[str]) -> "OracleScript":
        return cls(tuple(ScriptEntry(i, r) for i, r in enumerate(responses)))


def load_script(path: str | Path) -> OracleScript:
    """Read a script file: a JSON list of {index, response, prompt_sha256?}."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedScript(f"script {path} does not parse: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedScript("script must be a JSON list")
    entries = []
    for obj in data:
        if not isinstance(obj, dict) or "index" not in obj or "response" not in obj:
            raise MalformedScript(f"script entry must have index and response: {obj!r}")
        if not isinstance(obj["response"], str):
            raise MalformedScript(f"response at index {obj['index']} must be a string")
        entries.append(
            ScriptEntry(
                index=int(obj["index"]),
                response=obj["response"],
                prompt_sha256=obj.get("prompt_sha256"),
                delay_s=float(obj.get("delay_s", 0.0)),
            )
        )
    entries.sort(key=lambda e: e.index)
    indices = [e.index for e in entries]
    if indices != list(range(len(entries))):
        raise MalformedScript(f"script indices must be exactly 0..{len(entries) - 1}, got {indices}")
    return OracleScript(tuple(entries))


def save_script(script: OracleScript, path: str | Path) -> None:
    records = []
    for e in script.entries:
        rec: dict = {"index": e.index, "response": e.response}
        if e.prompt_sha256 is not None:
            rec["prompt_sha256"] = e.prompt_sha256
        if e.delay_s:
            rec["delay_s"] = e.delay_s
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=2, ensure_ascii=False) + "\n")


class ScriptedOracle:
    """Replays scripted responses strictly in order; a pure function of
    (script, call index).  Calls are serialized internally."""

    def __init__(self, script: OracleScript) -> None:
        self._script = script
        self._pos = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedOracle":
        return cls(load_script(path))

    @property
    def calls(self) -> int:
        return self._pos

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            if self._pos >= len(self._script):
                raise ScriptExhausted(len(self._script))
            entry = self._script.entries[self._pos]
            if entry.prompt_sha256 is not None and entry.prompt_sha256 != prompt_digest(
                request.prompt
            ):
                raise PromptDigestMismatch(entry.index)
            self._pos += 1
            if entry.delay_s > 0:
                time.sleep(min(entry.delay_s, request.deadline))
                if entry.delay_s > request.deadline:
                    raise GatewayTimeout(request.deadline)
            return entry.response


class RecordingProxy:
    """Forwards to an inner provider and persists every exchange as a script
    file, so any recorded session replays byte-identically."""

    def __init__(self, inner, path: str | Path) -> None:
        self._inner = inner
        self._path = Path(path)
        self._entries: list[ScriptEntry] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        response = self._inner.complete(request)
        with self._lock:
            self._entries.append(
                ScriptEntry(
                    index=len(self._entries),
                    response=response,
                    prompt_sha256=prompt_digest(request.prompt),
                )
            )
            save_script(OracleScript(tuple(self._entries)), self._path)
        return response


class HttpCompletionGateway:
    """Generic completion endpoint: POST {prompt, max_tokens, temperature},
    expect {"text": ...} back.  Adapters for chat-style APIs sit server-side."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not self.endpoint:
            raise GatewayError(f"no endpoint configured (set {ENDPOINT_ENV})")
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = client or httpx.Client()

    def complete(self, request: CompletionRequest) -> str:
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        body = {
            "prompt": request.prompt,
            "max_tokens": request.max_output_chars,
            "temperature": request.temperature,
        }
        try:
            response = self._client.post(
                self.endpoint, json=body, headers=headers, timeout=request.deadline
            )
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(request.deadline) from exc
        except httpx.HTTPError as exc:
            raise EndpointError(0, str(exc)) from exc
        if response.status_code // 100 != 2:
            raise EndpointError(response.status_code, response.text)
        try:
            return response.json()["text"]
        except (KeyError, ValueError) as exc:
            raise EndpointError(response.status_code, f"malformed body: {response.text[:200]}") from exc
