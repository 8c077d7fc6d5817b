"""Completion clients: remote chat models, scripted replays, and constrained
decoding glue.

Scripted models make every pipeline reproducible at desk scale: a replay maps
prompt fingerprints to canned responses, bit-deterministic across runs. The
remote client speaks the OpenAI-compatible chat completions wire format with
bounded exponential backoff. Call accounting is exact: every ``complete`` or
``constrained_complete`` invocation bumps the owning client's counters.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .enforcer import DecoderSession, enforced_repair


class CompletionError(RuntimeError):
    pass


class ReplayMismatchError(CompletionError):
    def __init__(self, expected: str | None, got: str):
        super().__init__(f"replay mismatch: expected fingerprint {expected!r}, request fingerprinted {got!r}")
        self.expected = expected
        self.got = got


class NoPermissibleTokenError(CompletionError):
    """The model's candidate vocabulary cannot cover any allowed character."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model_id: str = "default"
    max_tokens: int = 1024
    temperature: float = 0.0
    system: str | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_s: float
    mode: str = "plain"  # "plain" | "enforced" | "repaired"


def estimate_tokens(text: str) -> int:
    """Rough budget estimate: about four characters per token."""
    return (len(text) + 3) // 4


def fingerprint(prompt: str) -> str:
    """Stable hash of the whitespace-normalized prompt, so replays survive
    formatting drift in retrieved content."""
    normalized = " ".join(prompt.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


def post_json(url: str, payload: dict, api_key: str = "", timeout: float = 30.0,
              max_attempts: int = 3, backoff_s: float = 0.5) -> dict:
    """POST JSON with bounded exponential backoff; raises CompletionError
    after the final attempt."""
    body = json.dumps(payload).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last: Exception | None = None
    for attempt in range(max_attempts):
        request = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=timeout) as response:
                return json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, urllib.error.HTTPError, OSError, ValueError) as exc:
            last = exc
            if attempt + 1 < max_attempts:
                time.sleep(backoff_s * (2 ** attempt))
    raise CompletionError(f"request to {url} failed after {max_attempts} attempts: {last}")


class ScriptedModel:
    """Replays canned responses keyed by prompt fingerprint.

    In strict mode requests must arrive in the scripted order; otherwise any
    known fingerprint may be requested any number of times.
    """

    def __init__(self, entries: list[tuple[str, str]] | dict[str, str], strict: bool = False):
        if isinstance(entries, dict):
            pairs = list(entries.items())
        else:
            pairs = list(entries)
        self._order = pairs
        self._by_fp = dict(pairs)
        self.strict = strict
        self._cursor = 0
        self.calls = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0

    @classmethod
    def from_prompts(cls, prompt_responses: list[tuple[str, str]], strict: bool = False) -> "ScriptedModel":
        return cls([(fingerprint(p), r) for p, r in prompt_responses], strict=strict)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        fp = fingerprint(request.prompt)
        if self.strict:
            if self._cursor >= len(self._order):
                raise ReplayMismatchError(None, fp)
            expected, response = self._order[self._cursor]
            if expected != fp:
                raise ReplayMismatchError(expected, fp)
            self._cursor += 1
        else:
            if fp not in self._by_fp:
                raise ReplayMismatchError(None, fp)
            response = self._by_fp[fp]
        self.calls += 1
        prompt_tokens = estimate_tokens(request.prompt)
        completion_tokens = estimate_tokens(response)
        self.prompt_tokens += prompt_tokens
        self.completion_tokens += completion_tokens
        return CompletionResult(
            text=response,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            latency_s=0.0,
        )


class ScriptedTokenModel:
    """Replays ranked candidate-token lists, one list per decode step.

    Exposes per-step candidates so constrained decoding can mask them; the
    first candidate that survives the mask is emitted.
    """

    def __init__(self, steps: list[list[str]]):
        self.steps = [list(step) for step in steps]
        self.calls = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0

    def candidate_steps(self):
        return iter(self.steps)


class RemoteChatModel:
    """OpenAI-compatible chat completions client.

    Credentials and endpoint come from the environment (CHAINPLAN_API_BASE /
    CHAINPLAN_API_KEY, falling back to OPENAI_API_BASE / OPENAI_API_KEY)
    unless passed explicitly.
    """

    def __init__(self, model_id: str | None = None, api_base: str | None = None,
                 api_key: str | None = None, timeout: float | None = None,
                 max_attempts: int = 3, backoff_s: float = 0.5):
        self.model_id = model_id or os.environ.get("CHAINPLAN_MODEL", "gpt-3.5-turbo")
        self.api_base = (api_base or os.environ.get("CHAINPLAN_API_BASE")
                         or os.environ.get("OPENAI_API_BASE", "https://api.openai.com")).rstrip("/")
        self.api_key = api_key or os.environ.get("CHAINPLAN_API_KEY") or os.environ.get("OPENAI_API_KEY", "")
        self.timeout = timeout if timeout is not None else float(os.environ.get("CHAINPLAN_TIMEOUT", "30"))
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.calls = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0

    def complete(self, request: CompletionRequest) -> CompletionResult:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.prompt})
        payload = {
            "model": request.model_id if request.model_id != "default" else self.model_id,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        started = time.monotonic()
        body = post_json(
            f"{self.api_base}/v1/chat/completions",
            payload,
            api_key=self.api_key,
            timeout=self.timeout,
            max_attempts=self.max_attempts,
            backoff_s=self.backoff_s,
        )
        latency = time.monotonic() - started
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CompletionError(f"malformed chat completion response: {exc}") from exc
        usage = body.get("usage", {})
        prompt_tokens = int(usage.get("prompt_tokens", estimate_tokens(request.prompt)))
        completion_tokens = int(usage.get("completion_tokens", estimate_tokens(text)))
        self.calls += 1
        self.prompt_tokens += prompt_tokens
        self.completion_tokens += completion_tokens
        return CompletionResult(
            text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            latency_s=latency,
        )


def constrained_complete(model, request: CompletionRequest, session: DecoderSession) -> CompletionResult:
    """Complete under the session's automaton.

    Models that expose per-step candidates are decoded token by token with a
    vocabulary mask, yielding automaton-accepted text ("enforced"). Models
    without per-step access run one plain completion whose output is greedily
    projected onto the schema ("repaired").
    """
    if hasattr(model, "candidate_steps"):
        started = time.monotonic()
        for candidates in model.candidate_steps():
            mask = session.mask_vocabulary(candidates)
            chosen = next((tok for tok, ok in zip(candidates, mask) if ok), None)
            if chosen is None:
                raise NoPermissibleTokenError(
                    f"no candidate in {candidates!r} is permissible after {session.emitted!r}"
                )
            session.advance(chosen)
            if session.at_end:
                break
        if not session.at_end:
            raise CompletionError("scripted token steps exhausted before the schema accepted")
        model.calls += 1
        text = session.emitted
        completion_tokens = estimate_tokens(text)
        prompt_tokens = estimate_tokens(request.prompt)
        model.prompt_tokens += prompt_tokens
        model.completion_tokens += completion_tokens
        return CompletionResult(
            text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            latency_s=time.monotonic() - started,
            mode="enforced",
        )

    result = model.complete(request)
    repaired, _ = enforced_repair(session.automaton, result.text)
    session.advance(repaired)
    return CompletionResult(
        text=repaired,
        prompt_tokens=result.prompt_tokens,
        completion_tokens=result.completion_tokens,
        latency_s=result.latency_s,
        mode="repaired",
    )


def load_replay(path: str | Path, strict: bool = False) -> ScriptedModel:
    """Replay file: JSON lines of {"fingerprint": ..., "response": ...}."""
    entries: list[tuple[str, str]] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entries.append((record["fingerprint"], record["response"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CompletionError(f"bad replay line {line_no}: {exc}") from exc
    return ScriptedModel(entries, strict=strict)


def save_replay(entries: list[tuple[str, str]], path: str | Path) -> None:
    lines = [json.dumps({"fingerprint": fp, "response": response}) for fp, response in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
