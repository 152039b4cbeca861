"""Text-completion backends.

Two implementations share the ``complete(prompt, cfg, *, item=None, program=None)``
call shape:

* :class:`OpenAIChatBackend` posts the prompt, byte for byte, as a single user
  message to an OpenAI-compatible ``/chat/completions`` endpoint.
* :class:`SimulatedLM` answers deterministically from a hash predicate, so the
  score of any assignment can be enumerated exactly by tests.

The keyword-only ``item``/``program`` arguments are ignored by HTTP backends;
the simulator needs them to know which item it is answering and under which
assignment.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import httpx

from .data import Example, parse_number
from .errors import BackendError, ConfigError, InvalidArgumentError, ProtocolError, UnavailableError
from .program import Method, Program, PromptAssignment, format_fields

log = logging.getLogger(__name__)

MAX_OUTPUT_TOKENS = 200
PREDICATE_MODULUS = 10**6


@dataclass(frozen=True)
class GenConfig:
    model_id: str = "simulated"
    temperature: float = 0.0
    max_output_tokens: int = MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if self.max_output_tokens > MAX_OUTPUT_TOKENS or self.max_output_tokens < 1:
            raise InvalidArgumentError(f"max_output_tokens must be in [1, {MAX_OUTPUT_TOKENS}]")
        if self.temperature < 0:
            raise InvalidArgumentError("temperature must be >= 0")


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    output_tokens: int


class Backend(Protocol):
    def complete(self, prompt: str, cfg: GenConfig, *, item: Example | None = None,
                 program: Program | None = None) -> Completion: ...


Tokenizer = Callable[[str], int]


def approx_token_count(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    """Token count of ``text``; defaults to ceil(utf-8 bytes / 4)."""
    return (tokenizer or approx_token_count)(text)


# --------------------------------------------------------------------------- simulated


def predicate_value(global_seed: int, item_id: str, canonical: str) -> int:
    digest = hashlib.sha256(f"{global_seed}|{item_id}|{canonical}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % PREDICATE_MODULUS


def default_wrong_answer(target: str) -> str:
    value = parse_number(target)
    if value is not None:
        wrong = value + max(1.0, abs(value)) + 1.0
        return str(int(wrong)) if wrong.is_integer() else repr(wrong)
    return f"not {target}"


@dataclass(frozen=True)
class SimulatedLMSpec:
    base_accuracy: float = 0.5
    cot_bonus: float = 0.0
    per_demo_bonus: float = 0.0
    instruction_bonus: Mapping[str, float] = field(default_factory=dict)
    global_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.base_accuracy <= 1.0:
            raise InvalidArgumentError("base_accuracy must lie in [0, 1]")


class SimulatedLM:
    """Deterministic stand-in for an LM.

    Item ``x`` is answered correctly under assignment ``v`` iff
    ``sha256(seed|id|canonical(v)) mod 1e6 < floor(1e6 * q(v))`` where
    ``q(v) = clamp(a0 + cot_bonus*[CoT] + per_demo_bonus*#demos + instruction bonus)``.
    """

    def __init__(self, spec: SimulatedLMSpec | None = None,
                 wrong_answer: Callable[[str], str] = default_wrong_answer) -> None:
        self.spec = spec or SimulatedLMSpec()
        self.wrong_answer = wrong_answer

    def accuracy(self, assignment: PromptAssignment) -> float:
        s = self.spec
        q = s.base_accuracy
        if assignment.method.uses_cot:
            q += s.cot_bonus
        q += s.per_demo_bonus * sum(len(d) for d in assignment.demos)
        q += sum(s.instruction_bonus.get(ins, 0.0) for ins in assignment.instructions if ins)
        return min(1.0, max(0.0, q))

    def is_correct(self, item_id: str, assignment: PromptAssignment) -> bool:
        threshold = math.floor(PREDICATE_MODULUS * self.accuracy(assignment))
        return predicate_value(self.spec.global_seed, item_id, assignment.canonical()) < threshold

    def complete(self, prompt: str, cfg: GenConfig, *, item: Example | None = None,
                 program: Program | None = None) -> Completion:
        if item is None or program is None:
            raise InvalidArgumentError("the simulated backend needs the item and program")
        a = program.assignment
        answer = item.target if self.is_correct(item.id, a) else self.wrong_answer(item.target)
        if a.method.uses_cot:
            text = format_fields(answer, reasoning=f"Worked through item {item.id} step by step.")
        elif a.method is Method.ZERO_SHOT_PREDICT:
            text = format_fields(answer)
        else:
            text = answer
        return Completion(text=text, prompt_tokens=count_tokens(prompt),
                          output_tokens=count_tokens(text))


class ScriptedProposer:
    """Proposer backend that cycles through a fixed list of instruction strings."""

    def __init__(self, candidates: list[str]) -> None:
        if not candidates:
            raise InvalidArgumentError("need at least one scripted candidate")
        self.candidates = list(candidates)
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    def complete(self, prompt: str, cfg: GenConfig, **_: object) -> Completion:
        with self._lock:
            text = self.candidates[len(self.prompts) % len(self.candidates)]
            self.prompts.append(prompt)
        return Completion(text=text, prompt_tokens=count_tokens(prompt),
                          output_tokens=count_tokens(text))


# --------------------------------------------------------------------------- http

RETRYABLE_STATUS = frozenset({408, 409, 429}) | frozenset(range(500, 600))


class OpenAIChatBackend:
    """OpenAI-compatible chat-completions client with jittered exponential backoff."""

    def __init__(self, endpoint: str, model_id: str | None = None, *,
                 api_key: str | None = None, api_key_env: str = "OPENAI_API_KEY",
                 timeout_s: float = 60.0, max_retries: int = 5, base_delay: float = 1.0,
                 max_delay: float = 60.0, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep, seed: int | None = None) -> None:
        if max_retries < 1:
            raise InvalidArgumentError("max_retries counts attempts and must be >= 1")
        url = endpoint.rstrip("/")
        self.url = url if url.endswith("/chat/completions") else url + "/chat/completions"
        self.model_id = model_id
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.max_retries = max_retries
        self.base_delay = base_delay
        self.max_delay = max_delay
        self._client = client or httpx.Client(timeout=timeout_s)
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _delay(self, attempt: int, retry_after: str | None) -> float:
        if retry_after:
            try:
                return min(float(retry_after), self.max_delay)
            except ValueError:
                pass
        with self._rng_lock:
            jitter = self._rng.uniform(0.5, 1.5)
        return min(self.base_delay * (2 ** attempt) * jitter, self.max_delay)

    def build_request(self, prompt: str, cfg: GenConfig) -> dict:
        return {
            "model": self.model_id or cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
        }

    def complete(self, prompt: str, cfg: GenConfig, *, item: Example | None = None,
                 program: Program | None = None) -> Completion:
        payload = self.build_request(prompt, cfg)
        last_problem = "no attempt made"
        for attempt in range(self.max_retries):
            retry_after = None
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers())
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_problem = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp, prompt)
                if resp.status_code not in RETRYABLE_STATUS:
                    raise BackendError(f"HTTP {resp.status_code} from {self.url}",
                                       status=resp.status_code, body=resp.text)
                last_problem = f"HTTP {resp.status_code}"
                retry_after = resp.headers.get("retry-after")
            if attempt + 1 < self.max_retries:
                delay = self._delay(attempt, retry_after)
                log.warning("transient failure (%s); retrying in %.2fs", last_problem, delay)
                self._sleep(delay)
        raise UnavailableError(f"{self.url}: gave up after {self.max_retries} attempts ({last_problem})")

    @staticmethod
    def _parse(resp: httpx.Response, prompt: str) -> Completion:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat-completion response: {exc}") from exc
        if text is None:
            text = ""
        if not isinstance(text, str):
            raise ProtocolError("message content is not a string")
        usage = body.get("usage") or {}
        return Completion(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", count_tokens(prompt))),
            output_tokens=int(usage.get("completion_tokens", count_tokens(text))),
        )

    def close(self) -> None:
        self._client.close()


def backend_from_config(cfg: Mapping) -> tuple[Backend, GenConfig]:
    """Build a backend from a config block (``kind``: simulated | openai)."""
    kind = str(cfg.get("kind", "simulated")).lower()
    gen = GenConfig(model_id=str(cfg.get("model_id", cfg.get("id", kind))),
                    temperature=float(cfg.get("temperature", 0.0)),
                    max_output_tokens=int(cfg.get("max_output_tokens", MAX_OUTPUT_TOKENS)))
    if kind == "simulated":
        spec = SimulatedLMSpec(
            base_accuracy=float(cfg.get("base_accuracy", 0.5)),
            cot_bonus=float(cfg.get("cot_bonus", 0.0)),
            per_demo_bonus=float(cfg.get("per_demo_bonus", 0.0)),
            instruction_bonus={str(k): float(v) for k, v in (cfg.get("instruction_bonus") or {}).items()},
            global_seed=int(cfg.get("global_seed", 0)),
        )
        return SimulatedLM(spec), gen
    if kind in ("openai", "http"):
        if "endpoint" not in cfg:
            raise ConfigError("http backend needs an 'endpoint'")
        return OpenAIChatBackend(
            endpoint=str(cfg["endpoint"]), model_id=gen.model_id,
            api_key_env=str(cfg.get("api_key_env", "OPENAI_API_KEY")),
            timeout_s=float(cfg.get("timeout_s", 60.0)),
            max_retries=int(cfg.get("max_retries", 5)),
        ), gen
    raise ConfigError(f"unknown backend kind {kind!r}")
