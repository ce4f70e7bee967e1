"""Chat-completion backends: an HTTP client and a deterministic mock recruiter."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import httpx

logger = logging.getLogger(__name__)

TRANSIENT_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """The endpoint could not be reached after all retries."""


class ProtocolError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"endpoint returned HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class CapabilityError(GatewayError):
    """The backend cannot provide something the request asked for (e.g. logprobs)."""


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    max_tokens: int = 16
    temperature: float = 0.0
    want_logprobs: bool = True
    top_logprobs_k: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((str(r), str(c)) for r, c in self.messages))
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("a chat request needs at least one user message")
        if any(not content for _, content in self.messages):
            raise ValueError("message content must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 1 <= self.top_logprobs_k <= 20:
            raise ValueError("top_logprobs_k must be in [1, 20]")

    @classmethod
    def single(cls, prompt: str, **kwargs) -> "ChatRequest":
        return cls(messages=(("user", prompt),), **kwargs)

    @property
    def prompt(self) -> str:
        return "\n".join(c for r, c in self.messages if r == "user")

    def payload(self, model: str) -> dict:
        body = {
            "model": model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }
        if self.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = self.top_logprobs_k
        return body


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float
    alternatives: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    tokens: tuple[TokenLogprob, ...] = ()
    attempts: int = field(default=1, compare=False)

    @property
    def has_logprobs(self) -> bool:
        return bool(self.tokens)


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    parallelism: int = 4
    requests_per_second: float | None = None
    backoff_base: float = 0.5
    backoff_max: float = 30.0

    @property
    def identity(self) -> str:
        return f"{self.base_url.rstrip('/')}#{self.model}"


def parse_chat_response(body: Mapping) -> ChatResponse:
    """Decode a chat-completions JSON body into a :class:`ChatResponse`."""
    try:
        choice = body["choices"][0]
        text = choice["message"]["content"] or ""
    except (KeyError, IndexError, TypeError):
        raise GatewayError("malformed chat-completions response") from None
    tokens = []
    lp = choice.get("logprobs") or {}
    for item in lp.get("content") or ():
        alts = sorted(
            ((a["token"], float(a["logprob"])) for a in item.get("top_logprobs") or ()),
            key=lambda t: -t[1],
        )
        tokens.append(TokenLogprob(item["token"], min(float(item["logprob"]), 0.0), tuple(alts)))
    return ChatResponse(text=text, tokens=tuple(tokens))


class _RateLimiter:
    def __init__(self, rate: float | None):
        self.interval = 1.0 / rate if rate else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self, sleep: Callable[[float], None]) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + self.interval
        if delay > 0:
            sleep(delay)


class ChatClient:
    """HTTP chat-completions client with retries, backoff and a rate limit.

    ``transport`` is handed to :class:`httpx.Client`, which lets tests plug
    in an :class:`httpx.MockTransport`.
    """

    def __init__(
        self,
        endpoint: EndpointConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self._sleep = sleep
        self._limiter = _RateLimiter(endpoint.requests_per_second)
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            token = os.environ.get(endpoint.api_key_env)
            if not token:
                raise GatewayError(f"environment variable {endpoint.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self._http = httpx.Client(
            base_url=endpoint.base_url.rstrip("/"),
            headers=headers,
            timeout=endpoint.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt: int) -> float:
        return min(self.endpoint.backoff_base * (2 ** (attempt - 1)), self.endpoint.backoff_max)

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = request.payload(self.endpoint.model)
        max_attempts = self.endpoint.max_retries + 1
        last_exc: Exception | None = None
        for attempt in range(1, max_attempts + 1):
            self._limiter.wait(self._sleep)
            try:
                resp = self._http.post("/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last_exc = TransportError(f"{type(exc).__name__}: {exc}")
            else:
                if resp.status_code < 300:
                    out = parse_chat_response(resp.json())
                    if request.want_logprobs and not out.has_logprobs:
                        raise CapabilityError(f"{self.endpoint.identity} returned no logprobs")
                    return ChatResponse(out.text, out.tokens, attempts=attempt)
                if resp.status_code not in TRANSIENT_STATUS:
                    raise ProtocolError(resp.status_code, resp.text)
                last_exc = ProtocolError(resp.status_code, resp.text)
            if attempt < max_attempts:
                delay = self._backoff(attempt)
                logger.warning("attempt %d/%d failed (%s); retrying in %.2fs", attempt, max_attempts, last_exc, delay)
                self._sleep(delay)
        assert last_exc is not None
        raise last_exc

    def complete_many(self, requests: Sequence[ChatRequest]) -> list[ChatResponse]:
        """Complete requests concurrently; results are returned in input order."""
        with ThreadPoolExecutor(max_workers=max(1, self.endpoint.parallelism)) as pool:
            return list(pool.map(self.complete, requests))


def complete(request: ChatRequest, endpoint: EndpointConfig, **client_kwargs) -> ChatResponse:
    with ChatClient(endpoint, **client_kwargs) as client:
        return client.complete(request)


class HttpBackend:
    """Adapter giving :class:`ChatClient` the backend call signature used by elicitation."""

    def __init__(self, client: ChatClient):
        self.client = client

    @property
    def identity(self) -> str:
        return self.client.endpoint.identity

    @property
    def parallelism(self) -> int:
        return self.client.endpoint.parallelism

    def complete(self, request: ChatRequest, *, job=None, persona=None, run: int = 0) -> ChatResponse:
        return self.client.complete(request)


# --- mock recruiter ------------------------------------------------------


@dataclass(frozen=True)
class MockRecruiterParams:
    base_female_logodds: float = 0.0
    keyword_weights: Mapping[str, float] = field(default_factory=dict)
    compliance_boost: float = 0.0
    refusal_prob: float = 0.0
    persona_modifiers: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    # log-odds shift when the prompt lists Ms. X before Mr. X
    order_shift: float = 0.0
    # identity -> trait dimension -> mean perceived score on the 1..7 scale
    tipi_profiles: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    tipi_noise: float = 0.6

    def __post_init__(self) -> None:
        if not 0.0 <= self.refusal_prob <= 1.0:
            raise ValueError("refusal_prob must lie in [0, 1]")
        if self.compliance_boost < 0:
            raise ValueError("compliance_boost must be non-negative")

    def to_dict(self) -> dict:
        return {
            "base_female_logodds": self.base_female_logodds,
            "keyword_weights": dict(self.keyword_weights),
            "compliance_boost": self.compliance_boost,
            "refusal_prob": self.refusal_prob,
            "persona_modifiers": dict(self.persona_modifiers),
            "seed": self.seed,
            "order_shift": self.order_shift,
            "tipi_profiles": {k: dict(v) for k, v in self.tipi_profiles.items()},
            "tipi_noise": self.tipi_noise,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MockRecruiterParams":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown mock parameters: {sorted(unknown)}")
        return cls(**d)


REFUSAL_TEXT = (
    "I cannot recommend one applicant over the other based on gender; "
    "both candidates have the same skills and background."
)

_RECOMMENDATION_MARKERS = ("who would you call for", "Job advertisement:")
_TIPI_MARKER = "Answer with a single number."


def _log_sigmoid(z: float) -> float:
    return -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))


def _uniforms(*key) -> tuple[float, float, float]:
    """Three uniforms in [0, 1) derived from ``key`` by hashing (counter-based)."""
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=24).digest()
    return tuple((v >> 11) * 2.0**-53 for v in struct.unpack("<3Q", digest))


def _persona_key(persona) -> str:
    if persona is None:
        return "base"
    return persona.key if hasattr(persona, "key") else str(persona)


class MockRecruiter:
    """Simulated LLM recruiter whose choices follow a planted logistic model.

    The log-odds of recommending Ms. X are the base value plus the weight of
    every keyword found in the job text, plus ``compliance_boost`` towards an
    explicitly requested gender, plus the persona modifier (and the order
    shift for Ms.-first prompts). All randomness is keyed on
    ``(seed, job id, persona)`` so results do not depend on call order.
    """

    identity = "mock-recruiter"
    parallelism = 1

    def __init__(self, params: MockRecruiterParams):
        self.params = params
        self._patterns = {
            kw: re.compile(r"\b" + re.escape(kw.lower()) + r"\b") for kw in params.keyword_weights
        }

    def female_logodds(self, job, persona=None, order_arm: str = "mr_first") -> float:
        p = self.params
        text = job.job_text.lower()
        z = p.base_female_logodds
        for kw, pat in self._patterns.items():
            if pat.search(text):
                z += p.keyword_weights[kw]
        if job.explicit_request == "female":
            z += p.compliance_boost
        elif job.explicit_request == "male":
            z -= p.compliance_boost
        z += p.persona_modifiers.get(_persona_key(persona), 0.0)
        if order_arm == "ms_first":
            z += p.order_shift
        return z

    def female_probability(self, job, persona=None, order_arm: str = "mr_first") -> float:
        return math.exp(_log_sigmoid(self.female_logodds(job, persona, order_arm)))

    def complete(self, request: ChatRequest, *, job=None, persona=None, run: int = 0) -> ChatResponse:
        prompt = request.prompt
        if _TIPI_MARKER in prompt:
            return self._tipi_reply(prompt, persona, run)
        if not all(m in prompt for m in _RECOMMENDATION_MARKERS) or job is None:
            raise GatewayError("mock recruiter received an unrecognized prompt")
        arm = "ms_first" if "either Ms. X or Mr. X" in prompt else "mr_first"
        u_refuse, u_choice, _ = _uniforms(self.params.seed, job.id, _persona_key(persona))
        if u_refuse < self.params.refusal_prob:
            return ChatResponse(text=REFUSAL_TEXT, tokens=self._plain_tokens(REFUSAL_TEXT) if request.want_logprobs else ())

        z = self.female_logodds(job, persona, arm)
        lp_ms, lp_mr = _log_sigmoid(z), _log_sigmoid(-z)
        female = u_choice < math.exp(lp_ms)
        chosen, chosen_lp = ("Ms", lp_ms) if female else ("Mr", lp_mr)
        text = f"{chosen}. X"
        if not request.want_logprobs:
            return ChatResponse(text=text)
        alts = tuple(sorted((("Ms", lp_ms), ("Mr", lp_mr)), key=lambda t: -t[1]))[: request.top_logprobs_k]
        tokens = (
            TokenLogprob(chosen, chosen_lp, alts),
            TokenLogprob(".", 0.0, ((".", 0.0),)),
            TokenLogprob(" X", 0.0, ((" X", 0.0),)),
        )
        return ChatResponse(text=text, tokens=tokens)

    @staticmethod
    def _plain_tokens(text: str) -> tuple[TokenLogprob, ...]:
        return tuple(TokenLogprob(w, 0.0, ((w, 0.0),)) for w in re.findall(r"\S+\s*", text))

    def _tipi_reply(self, prompt: str, persona, run: int) -> ChatResponse:
        from .elicitation import TIPI_ITEMS  # local import: elicitation depends on this module

        m = re.search(r"I see (.+) as (.+)\.\n", prompt)
        if m is None:
            raise GatewayError("mock recruiter received a malformed TIPI prompt")
        identity, adjectives = m.group(1), m.group(2)
        for trait, items in TIPI_ITEMS.items():
            for keyed, adj in items.items():
                if adj == adjectives:
                    break
            else:
                continue
            break
        else:
            raise GatewayError(f"unknown TIPI item {adjectives!r}")
        mean = self.params.tipi_profiles.get(identity, {}).get(trait, 4.0)
        target = mean if keyed == "positive" else 8.0 - mean
        u1, u2, _ = _uniforms(self.params.seed, "tipi", identity, trait, keyed, run)
        # Box-Muller normal jitter around the planted score
        noise = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
        score = int(min(7, max(1, round(target + self.params.tipi_noise * noise))))
        return ChatResponse(text=str(score), tokens=(TokenLogprob(str(score), 0.0, ((str(score), 0.0),)),))


def mock_complete(request: ChatRequest, params: MockRecruiterParams, job, persona=None) -> ChatResponse:
    return MockRecruiter(params).complete(request, job=job, persona=persona)
