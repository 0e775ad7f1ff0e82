"""Completion gateway: chat-completions HTTP backend, scripted mock, disk cache,
retry policy, rate limiting and a cost ledger."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import httpx
import tenacity

log = logging.getLogger(__name__)

MILLION = Decimal(1_000_000)
DEFAULT_MAX_OUTPUT_TOKENS = 8192

# Gemini's OpenAI-compatible endpoint accepts these; "BLOCK_NONE" is the most permissive.
GEMINI_SAFETY_CATEGORIES = (
    "HARM_CATEGORY_HARASSMENT",
    "HARM_CATEGORY_HATE_SPEECH",
    "HARM_CATEGORY_SEXUALLY_EXPLICIT",
    "HARM_CATEGORY_DANGEROUS_CONTENT",
)


class GatewayError(RuntimeError):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int | None, body: str):
        super().__init__(f"provider error (status={status}): {body[:500]}")
        self.status = status
        self.body = body


class TransientProviderError(ProviderError):
    """Timeouts, 429 and 5xx; retried by the gateway."""


class AuthError(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


class ScriptMiss(GatewayError):
    pass


@dataclass(frozen=True)
class ModelProfile:
    name: str
    provider_id: str
    model_name: str
    base_url: str = ""
    price_in: Decimal = Decimal(0)
    price_out: Decimal = Decimal(0)
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    reasoning_effort: str | None = None
    supports_reasoning_effort: bool = False
    supports_sampling_params: bool = True
    max_tokens_field: str = "max_tokens"
    safety_settings: tuple | None = None
    requests_per_second: float | None = None
    api_key_env: str | None = None

    def __post_init__(self):
        for attr in ("price_in", "price_out"):
            value = Decimal(str(getattr(self, attr)))
            if value < 0:
                raise ValueError(f"{attr} must be non-negative")
            object.__setattr__(self, attr, value)
        if self.reasoning_effort not in (None, "low", "medium", "high"):
            raise ValueError(f"bad reasoning_effort {self.reasoning_effort!r}")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelProfile":
        doc = dict(doc)
        if "safety_settings" in doc and doc["safety_settings"] is not None:
            doc["safety_settings"] = tuple(tuple(sorted(s.items())) for s in doc["safety_settings"])
        return cls(**doc)

    @property
    def credential_env(self) -> str:
        if self.api_key_env:
            return self.api_key_env
        return re.sub(r"[^0-9A-Za-z]+", "_", self.provider_id).upper() + "_API_KEY"


def load_profiles(path: str | Path) -> dict[str, ModelProfile]:
    """Read ``{"profiles": [{...}, ...]}`` (or a bare list) into profiles keyed by name."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = doc["profiles"] if isinstance(doc, dict) else doc
    profiles = {}
    for entry in entries:
        profile = ModelProfile.from_dict(entry)
        if profile.name in profiles:
            raise ValueError(f"duplicate profile name {profile.name!r}")
        profiles[profile.name] = profile
    return profiles


@dataclass(frozen=True)
class CompletionRequest:
    profile: ModelProfile
    prompt: str
    temperature: float = 0.0
    top_p: float = 1.0
    reasoning_effort: str | None = None
    # Re-asks after an extraction failure use attempt > 0 so they miss the cache.
    attempt: int = 0

    @property
    def effort(self) -> str | None:
        return self.reasoning_effort or self.profile.reasoning_effort


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int
    cached: bool = False
    latency: float = 0.0


def cache_key(req: CompletionRequest) -> str:
    payload = {
        "provider_id": req.profile.provider_id,
        "model_name": req.profile.model_name,
        "prompt": req.prompt,
        "temperature": req.temperature,
        "top_p": req.top_p,
        "reasoning_effort": req.effort,
    }
    if req.attempt:
        payload["attempt"] = req.attempt
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ResponseCache:
    """One JSON file per cache digest, text stored verbatim."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        path = self._path(digest)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, digest: str, entry: dict) -> None:
        atomic_write_text(self._path(digest), json.dumps(entry, ensure_ascii=False, sort_keys=True))

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


@dataclass(frozen=True)
class LedgerRow:
    profile: str
    provider_id: str
    model_name: str
    input_tokens: int
    output_tokens: int
    cost: Decimal
    cached: bool


@dataclass(frozen=True)
class CostSummary:
    profile: str
    calls: int
    input_tokens: int
    output_tokens: int
    cost: Decimal


class CostLedger:
    def __init__(self):
        self._rows: list[LedgerRow] = []
        self._lock = threading.Lock()

    def record(self, profile: ModelProfile, input_tokens: int, output_tokens: int, cached: bool) -> LedgerRow:
        cost = Decimal(0) if cached else price(profile, input_tokens, output_tokens)
        row = LedgerRow(profile.name, profile.provider_id, profile.model_name,
                        input_tokens, output_tokens, cost, cached)
        with self._lock:
            self._rows.append(row)
        return row

    @property
    def rows(self) -> list[LedgerRow]:
        with self._lock:
            return list(self._rows)

    @property
    def total(self) -> Decimal:
        return sum((r.cost for r in self.rows), Decimal(0))

    def report(self) -> dict[str, CostSummary]:
        groups: "OrderedDict[str, list[LedgerRow]]" = OrderedDict()
        for row in self.rows:
            groups.setdefault(row.profile, []).append(row)
        return {
            name: CostSummary(
                profile=name,
                calls=sum(1 for r in rows if not r.cached),
                input_tokens=sum(r.input_tokens for r in rows),
                output_tokens=sum(r.output_tokens for r in rows),
                cost=sum((r.cost for r in rows), Decimal(0)),
            )
            for name, rows in sorted(groups.items())
        }


def price(profile: ModelProfile, input_tokens: int, output_tokens: int) -> Decimal:
    return (input_tokens * profile.price_in + output_tokens * profile.price_out) / MILLION


def estimate_input_tokens(prompt: str) -> int:
    return math.ceil(len(prompt) / 4)


class TokenBucket:
    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass(frozen=True)
class RawCompletion:
    text: str
    input_tokens: int
    output_tokens: int


class Backend(Protocol):
    def send(self, req: CompletionRequest) -> RawCompletion: ...


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    digest: str | None = None
    contains: str | None = None
    model: str | None = None

    def matches(self, prompt: str, digest: str, model_name: str) -> bool:
        if self.model is not None and self.model != model_name:
            return False
        if self.digest is not None:
            return self.digest == digest
        return self.contains is not None and self.contains in prompt


@dataclass
class MockBackend:
    """Deterministic offline backend.

    Entries are tried in order; the first whose prompt digest or substring
    matches wins; an entry may be pinned to one ``model``. ``responder`` is
    called with the request when no entry matches.
    """

    entries: list[ScriptEntry] = field(default_factory=list)
    responder: Callable[[CompletionRequest], str] | None = None

    def __post_init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = doc["entries"] if isinstance(doc, dict) else doc
        return cls([ScriptEntry(**e) for e in entries])

    def send(self, req: CompletionRequest) -> RawCompletion:
        with self._lock:
            self.calls += 1
        digest = prompt_digest(req.prompt)
        for entry in self.entries:
            if entry.matches(req.prompt, digest, req.profile.model_name):
                text = entry.response
                break
        else:
            if self.responder is None:
                raise ScriptMiss(f"no scripted response for prompt digest {digest[:12]}")
            text = self.responder(req)
        return RawCompletion(text, len(req.prompt.split()), len(text.split()))


class ChatCompletionsBackend:
    """POSTs to ``{base_url}/chat/completions`` with a bearer token."""

    def __init__(self, profile: ModelProfile, client: httpx.Client | None = None, timeout: float = 600.0):
        self.profile = profile
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, req: CompletionRequest) -> dict:
        p = self.profile
        body: dict = {
            "model": p.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            p.max_tokens_field: p.max_output_tokens,
        }
        if p.supports_sampling_params:
            body["temperature"] = req.temperature
            body["top_p"] = req.top_p
        if p.supports_reasoning_effort and req.effort:
            body["reasoning_effort"] = req.effort
        if p.safety_settings is not None:
            body["safety_settings"] = [dict(s) for s in p.safety_settings]
        elif p.provider_id == "google":
            body["safety_settings"] = [
                {"category": c, "threshold": "BLOCK_NONE"} for c in GEMINI_SAFETY_CATEGORIES
            ]
        return body

    def send(self, req: CompletionRequest) -> RawCompletion:
        key = os.environ.get(self.profile.credential_env)
        if not key:
            raise AuthError(f"set {self.profile.credential_env} for provider {self.profile.provider_id!r}")
        url = self.profile.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = self.client.post(url, json=self.payload(req), headers={"Authorization": f"Bearer {key}"})
        except httpx.TimeoutException as exc:
            raise TransientProviderError(None, f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientProviderError(None, f"transport: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"{resp.status_code}: {resp.text[:200]}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(resp.status_code, resp.text)
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        data = resp.json()
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ProviderError(resp.status_code, resp.text) from None
        usage = data.get("usage") or {}
        return RawCompletion(
            text,
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
        )


class Gateway:
    """Uniform ``complete`` over registered backends.

    Cache hits never reach a backend. Retries cover transient provider
    failures only. ``budget_cap`` is checked before each uncached call using
    the estimated prompt size plus the profile's full output allowance.
    """

    def __init__(
        self,
        backends: Mapping[str, Backend] | None = None,
        cache: ResponseCache | None = None,
        ledger: CostLedger | None = None,
        budget_cap: Decimal | float | str | None = None,
        max_attempts: int = 4,
        retry_wait: tenacity.wait.wait_base | None = None,
        http_client: httpx.Client | None = None,
    ):
        self.backends: dict[str, Backend] = dict(backends or {})
        self.cache = cache
        self.ledger = ledger or CostLedger()
        self.budget_cap = None if budget_cap is None else Decimal(str(budget_cap))
        self.max_attempts = max_attempts
        self.retry_wait = retry_wait if retry_wait is not None else tenacity.wait_exponential(min=1, max=60)
        self.http_client = http_client
        self.provider_calls = 0
        self._lock = threading.Lock()
        self._buckets: dict[str, TokenBucket] = {}
        self._http: dict[str, ChatCompletionsBackend] = {}

    def _backend(self, profile: ModelProfile) -> Backend:
        if profile.provider_id in self.backends:
            return self.backends[profile.provider_id]
        with self._lock:
            if profile.name not in self._http:
                self._http[profile.name] = ChatCompletionsBackend(profile, client=self.http_client)
            return self._http[profile.name]

    def _bucket(self, profile: ModelProfile) -> TokenBucket | None:
        if not profile.requests_per_second:
            return None
        with self._lock:
            if profile.name not in self._buckets:
                self._buckets[profile.name] = TokenBucket(profile.requests_per_second)
            return self._buckets[profile.name]

    def _check_budget(self, req: CompletionRequest) -> None:
        if self.budget_cap is None:
            return
        estimate = price(req.profile, estimate_input_tokens(req.prompt), req.profile.max_output_tokens)
        spent = self.ledger.total
        if spent + estimate > self.budget_cap:
            raise BudgetExceeded(
                f"call to {req.profile.name} estimated at {estimate} would exceed cap "
                f"{self.budget_cap} (spent {spent})"
            )

    def complete(self, req: CompletionRequest) -> Completion:
        digest = cache_key(req)
        if self.cache is not None:
            hit = self.cache.get(digest)
            if hit is not None:
                self.ledger.record(req.profile, hit["input_tokens"], hit["output_tokens"], cached=True)
                return Completion(hit["text"], hit["input_tokens"], hit["output_tokens"], cached=True)

        self._check_budget(req)
        backend = self._backend(req.profile)
        bucket = self._bucket(req.profile)

        def attempt() -> RawCompletion:
            if bucket is not None:
                bucket.acquire()
            with self._lock:
                self.provider_calls += 1
            return backend.send(req)

        retrying = tenacity.Retrying(
            stop=tenacity.stop_after_attempt(self.max_attempts),
            wait=self.retry_wait,
            retry=tenacity.retry_if_exception_type(TransientProviderError),
            before_sleep=tenacity.before_sleep_log(log, logging.INFO),
            reraise=True,
        )
        start = time.monotonic()
        raw = retrying(attempt)
        latency = time.monotonic() - start

        if self.cache is not None:
            self.cache.put(
                digest,
                {
                    "text": raw.text,
                    "input_tokens": raw.input_tokens,
                    "output_tokens": raw.output_tokens,
                    "model_name": req.profile.model_name,
                    "provider_id": req.profile.provider_id,
                },
            )
        self.ledger.record(req.profile, raw.input_tokens, raw.output_tokens, cached=False)
        return Completion(raw.text, raw.input_tokens, raw.output_tokens, cached=False, latency=latency)

    def ledger_report(self) -> dict[str, CostSummary]:
        return self.ledger.report()


def mock_profile(name: str = "mock", model_name: str | None = None, **kwargs) -> ModelProfile:
    return ModelProfile(name=name, provider_id="mock", model_name=model_name or name, **kwargs)


def summarize_costs(summaries: Iterable[CostSummary]) -> dict:
    out = {
        s.profile: {
            "calls": s.calls,
            "input_tokens": s.input_tokens,
            "output_tokens": s.output_tokens,
            "cost": str(s.cost),
        }
        for s in summaries
    }
    out["_total"] = str(sum((Decimal(v["cost"]) for v in out.values()), Decimal(0)))
    return out
