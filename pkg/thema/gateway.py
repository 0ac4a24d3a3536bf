# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Provider agnostic access to chat completion and text embedding endpoints

Live providers speak the common JSON-over-HTTP chat completions and
embeddings wire shape. Mock providers answer offline and deterministically.
"""

import asyncio
import logging
import re
import time
import zlib
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import TracebackType
from typing import Any, Protocol

import httpx
import numpy as np
from tenacity import (
    AsyncRetrying,
    RetryCallState,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from thema.errors import (
    AuthenticationError,
    ConfigError,
    EmbeddingError,
    FixtureNotFoundError,
    ProviderError,
    RetryExhaustedError,
)

try:
    import tomllib
except ImportError:
    import tomli as tomllib  # type: ignore[no-redef]

logger = logging.getLogger(__name__)

DEFAULT_CHAT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_EMBEDDING_ENDPOINT = "https://api.openai.com/v1/embeddings"
DEFAULT_REQUEST_TIMEOUT = 120  # in seconds
DEFAULT_PARALLELISM = 4
DEFAULT_RATE_LIMIT = 30  # requests per minute
DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_MAX_OUTPUT_TOKENS = 4096
DEFAULT_EMBEDDING_BATCH_SIZE = 64
DEFAULT_MOCK_EMBEDDING_DIMENSION = 256
MIN_MOCK_EMBEDDING_DIMENSION = 8

MAX_TEMPERATURE = 2.0

FIXTURES_FILE = "fixtures.toml"

_TOKEN_PATTERN = re.compile(r"[^\W\d_]+")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    seed_tag: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= MAX_TEMPERATURE:
            raise ConfigError(
                f"Temperature {self.temperature} is not within "
                f"[0, {MAX_TEMPERATURE:g}]"
            )
        if not self.prompt:
            raise ConfigError("Can't send an empty prompt")
        if self.max_output_tokens < 1:
            raise ConfigError("max_output_tokens must be positive")


@dataclass(frozen=True)
class TokenUsage:
    """
    Args:
        retries: Extra HTTP attempts spent on transient failures
    """

    input: int = 0
    output: int = 0
    retries: int = 0

    @classmethod
    def total(cls, usage: Iterable["TokenUsage"]) -> "TokenUsage":
        items = list(usage)
        return cls(
            input=sum(u.input for u in items),
            output=sum(u.output for u in items),
            retries=sum(u.retries for u in items),
        )


@dataclass(frozen=True)
class ChatResponse:
    """
    Raw provider answer before any parsing

    Args:
        truncated: The provider stopped because of the output token limit
        attempts: Number of HTTP attempts needed for this response
    """

    text: str
    model: str
    token_usage: TokenUsage = field(default_factory=TokenUsage)
    latency_ms: int = 0
    truncated: bool = False
    attempts: int = 1

    @property
    def usage(self) -> TokenUsage:
        return replace(self.token_usage, retries=self.attempts - 1)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class ChatProvider(Protocol):
    @property
    def name(self) -> str: ...

    async def chat(self, request: ChatRequest) -> ChatResponse: ...


class EmbeddingProvider(Protocol):
    @property
    def name(self) -> str: ...

    async def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


@dataclass(frozen=True)
class RetryPolicy:
    """
    Exponential backoff for transient failures

    The n-th retry waits base_delay * factor ** (n - 1) seconds, at most
    max_delay.
    """

    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    base_delay: float = 1.0
    factor: float = 2.0
    max_delay: float = 16.0

    def __post_init__(self) -> None:
        if not 1 <= self.max_attempts <= DEFAULT_MAX_ATTEMPTS:
            raise ConfigError(
                f"max_attempts must be between 1 and {DEFAULT_MAX_ATTEMPTS}"
            )

    def delays(self) -> list[float]:
        return [
            min(self.base_delay * self.factor**n, self.max_delay)
            for n in range(self.max_attempts - 1)
        ]


class RateLimiter:
    """
    Token bucket limiting requests per minute

    Args:
        rate_per_minute: Sustained request rate. The bucket holds at most
            this many tokens. Zero or None disables limiting.
        clock: Monotonic clock, replaceable for tests
    """

    def __init__(
        self,
        rate_per_minute: float | None,
        *,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self._clock = clock
        self._rate = (rate_per_minute or 0) / 60.0
        self._capacity = max(1.0, float(rate_per_minute or 0))
        self._tokens = self._capacity
        self._updated = clock()
        self._lock = asyncio.Lock()

    async def acquire(self) -> None:
        if not self._rate:
            return

        async with self._lock:
            while True:
                now = self._clock()
                self._tokens = min(
                    self._capacity,
                    self._tokens + (now - self._updated) * self._rate,
                )
                self._updated = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                await asyncio.sleep((1 - self._tokens) / self._rate)


class _TransientError(ProviderError):
    pass


def _log_retry(retry_state: RetryCallState) -> None:
    outcome = retry_state.outcome
    reason = outcome.exception() if outcome else None
    wait = retry_state.next_action.sleep if retry_state.next_action else 0
    logger.warning(
        "Attempt %d failed (%s). Retrying in %.1f seconds.",
        retry_state.attempt_number,
        reason,
        wait,
    )


class HttpProvider:
    """
    Shared transport for JSON-over-HTTP providers

    Args:
        endpoint: URL receiving the JSON POST requests
        api_key: Credential sent as bearer token. Never logged.
        timeout: Request timeout in seconds
        parallelism: Maximum number of concurrent requests
        rate_limit: Requests per minute
        retry_policy: Backoff for HTTP 429, 5xx and timeouts
        client: An existing httpx client, e.g. with a mock transport
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        *,
        timeout: float = DEFAULT_REQUEST_TIMEOUT,
        parallelism: int = DEFAULT_PARALLELISM,
        rate_limit: float | None = DEFAULT_RATE_LIMIT,
        retry_policy: RetryPolicy | None = None,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.endpoint = endpoint
        self._api_key = api_key
        self._timeout = timeout
        self._semaphore = asyncio.Semaphore(parallelism)
        self._limiter = RateLimiter(rate_limit)
        self._retry_policy = retry_policy or RetryPolicy()
        self._client = client
        self._owns_client = client is None

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(endpoint={self.endpoint!r})"

    async def __aenter__(self) -> "HttpProvider":
        return self

    async def __aexit__(
        self,
        exc_type: type[BaseException] | None,
        exc_val: BaseException | None,
        exc_tb: TracebackType | None,
    ) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        if self._client is not None and self._owns_client:
            await self._client.aclose()
            self._client = None

    def _get_client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self._timeout)
        return self._client

    async def _post_once(self, payload: dict[str, Any]) -> dict[str, Any]:
        await self._limiter.acquire()
        try:
            response = await self._get_client().post(
                self.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self._api_key}"},
            )
        except httpx.TimeoutException as e:
            raise _TransientError(f"timeout after {self._timeout}s") from e
        except httpx.TransportError as e:
            raise _TransientError(f"transport error {e}") from e

        status = response.status_code
        if status in (401, 403):
            raise AuthenticationError(
                f"{self.endpoint} rejected the credential (HTTP {status})"
            )
        if status == 429 or status >= 500:
            raise _TransientError(f"HTTP {status}")
        if status >= 400:
            raise ProviderError(
                f"{self.endpoint} returned HTTP {status}: "
                f"{response.text[:200]}"
            )

        try:
            return response.json()
        except ValueError as e:
            raise ProviderError(
                f"{self.endpoint} returned invalid JSON"
            ) from e

    async def post_json(self, payload: dict[str, Any]) -> tuple[Any, int]:
        """
        POST a JSON payload with retries

        Returns the decoded JSON answer and the number of attempts used.
        """
        policy = self._retry_policy
        retrying = AsyncRetrying(
            stop=stop_after_attempt(policy.max_attempts),
            wait=wait_exponential(
                multiplier=policy.base_delay,
                exp_base=policy.factor,
                max=policy.max_delay,
            ),
            retry=retry_if_exception_type(_TransientError),
            before_sleep=_log_retry,
            reraise=True,
        )
        attempts = 0
        async with self._semaphore:
            try:
                async for attempt in retrying:
                    with attempt:
                        attempts = attempt.retry_state.attempt_number
                        data = await self._post_once(payload)
            except _TransientError as e:
                raise RetryExhaustedError(attempts, str(e)) from e

        if attempts > 1:
            logger.info(
                "Request to %s succeeded after %d retries",
                self.endpoint,
                attempts - 1,
            )
        return data, attempts


class HttpChatProvider(HttpProvider):
    """
    Chat completions over HTTP
    """

    @property
    def name(self) -> str:
        return f"http:{self.endpoint}"

    async def chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        start = time.monotonic()
        data, attempts = await self.post_json(payload)
        latency_ms = int((time.monotonic() - start) * 1000)

        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderError(
                f"Unexpected chat response shape from {self.endpoint}"
            ) from e

        if not text:
            raise ProviderError(f"{self.endpoint} returned an empty answer")

        truncated = choice.get("finish_reason") == "length"
        if truncated:
            logger.warning(
                "Response for %s was truncated at %d output tokens",
                request.seed_tag or request.model,
                request.max_output_tokens,
            )

        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            model=data.get("model", request.model),
            token_usage=TokenUsage(
                input=int(usage.get("prompt_tokens", 0)),
                output=int(usage.get("completion_tokens", 0)),
            ),
            latency_ms=latency_ms,
            truncated=truncated,
            attempts=attempts,
        )


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise EmbeddingError("Can't embed an empty list of texts")
    for position, text in enumerate(texts):
        if not text or not text.strip():
            raise EmbeddingError(f"Can't embed empty text at {position}")


class HttpEmbeddingProvider(HttpProvider):
    """
    Text embeddings over HTTP

    Batching is transparent. All vectors of one provider must share a
    dimension.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        *,
        model: str,
        batch_size: int = DEFAULT_EMBEDDING_BATCH_SIZE,
        **kwargs: Any,
    ) -> None:
        super().__init__(endpoint, api_key, **kwargs)
        self.model = model
        self.batch_size = batch_size
        self._dimension: int | None = None

    @property
    def name(self) -> str:
        return self.model

    async def _embed_batch(self, batch: Sequence[str]) -> list[EmbeddingVector]:
        data, _ = await self.post_json({"model": self.model, "input": batch})
        try:
            items = sorted(data["data"], key=lambda item: item["index"])
            vectors = [
                EmbeddingVector(tuple(float(v) for v in item["embedding"]))
                for item in items
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise EmbeddingError(
                f"Unexpected embedding response shape from {self.endpoint}"
            ) from e

        if len(vectors) != len(batch):
            raise EmbeddingError(
                f"Requested {len(batch)} embeddings but got {len(vectors)}"
            )
        return vectors

    async def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        batches = [
            texts[i : i + self.batch_size]
            for i in range(0, len(texts), self.batch_size)
        ]
        results = await asyncio.gather(
            *(self._embed_batch(batch) for batch in batches)
        )
        vectors = [vector for batch in results for vector in batch]

        for vector in vectors:
            if self._dimension is None:
                self._dimension = vector.dimension
            elif vector.dimension != self._dimension:
                raise EmbeddingError(
                    f"Embedding dimension mismatch: {vector.dimension} != "
                    f"{self._dimension}"
                )
        return vectors


@dataclass(frozen=True)
class FixtureMatcher:
    """
    Selects a canned response by a substring of the prompt and optionally
    by the requested temperature
    """

    substring: str
    temperature: float | None = None

    def matches(self, request: ChatRequest) -> bool:
        if self.substring not in request.prompt:
            return False
        return (
            self.temperature is None
            or abs(self.temperature - request.temperature) < 1e-9
        )


class MockChatProvider:
    """
    Offline chat provider answering with canned responses

    Fixtures are tried in order and the first matching one wins, so list
    the more specific matchers first.
    """

    def __init__(self, fixtures: Sequence[tuple[FixtureMatcher, str]]) -> None:
        if not fixtures:
            raise ConfigError("A mock chat provider needs at least one fixture")
        self._fixtures = list(fixtures)
        self.requests: list[ChatRequest] = []

    @property
    def name(self) -> str:
        return "mock"

    async def chat(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        for matcher, text in self._fixtures:
            if matcher.matches(request):
                return ChatResponse(
                    text=text,
                    model=request.model,
                    token_usage=TokenUsage(
                        input=len(request.prompt.split()),
                        output=len(text.split()),
                    ),
                )

        raise FixtureNotFoundError(
            f"no fixture matches the prompt for {request.seed_tag or 'request'}"
            f" at temperature {request.temperature:g}"
        )


def mock_chat_provider(
    fixtures: Mapping[str | FixtureMatcher, str],
) -> MockChatProvider:
    """
    Create a mock chat provider from an ordered mapping of matcher to response

    A plain string key matches as prompt substring at any temperature.
    """
    return MockChatProvider(
        [
            (
                key
                if isinstance(key, FixtureMatcher)
                else FixtureMatcher(substring=key),
                text,
            )
            for key, text in fixtures.items()
        ]
    )


def load_fixtures(directory: str | Path) -> MockChatProvider:
    """
    Load a mock chat provider from a fixture directory

    The directory contains a fixtures.toml file with an ordered list of
    fixtures::

        [[chat]]
        match = "int01"
        temperature = 0.25  # optional
        response-file = "int01.json"  # or: response = "..."
    """
    directory = Path(directory)
    fixtures_file = directory / FIXTURES_FILE
    try:
        content = tomllib.loads(fixtures_file.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Can't load fixtures {fixtures_file}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(
            f"{fixtures_file} is not a valid TOML file: {e}"
        ) from e

    fixtures: list[tuple[FixtureMatcher, str]] = []
    for number, entry in enumerate(content.get("chat", []), start=1):
        if "match" not in entry:
            raise ConfigError(f"Fixture {number} in {fixtures_file} lacks match")

        if "response-file" in entry:
            response_path = directory / entry["response-file"]
            try:
                text = response_path.read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(
                    f"Can't read fixture response {response_path}: {e}"
                ) from e
        elif "response" in entry:
            text = entry["response"]
        else:
            raise ConfigError(
                f"Fixture {number} in {fixtures_file} needs response or "
                "response-file"
            )

        temperature = entry.get("temperature")
        fixtures.append(
            (
                FixtureMatcher(
                    substring=entry["match"],
                    temperature=None if temperature is None else float(temperature),
                ),
                text,
            )
        )

    return MockChatProvider(fixtures)


def hash_tokens(text: str) -> list[str]:
    """
    Tokens used by the mock embedding: lowercase runs of letters

    A text without any letter is used as a single token.
    """
    tokens = _TOKEN_PATTERN.findall(text.lower())
    return tokens or [text.strip().lower()]


def hash_bucket(token: str, dimension: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % dimension


class MockEmbeddingProvider:
    """
    Deterministic bag-of-words hash embedding

    The text is lowercased and split into runs of letters. Every token is
    mapped to the bucket crc32(utf-8 token) mod dimension, occurrences are
    counted per bucket and the count vector is L2 normalized.
    """

    def __init__(self, dimension: int = DEFAULT_MOCK_EMBEDDING_DIMENSION) -> None:
        if dimension < MIN_MOCK_EMBEDDING_DIMENSION:
            raise ConfigError(
                f"Mock embedding dimension must be at least "
                f"{MIN_MOCK_EMBEDDING_DIMENSION}"
            )
        self.dimension = dimension

    @property
    def name(self) -> str:
        return f"mock-hash-{self.dimension}"

    def embed_one(self, text: str) -> EmbeddingVector:
        counts = Counter(
            hash_bucket(token, self.dimension) for token in hash_tokens(text)
        )
        values = np.zeros(self.dimension, dtype=np.float64)
        for bucket, count in counts.items():
            values[bucket] = count
        values /= np.linalg.norm(values)
        return EmbeddingVector(tuple(float(v) for v in values))

    async def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        return [self.embed_one(text) for text in texts]


def mock_embedding_provider(
    dimension: int = DEFAULT_MOCK_EMBEDDING_DIMENSION,
) -> MockEmbeddingProvider:
    """
    Create a deterministic bag-of-words hash embedder for offline runs
    """
    return MockEmbeddingProvider(dimension)
