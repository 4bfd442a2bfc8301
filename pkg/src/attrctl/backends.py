"""Rewriter backends.

A rewriter turns a :class:`~attrctl.prompts.RewritePrompt` into candidate
text. ``SyntheticRewriter`` is a deterministic lexical test double driven by
the structured directives; ``HttpRewriter`` posts the rendered prompt to an
external text-generation service.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .errors import (
    BackendTimeout,
    ConfigurationError,
    ContractViolation,
    EmptyOutputError,
    ProtocolError,
    ServiceError,
)
from .prompts import Direction, RewriteDirective, RewritePrompt
from .text import tokenize

log = logging.getLogger(__name__)

TOKEN_ENV_VAR = "ATTRCTL_BACKEND_TOKEN"
DEFAULT_FILLERS = ("then", "there", "also", "again", "still", "just")


class Rewriter(Protocol):
    def rewrite(self, prompt: RewritePrompt, seed: int) -> str: ...


@dataclass(frozen=True)
class RewriteRequest:
    prompt: str
    source_text: str
    max_tokens: int = 512
    temperature: float = 0.7
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ContractViolation("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ContractViolation("temperature must be >= 0")

    def to_wire(self) -> dict:
        return {
            "prompt": self.prompt,
            "source": self.source_text,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "id": self.request_id,
        }


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str
    timeout_ms: int = 30_000
    max_retries: int = 3
    auth_token: str | None = field(default=None, repr=False)
    max_tokens: int = 512
    temperature: float = 0.7

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ContractViolation("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ContractViolation("max_retries must be >= 0")

    def token(self) -> str | None:
        return os.environ.get(TOKEN_ENV_VAR) or self.auth_token


# -- synthetic backend -------------------------------------------------------

@dataclass(frozen=True)
class SubstitutionTable:
    """Per-dimension insertable and removable terms.

    ``known_terms`` is every term any scorer reacts to; words outside it are
    treated as neutral and may be overwritten by insertions.
    """

    entries: Mapping[str, tuple[tuple[str, ...], tuple[str, ...]]]
    known_terms: frozenset[str] = frozenset()
    fillers: tuple[str, ...] = DEFAULT_FILLERS
    weights: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        entries = {k: (tuple(v[0]), tuple(v[1])) for k, v in self.entries.items()}
        known = set(self.known_terms)
        for ins, rem in entries.values():
            known.update(ins)
            known.update(rem)
        fillers = tuple(f for f in self.fillers if f not in known)
        if not fillers:
            raise ConfigurationError("every filler word collides with a lexicon term")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "known_terms", frozenset(known))
        object.__setattr__(self, "fillers", fillers)

    @classmethod
    def from_lexicons(cls, lexicons: Mapping[str, Mapping[str, float]]) -> "SubstitutionTable":
        entries = {}
        known: set[str] = set()
        for dim, lex in lexicons.items():
            positive = tuple(sorted(t for t, w in lex.items() if w > 0))
            entries[dim] = (positive, positive)
            known.update(lex)
        return cls(entries, frozenset(known), weights={d: dict(lex) for d, lex in lexicons.items()})

    def insertable(self, dim: str) -> tuple[str, ...]:
        return self.entries.get(dim, ((), ()))[0]

    def removable(self, dim: str) -> tuple[str, ...]:
        return self.entries.get(dim, ((), ()))[1]

    def terms(self, dim: str) -> set[str]:
        ins, rem = self.entries.get(dim, ((), ()))
        return set(ins) | set(rem)

    def weight(self, dim: str, term: str) -> float:
        if dim in self.weights:
            return self.weights[dim].get(term, 0.0)
        return 1.0 if term in self.terms(dim) else 0.0


_WORD = re.compile(r"^(\W*)(.*?)(\W*)$", re.S)
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def _norm(word: str) -> str:
    toks = tokenize(word)
    return toks[0] if len(toks) == 1 else " ".join(toks)


def _replace_core(word: str, term: str) -> str:
    prefix, core, suffix = _WORD.match(word).groups()
    if core[:1].isupper():
        term = term[:1].upper() + term[1:]
    return f"{prefix}{term}{suffix}"


def _position_hash(seed: int, dim: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{dim}".encode()).digest()[:8], "big")


def synthetic_rewrite(
    source: str,
    directives: Sequence[RewriteDirective],
    table: SubstitutionTable,
    seed: int,
) -> str:
    """Apply directives as lexical edits.

    increase: overwrite 1 (slight) or 3 (significant) neutral words with the
    dimension's insertable terms, starting in sentence
    ``hash(seed, dim) mod n_sentences``. decrease: replace up to that many
    removable-term occurrences with filler words. Terms belonging to a
    maintained dimension are never inserted; an occurrence shared with a
    maintained dimension is swapped for one of that dimension's own terms
    instead of a filler. A dimension being reduced never gains terms from
    another directive's insertions.
    """
    if not directives:
        return source
    rng = random.Random(seed)
    sentences = [s.split() for s in _SENTENCE_END.split(source.strip())] or [[]]
    sentences = [s for s in sentences if s] or [[]]

    protected: set[str] = set()
    lowered: set[str] = set()
    maintained: list[str] = []
    for d in directives:
        if d.direction is Direction.MAINTAIN:
            protected |= table.terms(d.dim)
            maintained.append(d.dim)
        elif d.direction is Direction.DECREASE:
            lowered |= set(table.insertable(d.dim))

    for d in directives:
        if d.direction is Direction.INCREASE:
            pool = table.insertable(d.dim)
            if not pool:
                raise ConfigurationError(f"no insertable terms for attribute {d.dim!r}")
            pool = [t for t in pool if t not in protected and t not in lowered]
            if not pool:
                log.debug("increase %s skipped: every term is protected", d.dim)
                continue
            start = _position_hash(seed, d.dim) % len(sentences)
            for _ in range(d.steps):
                _insert(sentences, start, rng.choice(pool), table, rng)
        elif d.direction is Direction.DECREASE:
            removable = table.removable(d.dim)
            if not removable:
                raise ConfigurationError(f"no removable terms for attribute {d.dim!r}")
            targets = set(removable)
            spots = [
                (si, wi)
                for si, sent in enumerate(sentences)
                for wi, word in enumerate(sent)
                if _norm(word) in targets
            ]
            budget = d.steps
            for si, wi in rng.sample(spots, len(spots)):
                if not budget:
                    break
                word = _norm(sentences[si][wi])
                if word in protected:
                    # swap a shared term for one d lacks that weighs the same in every maintained dim
                    keep = [
                        t
                        for m in maintained
                        for t in table.insertable(m)
                        if t not in table.terms(d.dim)
                        and t not in lowered
                        and all(table.weight(k, t) == table.weight(k, word) for k in maintained)
                    ]
                    if not keep:
                        continue
                    replacement = rng.choice(sorted(set(keep)))
                else:
                    replacement = rng.choice(table.fillers)
                sentences[si][wi] = _replace_core(sentences[si][wi], replacement)
                budget -= 1
    return " ".join(" ".join(s) for s in sentences if s)


def _insert(sentences: list[list[str]], start: int, term: str, table, rng: random.Random) -> None:
    n = len(sentences)
    for offset in range(n):
        sent = sentences[(start + offset) % n]
        neutral = [i for i, w in enumerate(sent) if _norm(w) and _norm(w) not in table.known_terms]
        if neutral:
            i = rng.choice(neutral)
            sent[i] = _replace_core(sent[i], term)
            return
    # nothing left to overwrite: grow the text instead
    sentences[start % n].append(term)


class SyntheticRewriter:
    def __init__(self, table: SubstitutionTable):
        self.table = table

    def rewrite(self, prompt: RewritePrompt, seed: int) -> str:
        return synthetic_rewrite(prompt.source_text, prompt.directives, self.table, seed)


class EchoRewriter:
    """Returns the source text verbatim."""

    def rewrite(self, prompt: RewritePrompt, seed: int) -> str:
        return prompt.source_text


# -- HTTP backend ------------------------------------------------------------

BACKOFF_BASE_S = 0.2
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2


def backoff_delay(attempt: int, rng: random.Random) -> float:
    """Delay before retry number ``attempt + 1``: 200 ms * 2**attempt, +/-20% jitter."""
    base = BACKOFF_BASE_S * BACKOFF_FACTOR ** attempt
    return base * (1.0 + rng.uniform(-BACKOFF_JITTER, BACKOFF_JITTER))


def backoff_budget(max_retries: int) -> float:
    return sum(BACKOFF_BASE_S * BACKOFF_FACTOR ** i * (1 + BACKOFF_JITTER) for i in range(max_retries))


def _parse_response(resp: requests.Response, request_id: str) -> str:
    try:
        body = resp.json()
    except ValueError:
        raise ProtocolError("response body is not valid JSON", field="body") from None
    if not isinstance(body, dict):
        raise ProtocolError("response body is not a JSON object", field="body")
    text = body.get("text")
    if not isinstance(text, str):
        raise ProtocolError("response field 'text' missing or not a string", field="text")
    if "id" in body and body["id"] != request_id:
        raise ProtocolError(f"response field 'id' {body['id']!r} != {request_id!r}", field="id")
    if not text.strip():
        raise EmptyOutputError("service returned empty text")
    return text


def http_rewrite(
    request: RewriteRequest,
    config: BackendConfig,
    *,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    attempt_log: list | None = None,
) -> str:
    """POST one rewrite request, retrying timeouts and 5xx with exponential backoff."""
    http = session or requests
    rng = rng or random.Random()
    headers = {"Content-Type": "application/json; charset=utf-8"}
    token = config.token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    timeout = config.timeout_ms / 1000.0
    last_exc: Exception | None = None

    for attempt in range(config.max_retries + 1):
        if attempt:
            sleep(backoff_delay(attempt - 1, rng))
        try:
            resp = http.post(config.endpoint_url, json=request.to_wire(), headers=headers, timeout=timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            last_exc = BackendTimeout(f"{config.endpoint_url}: {exc.__class__.__name__}")
            outcome = "timeout"
        else:
            if 400 <= resp.status_code < 500:
                _record(attempt_log, attempt, resp.status_code)
                raise ConfigurationError(
                    f"{config.endpoint_url} rejected the request with HTTP {resp.status_code}"
                )
            if resp.status_code >= 500:
                last_exc = ServiceError(f"{config.endpoint_url}: HTTP {resp.status_code}")
                outcome = resp.status_code
            else:
                _record(attempt_log, attempt, resp.status_code)
                return _parse_response(resp, request.request_id)
        _record(attempt_log, attempt, outcome)
        log.warning("rewrite attempt %d/%d failed: %s", attempt + 1, config.max_retries + 1, last_exc)

    if isinstance(last_exc, ServiceError):
        raise last_exc
    raise BackendTimeout(
        f"{config.endpoint_url}: no response after {config.max_retries + 1} attempts"
    ) from last_exc


def _record(attempt_log, attempt, outcome) -> None:
    log.info("rewrite attempt %d -> %s", attempt + 1, outcome)
    if attempt_log is not None:
        attempt_log.append((attempt + 1, outcome))


class HttpRewriter:
    def __init__(self, config: BackendConfig, session: requests.Session | None = None, sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self.sleep = sleep

    def rewrite(self, prompt: RewritePrompt, seed: int) -> str:
        digest = hashlib.sha256(f"{seed}:{prompt.rendered}".encode()).hexdigest()[:16]
        request = RewriteRequest(
            prompt=prompt.rendered,
            source_text=prompt.source_text,
            max_tokens=self.config.max_tokens,
            temperature=self.config.temperature,
            request_id=f"{seed:x}-{digest}",
        )
        return http_rewrite(
            request, self.config, session=self.session, sleep=self.sleep, rng=random.Random(seed)
        )
