"""Scorer gateway: anything that maps text to per-token log-probabilities.

A scorer receives (context, phrase) and returns one record whose token
spans tile the concatenated text ``context + phrase`` exactly, in order,
with no gaps or overlaps. Offsets are Unicode code-point indices. All
log-probabilities are natural log.

Scorers own their tokenization; this module is tokenizer-agnostic and
aligns everything by character offsets. Whitespace between words belongs
to the *following* token (GPT-style leading-space merging), so callers
summing a phrase span should start the span at the whitespace run that
precedes the phrase.

Three scorer families live here:

* :class:`NgramOracleScorer` -- a deterministic add-alpha n-gram model
  over whitespace tokens, used as a test oracle standing in for an LM.
* :class:`RemoteScorer` -- a client for external scorers speaking the
  newline-delimited JSON wire protocol over stdio or TCP.
* anything else satisfying the :class:`Scorer` protocol.

Wire protocol (one JSON object per line, UTF-8):

    request:  {"id": str, "context": str, "phrase": str}
    response: {"id": str, "tokens": [{"text": str, "start": int,
                                      "end": int, "logprob": float}]}
    error:    {"id": str, "error": str}

A server may emit a single header line ``{"meta": {...}}`` before its
first response. Responses are order-preserving, one per request; a
server that cannot score a request (e.g. sequence too long) answers
with the error form instead of dropping the stream.
"""

from __future__ import annotations

import json
import logging
import math
import re
import select
import shlex
import socket
import subprocess
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

from .errors import (
    DataError,
    ProtocolError,
    RecordInvariantError,
    ScorerError,
    ScorerTimeout,
    SpanAlignmentError,
)

log = logging.getLogger(__name__)

NEG_INF = float("-inf")

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class ScoreRequest:
    request_id: str
    context_text: str
    phrase_text: str

    def __post_init__(self) -> None:
        if not self.phrase_text:
            raise DataError("phrase_text must be non-empty")

    @property
    def full_text(self) -> str:
        return self.context_text + self.phrase_text


@dataclass(frozen=True)
class ScoreToken:
    text: str
    start: int
    end: int
    logprob: float


@dataclass(frozen=True)
class ScoreRecord:
    request_id: str
    tokens: tuple[ScoreToken, ...]

    @property
    def covered_end(self) -> int:
        return self.tokens[-1].end if self.tokens else 0

    def total_logprob(self) -> float:
        return math.fsum(t.logprob for t in self.tokens)


@runtime_checkable
class Scorer(Protocol):
    name: str
    deterministic: bool

    def score(self, request: ScoreRequest) -> ScoreRecord: ...


def validate_record(record: ScoreRecord, expected_length: int) -> None:
    """Check that token spans tile [0, expected_length) in order."""
    tokens = record.tokens
    if not tokens:
        raise RecordInvariantError(f"record {record.request_id}: no tokens")
    if tokens[0].start != 0:
        raise RecordInvariantError(
            f"record {record.request_id}: first span starts at {tokens[0].start}, not 0"
        )
    prev_end = 0
    for i, tok in enumerate(tokens):
        if tok.start != prev_end:
            raise RecordInvariantError(
                f"record {record.request_id}: span {i} starts at {tok.start}, "
                f"expected {prev_end} (gap or overlap)"
            )
        if tok.end <= tok.start:
            raise RecordInvariantError(
                f"record {record.request_id}: span {i} is empty or reversed"
            )
        prev_end = tok.end
    if prev_end != expected_length:
        raise RecordInvariantError(
            f"record {record.request_id}: spans cover [0,{prev_end}), "
            f"expected [0,{expected_length})"
        )


def phrase_logprob(record: ScoreRecord, span: tuple[int, int]) -> float:
    """Sum log-probabilities of all tokens lying entirely inside ``span``.

    A token straddling either span boundary is an error; the caller must
    widen the span (typically to include the preceding whitespace run) or
    re-request with a different split.
    """
    start, end = span
    if start < 0 or end > record.covered_end or start > end:
        raise ValueError(f"span [{start},{end}) outside covered text [0,{record.covered_end})")
    total: list[float] = []
    for tok in record.tokens:
        if tok.start < start < tok.end or tok.start < end < tok.end:
            raise SpanAlignmentError(
                f"span not token-aligned: token [{tok.start},{tok.end}) {tok.text!r} "
                f"straddles [{start},{end})"
            )
        if start <= tok.start and tok.end <= end:
            total.append(tok.logprob)
    return math.fsum(total)


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Whitespace words with tiling spans: leading whitespace attaches to the
    following word, trailing whitespace to the last word."""
    matches = list(_WORD_RE.finditer(text))
    if not matches:
        raise DataError("text contains no tokens")
    spans: list[tuple[str, int, int]] = []
    prev_end = 0
    for i, m in enumerate(matches):
        end = m.end() if i + 1 < len(matches) else len(text)
        spans.append((text[prev_end:end], prev_end, end))
        prev_end = end
    return spans


# ---------------------------------------------------------------------------
# n-gram oracle scorer
# ---------------------------------------------------------------------------


class NgramOracleScorer:
    """Deterministic add-alpha n-gram scorer over whitespace tokens.

    Each token w after context g (the up-to-(order-1) preceding tokens of
    the scored text) receives

        log((count(g + w) + alpha) / (count(g) + alpha * V))

    where counts come from the training token stream and V is the number
    of distinct training types. Initial positions back off to the longest
    available context. With alpha=0 an unseen n-gram yields the -inf
    sentinel; with alpha>0 every log-probability is finite and <= 0.
    """

    def __init__(
        self,
        corpus_tokens: Iterable[str],
        order: int,
        alpha: float,
        lowercase: bool = True,
    ) -> None:
        if order not in (1, 2, 3):
            raise DataError(f"oracle order must be 1, 2 or 3, got {order}")
        if alpha < 0:
            raise DataError(f"alpha must be >= 0, got {alpha}")
        self.order = order
        self.alpha = alpha
        self.lowercase = lowercase
        self._counts: list[Counter[tuple[str, ...]]] = [Counter() for _ in range(order)]
        window: list[str] = []
        total = 0
        for token in corpus_tokens:
            if lowercase:
                token = token.lower()
            total += 1
            window.append(token)
            if len(window) > order:
                window.pop(0)
            for n in range(1, min(order, len(window)) + 1):
                self._counts[n - 1][tuple(window[-n:])] += 1
        if total == 0:
            raise DataError("oracle corpus is empty")
        self._total = total
        self._vocab_size = len(self._counts[0])
        self.name = f"ngram(order={order},alpha={alpha:g})"
        self.deterministic = True

    def ngram_count(self, words: tuple[str, ...]) -> int:
        if not 1 <= len(words) <= self.order:
            raise ValueError(f"no counts of length {len(words)} (order {self.order})")
        return self._counts[len(words) - 1][words]

    def token_logprob(self, context: tuple[str, ...], word: str) -> float:
        context = context[-(self.order - 1) :] if self.order > 1 else ()
        joint = self._counts[len(context)][context + (word,)]
        marginal = self._counts[len(context) - 1][context] if context else self._total
        num = joint + self.alpha
        den = marginal + self.alpha * self._vocab_size
        if num == 0 or den == 0:
            return NEG_INF
        return math.log(num / den)

    def score(self, request: ScoreRequest) -> ScoreRecord:
        text = request.full_text
        pieces = tokenize_with_spans(text)
        words = [p[0].strip() for p in pieces]
        if self.lowercase:
            words = [w.lower() for w in words]
        tokens: list[ScoreToken] = []
        for i, (piece, start, end) in enumerate(pieces):
            context = tuple(words[max(0, i - (self.order - 1)) : i])
            lp = self.token_logprob(context, words[i])
            tokens.append(ScoreToken(text=piece, start=start, end=end, logprob=lp))
        return ScoreRecord(request_id=request.request_id, tokens=tuple(tokens))


def build_ngram_oracle(
    corpus_tokens: Iterable[str], order: int, alpha: float, lowercase: bool = True
) -> NgramOracleScorer:
    return NgramOracleScorer(corpus_tokens, order=order, alpha=alpha, lowercase=lowercase)


def oracle_from_spec(spec: str) -> NgramOracleScorer:
    """Build an oracle from a CLI spec like ``order=2,alpha=1,corpus=PATH``."""
    options: dict[str, str] = {}
    for chunk in spec.split(","):
        if not chunk:
            continue
        key, eq, value = chunk.partition("=")
        if not eq:
            raise DataError(f"bad oracle spec fragment {chunk!r} (expected key=value)")
        options[key.strip()] = value.strip()
    unknown = set(options) - {"order", "alpha", "corpus", "lowercase"}
    if unknown:
        raise DataError(f"unknown oracle spec keys: {sorted(unknown)}")
    if "corpus" not in options:
        raise DataError("oracle spec needs corpus=PATH")
    corpus_path = Path(options["corpus"])
    if not corpus_path.exists():
        raise DataError(f"oracle corpus not found: {corpus_path}")
    order = int(options.get("order", "2"))
    alpha = float(options.get("alpha", "1"))
    lowercase = options.get("lowercase", "true").lower() in ("1", "true", "yes")

    def stream() -> Iterable[str]:
        with open(corpus_path, encoding="utf-8") as fh:
            for line in fh:
                yield from line.split()

    return build_ngram_oracle(stream(), order=order, alpha=alpha, lowercase=lowercase)


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------

_REQUEST_KEYS = {"id", "context", "phrase"}
_RESPONSE_KEYS = {"id", "tokens"}
_TOKEN_KEYS = {"text", "start", "end", "logprob"}


def serialize_request(request: ScoreRequest) -> str:
    payload = {
        "id": request.request_id,
        "context": request.context_text,
        "phrase": request.phrase_text,
    }
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def parse_request(line: str) -> ScoreRequest:
    obj = _load_object(line)
    if set(obj) != _REQUEST_KEYS:
        raise ProtocolError(f"request keys must be {sorted(_REQUEST_KEYS)}, got {sorted(obj)}")
    if not all(isinstance(obj[k], str) for k in _REQUEST_KEYS):
        raise ProtocolError("request fields must be strings")
    if not obj["phrase"]:
        raise ProtocolError("request phrase must be non-empty")
    return ScoreRequest(request_id=obj["id"], context_text=obj["context"], phrase_text=obj["phrase"])


def serialize_response(record: ScoreRecord) -> str:
    payload = {
        "id": record.request_id,
        "tokens": [
            {"text": t.text, "start": t.start, "end": t.end, "logprob": t.logprob}
            for t in record.tokens
        ],
    }
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def parse_response(line: str) -> ScoreRecord:
    obj = _load_object(line)
    if set(obj) == {"id", "error"}:
        raise ProtocolError(f"scorer refused request {obj['id']!r}: {obj['error']}")
    if set(obj) != _RESPONSE_KEYS:
        raise ProtocolError(f"response keys must be {sorted(_RESPONSE_KEYS)}, got {sorted(obj)}")
    if not isinstance(obj["id"], str) or not isinstance(obj["tokens"], list):
        raise ProtocolError("response must carry a string id and a token list")
    tokens: list[ScoreToken] = []
    for i, tok in enumerate(obj["tokens"]):
        if not isinstance(tok, dict) or set(tok) != _TOKEN_KEYS:
            raise ProtocolError(f"token {i}: keys must be {sorted(_TOKEN_KEYS)}")
        if not isinstance(tok["text"], str):
            raise ProtocolError(f"token {i}: text must be a string")
        if not isinstance(tok["start"], int) or not isinstance(tok["end"], int):
            raise ProtocolError(f"token {i}: start/end must be integers")
        if not isinstance(tok["logprob"], (int, float)) or isinstance(tok["logprob"], bool):
            raise ProtocolError(f"token {i}: logprob must be a number")
        tokens.append(
            ScoreToken(
                text=tok["text"], start=tok["start"], end=tok["end"],
                logprob=float(tok["logprob"]),
            )
        )
    return ScoreRecord(request_id=obj["id"], tokens=tuple(tokens))


def parse_meta(line: str) -> dict | None:
    """Return the meta payload if the line is a stream header, else None."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and set(obj) == {"meta"} and isinstance(obj["meta"], dict):
        return obj["meta"]
    return None


def _load_object(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"bad JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError(f"expected a JSON object, got {type(obj).__name__}")
    return obj


# ---------------------------------------------------------------------------
# Remote scorer client
# ---------------------------------------------------------------------------


class _Transport:
    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


class TcpTransport(_Transport):
    def __init__(self, host: str, port: int, timeout: float) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise ScorerError(f"cannot connect to {host}:{port}: {e}") from e
        self._sock.settimeout(timeout)
        self._reader = self._sock.makefile("rb")

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall(line.encode("utf-8") + b"\n")
        except socket.timeout as e:
            raise ScorerTimeout("timed out sending request") from e
        except OSError as e:
            raise ScorerError(f"connection lost: {e}") from e

    def recv_line(self) -> str:
        try:
            raw = self._reader.readline()
        except socket.timeout as e:
            raise ScorerTimeout("timed out waiting for response") from e
        except OSError as e:
            raise ScorerError(f"connection lost: {e}") from e
        if not raw:
            raise ScorerError("scorer closed the connection")
        return raw.decode("utf-8").rstrip("\n")

    def close(self) -> None:
        try:
            self._reader.close()
            self._sock.close()
        except OSError:
            pass


class StdioTransport(_Transport):
    def __init__(self, command: str, timeout: float) -> None:
        self._timeout = timeout
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise ScorerError(f"cannot spawn scorer {command!r}: {e}") from e

    def send_line(self, line: str) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ScorerError(f"scorer process is gone: {e}") from e

    def recv_line(self) -> str:
        assert self._proc.stdout is not None
        ready, _, _ = select.select([self._proc.stdout], [], [], self._timeout)
        if not ready:
            raise ScorerTimeout(f"no response within {self._timeout}s")
        line = self._proc.stdout.readline()
        if not line:
            raise ScorerError("scorer process closed its output")
        return line.rstrip("\n")

    def close(self) -> None:
        if self._proc.stdin is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class RemoteScorer:
    """Forwards score requests over the wire protocol and validates responses.

    One request is in flight at a time per connection; request and
    response ids must match. Transport timeouts are retried up to
    ``retries`` times, each retry logged; structural errors never retry.
    """

    deterministic = False

    def __init__(self, endpoint: str, timeout: float = 60.0, retries: int = 0) -> None:
        self.endpoint = endpoint
        self.retries = retries
        self.meta: dict | None = None
        self.name = f"remote({endpoint})"
        self._lock = threading.Lock()
        self._warned_positive = False
        if endpoint.startswith("tcp:"):
            rest = endpoint[len("tcp:") :]
            host, sep, port_s = rest.rpartition(":")
            if not sep:
                raise DataError(f"tcp endpoint must be tcp:HOST:PORT, got {endpoint!r}")
            self._transport: _Transport = TcpTransport(host, int(port_s), timeout)
        elif endpoint.startswith("stdio:"):
            self._transport = StdioTransport(endpoint[len("stdio:") :], timeout)
        else:
            raise DataError(f"endpoint must start with tcp: or stdio:, got {endpoint!r}")

    def score(self, request: ScoreRequest) -> ScoreRecord:
        with self._lock:
            attempt = 0
            while True:
                try:
                    return self._score_once(request)
                except ScorerTimeout:
                    if attempt >= self.retries:
                        raise
                    attempt += 1
                    log.warning(
                        "scorer %s timed out, retry %d/%d", self.endpoint, attempt, self.retries
                    )

    def _score_once(self, request: ScoreRequest) -> ScoreRecord:
        self._transport.send_line(serialize_request(request))
        line = self._transport.recv_line()
        meta = parse_meta(line)
        if meta is not None:
            if self.meta is None:
                self.meta = meta
                log.info("scorer %s header: %s", self.endpoint, meta)
            line = self._transport.recv_line()
        record = parse_response(line)
        if record.request_id != request.request_id:
            raise ProtocolError(
                f"response id {record.request_id!r} does not match request {request.request_id!r}"
            )
        validate_record(record, len(request.full_text))
        if not self._warned_positive and any(t.logprob > 0 for t in record.tokens):
            self._warned_positive = True
            log.warning("scorer %s returned a positive logprob", self.endpoint)
        return record

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "RemoteScorer":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def remote_scorer(endpoint: str, timeout: float = 60.0, retries: int = 0) -> RemoteScorer:
    return RemoteScorer(endpoint, timeout=timeout, retries=retries)


def scorer_from_spec(spec: str, timeout: float = 60.0, retries: int = 0) -> Scorer:
    """Resolve a CLI scorer spec: ``oracle:...`` or ``remote:...``."""
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise DataError(f"scorer spec must be oracle:... or remote:..., got {spec!r}")
    if kind == "oracle":
        return oracle_from_spec(rest)
    if kind == "remote":
        return remote_scorer(rest, timeout=timeout, retries=retries)
    raise DataError(f"unknown scorer kind {kind!r}")
