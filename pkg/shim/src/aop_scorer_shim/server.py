"""Protocol server: newline-delimited JSON over stdio or TCP.

Request:  {"id": str, "context": str, "phrase": str}
Response: {"id": str, "tokens": [{"text", "start", "end", "logprob"}]}
Error:    {"id": str, "error": str}

The first line of every stream is a header ``{"meta": {...}}`` carrying
the model identifier and revision. Responses preserve request order. One
forward pass is in flight at a time; with ``batch_size > 1`` requests
already waiting on the input are drained and scored in one padded batch,
responses still emitted in arrival order.
"""

from __future__ import annotations

import json
import logging
import select
import socketserver
import sys
from dataclasses import dataclass

from .model import CausalScorer, SequenceTooLong, SpanScore

log = logging.getLogger(__name__)


@dataclass
class ShimConfig:
    model_id: str
    revision: str | None = None
    device: str = "cpu"
    max_length: int = 1024
    batch_size: int = 1
    deterministic: bool = True


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


class ScorerServer:
    def __init__(self, config: ShimConfig) -> None:
        self.config = config
        self.scorer = CausalScorer(
            config.model_id,
            revision=config.revision,
            device=config.device,
            max_length=config.max_length,
            deterministic=config.deterministic,
        )

    def header_line(self) -> str:
        return _dump({"meta": self.scorer.meta()})

    def _parse(self, line: str) -> tuple[str, str] | tuple[None, str]:
        """Returns (request_id, text) or (None, error_line)."""
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            return None, _dump({"id": "", "error": f"bad JSON: {e}"})
        if not isinstance(obj, dict) or {"id", "context", "phrase"} - set(obj):
            return None, _dump({"id": str(obj.get("id", "")) if isinstance(obj, dict) else "",
                                "error": "request must carry id, context, phrase"})
        rid = obj["id"]
        if not isinstance(rid, str) or not isinstance(obj["context"], str) or not isinstance(obj["phrase"], str):
            return None, _dump({"id": str(rid), "error": "fields must be strings"})
        if not obj["phrase"]:
            return None, _dump({"id": rid, "error": "phrase must be non-empty"})
        return rid, obj["context"] + obj["phrase"]

    def _respond(self, rid: str, spans: list[SpanScore], text: str) -> str:
        tokens = [
            {"text": text[s.start : s.end], "start": s.start, "end": s.end, "logprob": s.logprob}
            for s in spans
        ]
        return _dump({"id": rid, "tokens": tokens})

    def handle_batch(self, lines: list[str]) -> list[str]:
        parsed: list[tuple[str, str] | tuple[None, str]] = [self._parse(l) for l in lines]
        texts = [text for rid, text in parsed if rid is not None]
        scored: dict[int, list[SpanScore]] = {}
        errors: dict[int, str] = {}
        todo = [i for i, (rid, _) in enumerate(parsed) if rid is not None]
        if todo:
            try:
                results = self.scorer.score_batch([parsed[i][1] for i in todo])
                for i, spans in zip(todo, results):
                    scored[i] = spans
            except SequenceTooLong:
                # re-score one by one so only the offending requests fail
                for i in todo:
                    try:
                        scored[i] = self.scorer.score_text(parsed[i][1])
                    except SequenceTooLong as e:
                        errors[i] = str(e)
        out: list[str] = []
        for i, (rid, payload) in enumerate(parsed):
            if rid is None:
                out.append(payload)
            elif i in errors:
                out.append(_dump({"id": rid, "error": errors[i]}))
            else:
                out.append(self._respond(rid, scored[i], payload))
        return out

    # -- transports -----------------------------------------------------

    def serve_stdio(self) -> None:
        out = sys.stdout
        out.write(self.header_line() + "\n")
        out.flush()
        stdin = sys.stdin
        while True:
            line = stdin.readline()
            if not line:
                break
            batch = [line.rstrip("\n")]
            while len(batch) < self.config.batch_size:
                ready, _, _ = select.select([stdin], [], [], 0)
                if not ready:
                    break
                extra = stdin.readline()
                if not extra:
                    break
                batch.append(extra.rstrip("\n"))
            batch = [b for b in batch if b.strip()]
            if not batch:
                continue
            for response in self.handle_batch(batch):
                out.write(response + "\n")
            out.flush()

    def serve_tcp(self, host: str, port: int) -> None:
        server = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                self.wfile.write((server.header_line() + "\n").encode("utf-8"))
                for raw in self.rfile:
                    line = raw.decode("utf-8").rstrip("\n")
                    if not line.strip():
                        continue
                    for response in server.handle_batch([line]):
                        self.wfile.write((response + "\n").encode("utf-8"))

        class Reusable(socketserver.TCPServer):
            allow_reuse_address = True

        with Reusable((host, port), Handler) as srv:
            log.info("listening on %s:%d", host, srv.server_address[1])
            srv.serve_forever()


def run_sweep(
    config: ShimConfig, revisions: list[str], requests_path: str, out_dir: str
) -> list[str]:
    """Iterate checkpoint revisions; one protocol stream file per revision."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    request_lines = [
        line.rstrip("\n")
        for line in Path(requests_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    written: list[str] = []
    for revision in revisions:
        cfg = ShimConfig(
            model_id=config.model_id,
            revision=revision,
            device=config.device,
            max_length=config.max_length,
            batch_size=config.batch_size,
            deterministic=config.deterministic,
        )
        server = ScorerServer(cfg)
        stream_path = out / f"{revision.replace('/', '_')}.ndjson"
        with open(stream_path, "w", encoding="utf-8") as fh:
            fh.write(server.header_line() + "\n")
            for i in range(0, len(request_lines), max(1, cfg.batch_size)):
                for response in server.handle_batch(
                    request_lines[i : i + max(1, cfg.batch_size)]
                ):
                    fh.write(response + "\n")
        written.append(str(stream_path))
        log.info("revision %s -> %s", revision, stream_path)
    return written
