"""Causal-LM scoring with exact character-offset reconstruction.

The scored text is tokenized with the model's fast tokenizer, a BOS token
is prepended, and one forward pass yields every token's log-probability
given its full left context (the first text token is conditioned on BOS
alone). Offsets index Unicode code points of the request text.

Byte-level tokenizers may split one character across several tokens (each
reporting the same character span) and merge a leading space into the
following token. Raw tokens are therefore regrouped into spans that tile
the text exactly: consecutive tokens are merged while they start inside
the current span, gaps attach to the following span, and the final span
is stretched over any trailing characters. Log-probabilities of merged
tokens add, so the total sequence log-likelihood is preserved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

log = logging.getLogger(__name__)


class SequenceTooLong(ValueError):
    pass


@dataclass(frozen=True)
class SpanScore:
    start: int
    end: int
    logprob: float


def regroup_offsets(
    offsets: list[tuple[int, int]], logprobs: list[float], text_length: int
) -> list[SpanScore]:
    """Merge raw token offsets into a tiling of [0, text_length)."""
    spans: list[SpanScore] = []
    prev_end = 0
    group_end = -1
    acc = 0.0
    for (start, end), lp in zip(offsets, logprobs):
        if group_end < 0:
            group_end = max(end, prev_end + 1)
            acc = lp
            continue
        if start >= group_end:
            spans.append(SpanScore(prev_end, group_end, acc))
            prev_end = group_end
            group_end = max(end, prev_end + 1)
            acc = lp
        else:
            group_end = max(group_end, end)
            acc += lp
    if group_end >= 0:
        spans.append(SpanScore(prev_end, max(group_end, text_length), acc))
    elif text_length > 0:
        raise ValueError("no tokens to cover the text")
    if spans and spans[-1].end != text_length:
        last = spans[-1]
        spans[-1] = SpanScore(last.start, text_length, last.logprob)
    return spans


class CausalScorer:
    def __init__(
        self,
        model_id: str,
        revision: str | None = None,
        device: str = "cpu",
        max_length: int = 1024,
        deterministic: bool = True,
    ) -> None:
        self.model_id = model_id
        self.revision = revision
        self.device = device
        self.max_length = max_length
        if deterministic:
            torch.manual_seed(0)
            torch.set_num_threads(1)
        kwargs = {"revision": revision} if revision else {}
        self.tokenizer = AutoTokenizer.from_pretrained(model_id, **kwargs)
        self.model = AutoModelForCausalLM.from_pretrained(
            model_id, dtype=torch.float32, **kwargs
        )
        self.model.to(device)
        self.model.eval()
        bos = self.tokenizer.bos_token_id
        if bos is None:
            bos = self.tokenizer.eos_token_id
        if bos is None:
            raise ValueError(f"{model_id}: tokenizer has neither BOS nor EOS token")
        self.bos_id = int(bos)

    def meta(self) -> dict:
        return {
            "model": self.model_id,
            "revision": self.revision or "main",
            "bos_prepended": True,
            "offsets": "codepoints",
        }

    def _encode(self, text: str) -> tuple[list[int], list[tuple[int, int]]]:
        encoded = self.tokenizer(
            text, return_offsets_mapping=True, add_special_tokens=False
        )
        ids = list(encoded["input_ids"])
        offsets = [tuple(o) for o in encoded["offset_mapping"]]
        if len(ids) + 1 > self.max_length:
            raise SequenceTooLong(
                f"sequence too long: {len(ids) + 1} tokens > max_length {self.max_length}"
            )
        if not ids:
            raise ValueError("text tokenizes to nothing")
        return ids, offsets

    def score_text(self, text: str) -> list[SpanScore]:
        return self.score_batch([text])[0]

    def score_batch(self, texts: list[str]) -> list[list[SpanScore]]:
        """One padded forward pass over the batch; right padding keeps the
        causal positions of every sequence intact."""
        encoded = [self._encode(t) for t in texts]
        id_rows = [[self.bos_id] + ids for ids, _ in encoded]
        width = max(len(row) for row in id_rows)
        pad_id = self.bos_id
        input_ids = torch.full((len(id_rows), width), pad_id, dtype=torch.long)
        attention = torch.zeros((len(id_rows), width), dtype=torch.long)
        for i, row in enumerate(id_rows):
            input_ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
            attention[i, : len(row)] = 1
        input_ids = input_ids.to(self.device)
        attention = attention.to(self.device)
        with torch.no_grad():
            logits = self.model(input_ids=input_ids, attention_mask=attention).logits
        logprobs = torch.log_softmax(logits.float(), dim=-1)
        results: list[list[SpanScore]] = []
        for i, (ids, offsets) in enumerate(encoded):
            # token at padded position p is predicted from position p-1
            positions = torch.arange(1, len(ids) + 1)
            targets = input_ids[i, 1 : len(ids) + 1].cpu()
            token_lps = logprobs[i, positions - 1, targets].cpu().tolist()
            results.append(regroup_offsets(offsets, token_lps, len(texts[i])))
        return results

    def sequence_logprob(self, text: str) -> float:
        """Total log-likelihood of the text given BOS, computed through
        the model's own loss head (independent of the span path)."""
        ids, _ = self._encode(text)
        row = torch.tensor([[self.bos_id] + ids], dtype=torch.long, device=self.device)
        with torch.no_grad():
            out = self.model(input_ids=row, labels=row)
        return -float(out.loss) * len(ids)
