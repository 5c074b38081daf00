from __future__ import annotations

import math

import pytest

from aop_scorer_shim.model import SpanScore, regroup_offsets


def tiles(spans, length):
    prev = 0
    for s in spans:
        assert s.start == prev
        assert s.end > s.start
        prev = s.end
    assert prev == length


class TestRegroup:
    def test_gpt_style_leading_spaces(self):
        offsets = [(0, 3), (3, 7), (7, 11)]
        spans = regroup_offsets(offsets, [-1.0, -2.0, -3.0], 11)
        assert spans == [SpanScore(0, 3, -1.0), SpanScore(3, 7, -2.0), SpanScore(7, 11, -3.0)]

    def test_multibyte_char_split_across_tokens(self):
        # an emoji encoded as four byte-level tokens, all reporting (5, 6)
        offsets = [(0, 5), (5, 6), (5, 6), (5, 6), (5, 6), (6, 10)]
        lps = [-1.0, -0.5, -0.25, -0.125, -0.0625, -2.0]
        spans = regroup_offsets(offsets, lps, 10)
        tiles(spans, 10)
        assert spans[1] == SpanScore(5, 6, -0.9375)  # byte pieces merged, logprobs added
        assert math.fsum(s.logprob for s in spans) == pytest.approx(math.fsum(lps))

    def test_gap_attaches_to_following_span(self):
        offsets = [(2, 5), (6, 9)]  # chars 0-1 and 5 unclaimed
        spans = regroup_offsets(offsets, [-1.0, -1.0], 9)
        tiles(spans, 9)
        assert spans[0].start == 0
        assert spans[1].start == 5

    def test_trailing_characters_stretch_last_span(self):
        spans = regroup_offsets([(0, 4)], [-1.0], 7)
        assert spans == [SpanScore(0, 7, -1.0)]

    def test_total_logprob_preserved(self):
        offsets = [(0, 2), (2, 3), (2, 3), (3, 8), (8, 9)]
        lps = [-0.1, -0.2, -0.3, -0.4, -0.5]
        spans = regroup_offsets(offsets, lps, 9)
        tiles(spans, 9)
        assert math.fsum(s.logprob for s in spans) == pytest.approx(-1.5)
