from __future__ import annotations

import pytest

from aop_lab.conllu import read_conllu
from aop_lab.errors import DataError


def test_parses_all_sentences(golden_doc):
    assert len(golden_doc.sentences) == 25
    assert [s.sent_id for s in golden_doc.sentences][:3] == ["s1", "s2", "s3"]


def test_char_spans_reconstruct_surfaces(golden_doc):
    for sent in golden_doc.sentences:
        last_end = -1
        for tok in sent.tokens:
            assert sent.text[tok.char_start : tok.char_end] == tok.surface
            assert tok.char_start >= last_end
            last_end = tok.char_end


def test_text_reconstructed_without_comment(golden_doc):
    s4 = golden_doc.sentences[3]
    assert s4.text == "They designed a large wooden ancient box."
    s24 = golden_doc.sentences[23]
    assert s24.text == "We tasted fresh sweet fruit there."


def test_multiword_token_subalignment(golden_doc):
    s9 = golden_doc.sentences[8]
    assert s9.text == "The red banana car didn't stop."
    did = next(t for t in s9.tokens if t.surface == "did")
    nt = next(t for t in s9.tokens if t.surface == "n't")
    assert s9.text[did.char_start : did.char_end] == "did"
    assert s9.text[nt.char_start : nt.char_end] == "n't"
    assert did.char_end == nt.char_start


def test_head_out_of_range_rejected(tmp_path):
    bad = tmp_path / "bad.conllu"
    bad.write_text(
        "# text = Hello world.\n"
        "1\tHello\thello\tINTJ\t_\t_\t9\tdiscourse\t_\t_\n"
        "2\tworld\tworld\tNOUN\t_\t_\t1\tvocative\t_\tSpaceAfter=No\n"
        "3\t.\t.\tPUNCT\t_\t_\t1\tpunct\t_\t_\n",
        encoding="utf-8",
    )
    with pytest.raises(DataError, match="head 9 out of range"):
        read_conllu(bad)


def test_wrong_column_count_rejected(tmp_path):
    bad = tmp_path / "bad.conllu"
    bad.write_text("1\tHello\thello\n", encoding="utf-8")
    with pytest.raises(DataError, match="expected 10"):
        read_conllu(bad)


def test_text_mismatch_rejected(tmp_path):
    bad = tmp_path / "bad.conllu"
    bad.write_text(
        "# text = Goodbye world.\n"
        "1\tHello\thello\tINTJ\t_\t_\t0\troot\t_\t_\n"
        "2\tworld\tworld\tNOUN\t_\t_\t1\tvocative\t_\t_\n",
        encoding="utf-8",
    )
    with pytest.raises(DataError, match="does not match"):
        read_conllu(bad)
