from __future__ import annotations

import os
from pathlib import Path

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

import tinylm


@pytest.fixture(scope="session")
def untrained_checkpoint(tmp_path_factory) -> Path:
    return tinylm.build_checkpoint(
        tmp_path_factory.mktemp("ckpt-raw") / "model", trained=False
    )


@pytest.fixture(scope="session")
def trained_checkpoint(tmp_path_factory) -> Path:
    return tinylm.build_checkpoint(
        tmp_path_factory.mktemp("ckpt-trained") / "model", trained=True
    )
