"""Shared fixtures: synthetic corpora, a tiny encoder config, CLI helpers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from encoders import EncoderConfig
from ingest import Label, Tweet, TweetKind, UserRecord, dump_jsonl
from synthetic import T0, fixture_accounts
from tensor import Tensor, reduce_sum

DATA_DIR = Path(__file__).parent / "data"

_KIND_OF_SYMBOL = {"A": TweetKind.ORIGINAL, "C": TweetKind.REPLY, "T": TweetKind.RETWEET}

TINY_ENCODER = {"d_model": 8, "buckets": 64, "max_tokens": 16, "conv_channels": 2,
                "d_vision": 4, "mode": "alexnet_shape"}


@pytest.fixture
def mini_jsonl() -> Path:
    return DATA_DIR / "mini.jsonl"


@pytest.fixture(scope="session")
def fixture_records() -> list[UserRecord]:
    return fixture_accounts()


@pytest.fixture
def fixture_jsonl(tmp_path, fixture_records) -> Path:
    path = tmp_path / "fixture.jsonl"
    dump_jsonl(fixture_records, path)
    return path


@pytest.fixture
def tiny_encoder() -> EncoderConfig:
    return EncoderConfig(**TINY_ENCODER)


@pytest.fixture
def tiny_config(tmp_path) -> Path:
    """Config file for fast CLI training runs."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "encoder": TINY_ENCODER,
        "train": {"seeds": [0], "max_epochs": 2, "lr": 0.001, "batch_size": 4},
    }), encoding="utf-8")
    return path


def records_from_dna(sequences: dict[str, str], bots: frozenset[str]) -> list[UserRecord]:
    """Accounts whose Type3 DNA is exactly the given strings."""
    records = []
    for uid, seq in sequences.items():
        tweets = tuple(Tweet(f"{uid}-{i:04d}", T0 + 60 * i, _KIND_OF_SYMBOL[ch])
                       for i, ch in enumerate(seq))
        label = Label.BOT if uid in bots else Label.HUMAN
        records.append(UserRecord(uid, f"account {uid}", label, tweets))
    return records


def random_projection(t: Tensor, seed: int = 99) -> Tensor:
    """Scalar Σ t ⊙ R with fixed random R, so no gradient component cancels."""
    r = np.random.default_rng(seed).normal(size=t.shape)
    return reduce_sum(t * Tensor(r))
