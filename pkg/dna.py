"""
dna.py - Digital-DNA encoding of chronologically ordered timelines.

Two alphabets:
  Type3     A = original tweet, C = reply, T = retweet
  Content5  N = no entities, U = URLs only, H = hashtags only,
            M = mentions only, X = two or more entity categories
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from constants import CONTENT5_SYMBOLS, TYPE3_SYMBOLS
from errors import AlphabetError, IneligibleRecordError, SchemaError
from ingest import Corpus, Tweet, TweetKind, UserRecord, sort_chronological

_logger = logging.getLogger("botdna.dna")


class Alphabet(Enum):
    TYPE3    = "Type3"
    CONTENT5 = "Content5"

    @property
    def symbols(self) -> tuple[str, ...]:
        return TYPE3_SYMBOLS if self is Alphabet.TYPE3 else CONTENT5_SYMBOLS

    @classmethod
    def parse(cls, name: str) -> "Alphabet":
        """Accept 'Type3' / 'type3' / 'Content5' / 'content5'."""
        for alphabet in cls:
            if alphabet.value.lower() == str(name).lower():
                return alphabet
        raise AlphabetError(f"unknown alphabet '{name}' (expected type3 or content5)")


@dataclass(frozen=True)
class DnaSequence:
    user_id:  str
    alphabet: Alphabet
    seq:      str

    def __post_init__(self):
        allowed = set(self.alphabet.symbols)
        foreign = sorted(set(self.seq) - allowed)
        if foreign:
            raise AlphabetError(f"sequence for {self.user_id} has symbols {foreign} "
                                f"outside {self.alphabet.value}")

    def __len__(self) -> int:
        return len(self.seq)


# ---------------------------------------------------------------------------
# Symbol tables
# ---------------------------------------------------------------------------

_TYPE_SYMBOL = {
    TweetKind.ORIGINAL: "A",
    TweetKind.REPLY:    "C",
    TweetKind.RETWEET:  "T",
}


def symbol_of_type(tweet: Tweet) -> str:
    return _TYPE_SYMBOL[tweet.kind]


def symbol_of_content(tweet: Tweet) -> str:
    # Categories, not entity totals: three hashtags alone are still 'H'.
    present = [sym for sym, n in (("U", tweet.n_urls),
                                  ("H", tweet.n_hashtags),
                                  ("M", tweet.n_mentions)) if n > 0]
    if not present:
        return "N"
    if len(present) >= 2:
        return "X"
    return present[0]


_SYMBOL_FN = {
    Alphabet.TYPE3:    symbol_of_type,
    Alphabet.CONTENT5: symbol_of_content,
}


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode(record: UserRecord, alphabet: Alphabet) -> DnaSequence:
    """One symbol per tweet, oldest first."""
    if not record.tweets:
        raise IneligibleRecordError(f"record {record.user_id} has an empty timeline")
    ordered = sort_chronological(record)
    symbol  = _SYMBOL_FN[alphabet]
    return DnaSequence(record.user_id, alphabet, "".join(symbol(t) for t in ordered.tweets))


def encode_records(records: Iterable[UserRecord], alphabet: Alphabet,
                   workers: int = 1) -> tuple[dict[str, DnaSequence], int]:
    records = list(records)
    if not records:
        raise IneligibleRecordError("no eligible users")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(lambda r: encode(r, alphabet), records))
    else:
        encoded = [encode(r, alphabet) for r in records]
    sequences = {s.user_id: s for s in encoded}
    max_len   = max(len(s) for s in encoded)
    _logger.info(f"encoded {len(sequences)} users with {alphabet.value}, max_len={max_len}")
    return sequences, max_len


def encode_corpus(corpus: Corpus, alphabet: Alphabet,
                  workers: int = 1) -> tuple[dict[str, DnaSequence], int]:
    """
    Encode every user of every split. max_len is taken over the whole
    corpus so all splits share one image canvas.
    """
    return encode_records(corpus.records(), alphabet, workers)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def write_dna_jsonl(sequences: Iterable[DnaSequence], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sequences:
            fh.write(json.dumps({"user_id": s.user_id, "alphabet": s.alphabet.value,
                                 "seq": s.seq}, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def write_dna_tsv(sequences: Iterable[DnaSequence], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sequences:
            fh.write(f"{s.user_id}\t{s.seq}\n")
            count += 1
    return count


def read_dna_jsonl(path: str | Path) -> dict[str, DnaSequence]:
    sequences: dict[str, DnaSequence] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                seq = DnaSequence(obj["user_id"], Alphabet.parse(obj["alphabet"]), obj["seq"])
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON ({exc.msg})", lineno) from None
            except KeyError as exc:
                raise SchemaError(f"missing field '{exc.args[0]}'", lineno) from None
            sequences[seq.user_id] = seq
    return sequences


def write_meta(path: str | Path, alphabet: Alphabet, max_len: int, count: int):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"alphabet": alphabet.value, "max_len": max_len, "count": count}, fh)
        fh.write("\n")


def read_meta(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def single_alphabet(sequences: Mapping[str, DnaSequence]) -> Alphabet:
    alphabets = {s.alphabet for s in sequences.values()}
    if len(alphabets) != 1:
        raise AlphabetError(f"sequences mix alphabets: {sorted(a.value for a in alphabets)}")
    return alphabets.pop()
