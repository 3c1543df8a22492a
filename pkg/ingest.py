"""
ingest.py - Parse, validate, filter, balance and split labeled account
corpora stored as line-delimited JSON.

One account per line:

    {"user_id": str, "description": str, "label": 0|1|null,
     "split": "train"|"val"|"test"|null,
     "tweets": [{"id": str, "created_at": int, "kind": "original"|"retweet"|"reply",
                 "n_urls": int, "n_hashtags": int, "n_mentions": int, "text": str}]}

Records are immutable values; every transformation returns new records.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from constants import DEFAULT_FRACTIONS, RECENT_TWEETS, SPLIT_NAMES
from errors import LabelError, SchemaError, SplitError

_logger = logging.getLogger("botdna.ingest")

_RECORD_KEYS = ("user_id", "description", "label", "split", "tweets")
_TWEET_KEYS  = ("id", "created_at", "kind", "n_urls", "n_hashtags", "n_mentions", "text")
_COUNT_KEYS  = ("n_urls", "n_hashtags", "n_mentions")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

class TweetKind(str, Enum):
    ORIGINAL = "original"
    RETWEET  = "retweet"
    REPLY    = "reply"


class Label(IntEnum):
    HUMAN = 0
    BOT   = 1


@dataclass(frozen=True)
class Tweet:
    id:         str
    created_at: int          # UNIX seconds, UTC
    kind:       TweetKind
    n_urls:     int = 0
    n_hashtags: int = 0
    n_mentions: int = 0
    text:       str = ""


@dataclass(frozen=True)
class UserRecord:
    user_id:     str
    description: str
    label:       Label | None
    tweets:      tuple[Tweet, ...] = ()
    split:       str | None = None


@dataclass
class Corpus:
    """Named set of disjoint splits. Class counts are always a live tally."""
    name:   str
    splits: dict[str, list[UserRecord]] = field(default_factory=dict)

    def __post_init__(self):
        seen: set[str] = set()
        for split_name, records in self.splits.items():
            for r in records:
                if r.user_id in seen:
                    raise SplitError(f"user {r.user_id} appears in more than one split "
                                     f"(second time in '{split_name}')")
                seen.add(r.user_id)

    @property
    def class_counts(self) -> dict[str, dict[int, int]]:
        counts = {}
        for split_name, records in self.splits.items():
            tally = {int(Label.HUMAN): 0, int(Label.BOT): 0}
            for r in records:
                if r.label is not None:
                    tally[int(r.label)] += 1
            counts[split_name] = tally
        return counts

    def records(self) -> list[UserRecord]:
        """All records, split by split in insertion order."""
        return [r for records in self.splits.values() for r in records]

    def summary(self) -> dict:
        return {
            "name": self.name,
            "users": sum(len(v) for v in self.splits.values()),
            "splits": {name: {"users": len(recs),
                              "human": self.class_counts[name][0],
                              "bot": self.class_counts[name][1]}
                       for name, recs in self.splits.items()},
        }


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def scan_entities(text: str) -> tuple[int, int, int]:
    """
    Count URL, hashtag and mention tokens in *text* without regular
    expressions: a whitespace-separated token starting with http:// or
    https:// is a URL, '#word' a hashtag, '@word' a mention.
    """
    urls = hashtags = mentions = 0
    for token in text.split():
        low = token.lower()
        if low.startswith(("http://", "https://")):
            urls += 1
        elif len(token) > 1 and token[0] == "#" and _is_word_char(token[1]):
            hashtags += 1
        elif len(token) > 1 and token[0] == "@" and _is_word_char(token[1]):
            mentions += 1
    return urls, hashtags, mentions


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def _require(obj: dict, key: str, line: int):
    if key not in obj:
        raise SchemaError(f"missing field '{key}'", line)
    return obj[key]


def _require_str(obj: dict, key: str, line: int) -> str:
    value = _require(obj, key, line)
    if not isinstance(value, str):
        raise SchemaError(f"field '{key}' must be a string", line)
    return value


def _require_count(obj: dict, key: str, line: int) -> int:
    value = _require(obj, key, line)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise SchemaError(f"field '{key}' must be a non-negative integer", line)
    return value


def _parse_tweet(obj, line: int, backfill: bool, warned: set[str]) -> Tweet:
    if not isinstance(obj, dict):
        raise SchemaError("tweet entry must be an object", line)
    _warn_unknown(obj, _TWEET_KEYS, "tweet", warned)

    tweet_id = _require_str(obj, "id", line)
    created  = _require(obj, "created_at", line)
    if isinstance(created, bool) or not isinstance(created, int):
        raise SchemaError(f"unparseable timestamp {created!r} for tweet '{tweet_id}'", line)
    kind_raw = _require(obj, "kind", line)
    try:
        kind = TweetKind(kind_raw)
    except ValueError:
        raise SchemaError(f"unknown kind '{kind_raw}'", line) from None
    text = obj.get("text", "")
    if not isinstance(text, str):
        raise SchemaError("field 'text' must be a string", line)

    if backfill and not any(k in obj for k in _COUNT_KEYS):
        n_urls, n_hashtags, n_mentions = scan_entities(text)
    else:
        n_urls, n_hashtags, n_mentions = (_require_count(obj, k, line) for k in _COUNT_KEYS)

    return Tweet(tweet_id, created, kind, n_urls, n_hashtags, n_mentions, text)


def _warn_unknown(obj: dict, known: Sequence[str], where: str, warned: set[str]):
    for key in obj:
        if key not in known and (where, key) not in warned:
            warned.add((where, key))
            _logger.warning(f"ignoring unknown {where} key '{key}'")


def parse_record(obj, line: int = 1, backfill_entities: bool = False,
                 _warned: set | None = None) -> UserRecord:
    """Validate one decoded JSON object and build a UserRecord."""
    warned = _warned if _warned is not None else set()
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line)
    _warn_unknown(obj, _RECORD_KEYS, "record", warned)

    user_id     = _require_str(obj, "user_id", line)
    description = _require_str(obj, "description", line)
    label_raw   = _require(obj, "label", line)
    if label_raw is None:
        label = None
    elif label_raw in (0, 1) and not isinstance(label_raw, bool):
        label = Label(label_raw)
    else:
        raise SchemaError(f"label must be 0, 1 or null, got {label_raw!r}", line)

    split = obj.get("split")
    if split is not None and split not in SPLIT_NAMES:
        raise SchemaError(f"unknown split '{split}'", line)

    tweets_raw = _require(obj, "tweets", line)
    if not isinstance(tweets_raw, list):
        raise SchemaError("field 'tweets' must be a list", line)
    tweets = tuple(_parse_tweet(t, line, backfill_entities, warned) for t in tweets_raw)
    return UserRecord(user_id, description, label, tweets, split)


def parse_jsonl(path: str | Path, backfill_entities: bool = False) -> list[UserRecord]:
    """
    Read one UserRecord per non-blank line, in file order.

    Raises SchemaError carrying the 1-based line number on malformed JSON,
    unknown tweet kinds, missing fields or wrongly typed values.
    """
    records: list[UserRecord] = []
    warned:  set = set()
    with open(path, "rb") as fh:
        for lineno, blob in enumerate(fh, start=1):
            try:
                raw = blob.decode("utf-8")
            except UnicodeDecodeError:
                raise SchemaError("invalid UTF-8", lineno) from None
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON ({exc.msg})", lineno) from None
            records.append(parse_record(obj, lineno, backfill_entities, warned))
    _logger.info(f"parsed {len(records)} records from {path}")
    return records


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def serialize_record(record: UserRecord) -> str:
    """Canonical one-line JSON: documented key order, UTF-8, no trailing newline."""
    obj = {
        "user_id":     record.user_id,
        "description": record.description,
        "label":       None if record.label is None else int(record.label),
        "split":       record.split,
        "tweets": [
            {
                "id":         t.id,
                "created_at": t.created_at,
                "kind":       t.kind.value,
                "n_urls":     t.n_urls,
                "n_hashtags": t.n_hashtags,
                "n_mentions": t.n_mentions,
                "text":       t.text,
            }
            for t in record.tweets
        ],
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dump_jsonl(records: Iterable[UserRecord], path: str | Path) -> int:
    """Write records canonically; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(serialize_record(record))
            fh.write("\n")
            count += 1
    return count


# ---------------------------------------------------------------------------
# Record transforms
# ---------------------------------------------------------------------------

def sort_chronological(record: UserRecord) -> UserRecord:
    """Tweets ascending by created_at, ties by id; stable for exact duplicates."""
    ordered = tuple(sorted(record.tweets, key=lambda t: (t.created_at, t.id)))
    return replace(record, tweets=ordered)


def truncate_recent(record: UserRecord, max_tweets: int = RECENT_TWEETS) -> UserRecord:
    """Keep the *max_tweets* most recent tweets, in chronological order."""
    if max_tweets <= 0:
        raise SplitError(f"max_tweets must be positive, got {max_tweets}")
    ordered = sort_chronological(record)
    return replace(ordered, tweets=ordered.tweets[-max_tweets:])


def is_eligible(record: UserRecord) -> bool:
    return bool(record.description.strip()) and len(record.tweets) > 0


def filter_eligible(records: Iterable[UserRecord]) -> list[UserRecord]:
    """Keep accounts with a non-blank description and at least one tweet."""
    records = list(records)
    kept = [r for r in records if is_eligible(r)]
    dropped = len(records) - len(kept)
    if dropped:
        _logger.info(f"eligibility filter dropped {dropped} of {len(records)} records")
    return kept


def _require_labels(records: Sequence[UserRecord]):
    for r in records:
        if r.label is None:
            raise LabelError(f"record {r.user_id} has no label")


def balance_downsample(records: Sequence[UserRecord], seed: int) -> list[UserRecord]:
    """
    Downsample the majority class to the minority count.

    The minority class is kept whole; the majority is sampled without
    replacement; the result is shuffled. Everything draws from one
    numpy generator seeded with *seed*.
    """
    _require_labels(records)
    rng    = np.random.default_rng(seed)
    humans = [r for r in records if r.label == Label.HUMAN]
    bots   = [r for r in records if r.label == Label.BOT]
    minority, majority = (humans, bots) if len(humans) <= len(bots) else (bots, humans)

    picked = rng.choice(len(majority), size=len(minority), replace=False)
    kept   = minority + [majority[i] for i in sorted(picked.tolist())]
    order  = rng.permutation(len(kept))
    _logger.info(f"balanced to {len(minority)} humans + {len(minority)} bots "
                 f"(dropped {len(majority) - len(minority)})")
    return [kept[i] for i in order.tolist()]


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """
    Largest-remainder split of *n* items; ties go to the earlier split.
    Empty splits then borrow one item from the largest split.
    """
    exact  = [n * f for f in fractions]
    counts = [int(np.floor(x)) for x in exact]
    order  = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i, c in enumerate(counts):
        if c == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_corpus(records: Sequence[UserRecord],
                 fractions: Sequence[float] = DEFAULT_FRACTIONS,
                 seed: int = 0, name: str = "corpus") -> Corpus:
    """Stratified, seeded train/val/test split."""
    if len(fractions) != len(SPLIT_NAMES):
        raise SplitError(f"expected {len(SPLIT_NAMES)} fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise SplitError(f"fractions must be positive, got {tuple(fractions)}")
    total = float(sum(fractions))
    if abs(total - 1.0) > 1e-9:
        raise SplitError(f"fractions sum ≠ 1 (got {total:.12g})")
    _require_labels(records)

    rng = np.random.default_rng(seed)
    index_of = {id(r): i for i, r in enumerate(records)}
    buckets: dict[str, list[UserRecord]] = {s: [] for s in SPLIT_NAMES}
    for label in (Label.HUMAN, Label.BOT):
        members = [r for r in records if r.label == label]
        if not members:
            continue
        if len(members) < len(SPLIT_NAMES):
            raise SplitError(f"class {label.name.lower()} has {len(members)} records, "
                             f"fewer than {len(SPLIT_NAMES)} splits")
        shuffled = [members[i] for i in rng.permutation(len(members)).tolist()]
        start = 0
        for split_name, count in zip(SPLIT_NAMES, _allocate(len(members), fractions)):
            buckets[split_name].extend(shuffled[start:start + count])
            start += count

    splits = {}
    for split_name in SPLIT_NAMES:
        ordered = sorted(buckets[split_name], key=lambda r: index_of[id(r)])
        splits[split_name] = [replace(r, split=split_name) for r in ordered]
    return Corpus(name, splits)


def build_corpus(records: Sequence[UserRecord],
                 fractions: Sequence[float] = DEFAULT_FRACTIONS,
                 seed: int = 0, name: str = "corpus") -> Corpus:
    """Honour explicit split fields (pre-split corpora) or split by seed."""
    with_split = [r for r in records if r.split is not None]
    if not with_split:
        return split_corpus(records, fractions, seed, name)
    if len(with_split) != len(records):
        raise SplitError(f"{len(with_split)} of {len(records)} records carry a split field; "
                         "a corpus must be fully pre-split or not at all")
    splits: dict[str, list[UserRecord]] = {s: [] for s in SPLIT_NAMES}
    for r in records:
        splits[r.split].append(r)
    _logger.info("using the corpus' own split assignment")
    return Corpus(name, splits)
