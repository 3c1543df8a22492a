"""
synthetic.py - Seeded synthetic corpora for tests, demos and acceptance runs.

  fixture_accounts   12 accounts (6 bots, 6 humans), 200 tweets each
  planted_group      3 bots sharing a long motif + 3 random humans (LCS)
  learnable_corpus   600/200/200 split; labels follow DNA statistics and
                     description vocabulary
  xor_corpus         label = text bit XOR timeline bit, so neither modality
                     alone predicts it
"""

from __future__ import annotations

import numpy as np

from constants import SPLIT_NAMES
from ingest import Label, Tweet, TweetKind, UserRecord

T0 = 1_600_000_000

BOT_WORDS   = ("crypto", "giveaway", "follow", "deals", "promo", "free", "win", "airdrop")
HUMAN_WORDS = ("coffee", "nurse", "mom", "hiking", "books", "dad", "runner", "garden")
FILLER      = ("life", "news", "music", "daily", "world", "photos", "thoughts", "and")

_KINDS = (TweetKind.ORIGINAL, TweetKind.REPLY, TweetKind.RETWEET)


def _tweet(rng: np.random.Generator, user_id: str, i: int, kind: TweetKind,
           t: int, entity_p: tuple[float, float, float]) -> Tweet:
    """Tweet whose entity counts agree with what scan_entities finds in its text."""
    words = [str(w) for w in rng.choice(FILLER, size=3)]
    n_urls     = int(rng.random() < entity_p[0])
    n_hashtags = int(rng.random() < entity_p[1])
    n_mentions = int(rng.random() < entity_p[2])
    words += ["https://t.co/x"] * n_urls + ["#tag"] * n_hashtags + ["@pal"] * n_mentions
    return Tweet(f"{user_id}-t{i:04d}", t, kind, n_urls, n_hashtags, n_mentions, " ".join(words))


def _timeline(rng: np.random.Generator, user_id: str, n: int, kind_p: tuple[float, float, float],
              entity_p: tuple[float, float, float]) -> tuple[Tweet, ...]:
    gaps  = rng.integers(60, 7200, size=n)
    times = T0 + np.cumsum(gaps)
    kinds = rng.choice(3, size=n, p=kind_p)
    return tuple(_tweet(rng, user_id, i, _KINDS[k], int(t), entity_p)
                 for i, (k, t) in enumerate(zip(kinds.tolist(), times.tolist())))


def _description(rng: np.random.Generator, vocab: tuple[str, ...], extra: tuple[str, ...] = ()) -> str:
    words = [str(w) for w in rng.choice(vocab, size=3)] + [str(w) for w in rng.choice(FILLER, size=2)]
    words += list(extra)
    rng.shuffle(words)
    return " ".join(words)


# ---------------------------------------------------------------------------
# Fixture
# ---------------------------------------------------------------------------

def fixture_accounts(seed: int = 0, tweets: int = 200) -> list[UserRecord]:
    """12 labeled accounts, alternating bot / human, ids u00..u11."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(12):
        uid = f"u{i:02d}"
        if i % 2 == 0:
            label, vocab = Label.BOT, BOT_WORDS
            kind_p, entity_p = (0.1, 0.05, 0.85), (0.8, 0.6, 0.1)
        else:
            label, vocab = Label.HUMAN, HUMAN_WORDS
            kind_p, entity_p = (0.6, 0.3, 0.1), (0.1, 0.2, 0.4)
        records.append(UserRecord(uid, _description(rng, vocab), label,
                                  _timeline(rng, uid, tweets, kind_p, entity_p)))
    return records


# ---------------------------------------------------------------------------
# LCS
# ---------------------------------------------------------------------------

def planted_group(seed: int = 0, n_bots: int = 3, n_humans: int = 3, motif_len: int = 30,
                  human_len: int = 40, flank: int = 8) -> tuple[dict[str, str], frozenset[str]]:
    """
    Type3 strings: every bot is random flank + shared motif + random flank,
    humans are uniformly random. Returns (sequences, planted bot ids).
    """
    rng = np.random.default_rng(seed)
    letters = np.array(list("ACT"))

    def rand(n: int) -> str:
        return "".join(letters[rng.integers(0, 3, size=n)].tolist())

    motif = rand(motif_len)
    sequences: dict[str, str] = {}
    bots = []
    for i in range(n_bots + n_humans):
        uid = f"acct{i}"
        if i < n_bots:
            sequences[uid] = rand(flank) + motif + rand(flank)
            bots.append(uid)
        else:
            sequences[uid] = rand(human_len)
    order = rng.permutation(len(sequences)).tolist()
    keys = list(sequences)
    return {keys[i]: sequences[keys[i]] for i in order}, frozenset(bots)


# ---------------------------------------------------------------------------
# Learnable corpora
# ---------------------------------------------------------------------------

def _split_column(n_train: int, n_val: int, n_test: int) -> list[str]:
    return ([SPLIT_NAMES[0]] * n_train + [SPLIT_NAMES[1]] * n_val + [SPLIT_NAMES[2]] * n_test)


def learnable_corpus(n_train: int = 600, n_val: int = 200, n_test: int = 200,
                     seed: int = 0, tweets: int = 40) -> list[UserRecord]:
    """
    Pre-split, class-balanced per split. Bots retweet heavily and describe
    themselves with promotional words; humans mostly post originals and
    replies with everyday words.
    """
    rng = np.random.default_rng(seed)
    records = []
    for j, split in enumerate(_split_column(n_train, n_val, n_test)):
        uid = f"l{j:05d}"
        bot = j % 2 == 0
        if bot:
            kind_p, entity_p, vocab = (0.1, 0.1, 0.8), (0.7, 0.5, 0.1), BOT_WORDS
        else:
            kind_p, entity_p, vocab = (0.6, 0.3, 0.1), (0.1, 0.2, 0.4), HUMAN_WORDS
        records.append(UserRecord(uid, _description(rng, vocab), Label.BOT if bot else Label.HUMAN,
                                  _timeline(rng, uid, tweets, kind_p, entity_p), split))
    return records


def xor_corpus(n_train: int = 600, n_val: int = 200, n_test: int = 200,
               seed: int = 0, tweets: int = 40) -> list[UserRecord]:
    """
    Text bit: description carries 'alpha' (1) or 'omega' (0) among shared
    filler. Timeline bit: mostly retweets (1) or mostly originals (0).
    Label = text bit XOR timeline bit; the four combinations cycle so every
    split is balanced in both bits and in the label.
    """
    rng = np.random.default_rng(seed)
    records = []
    for j, split in enumerate(_split_column(n_train, n_val, n_test)):
        uid = f"x{j:05d}"
        text_bit, image_bit = j % 2, (j // 2) % 2
        kind_p = (0.05, 0.05, 0.9) if image_bit else (0.9, 0.05, 0.05)
        desc = _description(rng, FILLER, ("alpha" if text_bit else "omega",))
        label = Label(text_bit ^ image_bit)
        records.append(UserRecord(uid, desc, label,
                                  _timeline(rng, uid, tweets, kind_p, (0.2, 0.2, 0.2)), split))
    return records
