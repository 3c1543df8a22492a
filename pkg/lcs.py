"""
lcs.py - Longest-common-substring curves over digital-DNA sequences.

lcs_len(k) is the length of the longest substring shared by at least k
accounts (the best size-k subset). Coordinated bots keep a long plateau
until k passes their group size, then the curve drops sharply.

Every k is answered from one generalized suffix array: the sequences are
joined with unique separators, the LCP-interval tree is walked bottom-up
and each interval carries a bitmask of the accounts whose suffixes it
holds. An interval of depth ℓ covering d accounts proves lcs_len(k) ≥ ℓ
for every k ≤ d.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from errors import InsufficientDataError

_logger = logging.getLogger("botdna.lcs")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LcsCurve:
    points: tuple[tuple[int, int], ...]                 # (k, lcs_len), k = 2..n
    groups: Mapping[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ks = [k for k, _ in self.points]
        if ks and ks != list(range(2, 2 + len(ks))):
            raise InsufficientDataError(f"curve k values must run 2..n contiguously, got {ks}")
        lens = [v for _, v in self.points]
        if any(b > a for a, b in zip(lens, lens[1:])):
            raise InsufficientDataError(f"LCS curve must be non-increasing, got {lens}")

    def length_at(self, k: int) -> int:
        return self.points[k - 2][1]


@dataclass(frozen=True)
class GroupVerdict:
    bot_group:      frozenset[str]
    split_k:        int
    drop_magnitude: int

    def to_dict(self) -> dict:
        return {"bot_group": sorted(self.bot_group), "split_k": self.split_k,
                "drop_magnitude": self.drop_magnitude}


# ---------------------------------------------------------------------------
# Pairwise
# ---------------------------------------------------------------------------

def lcs_pair(a: str, b: str) -> int:
    """Longest contiguous common substring, rolling-row dynamic programming."""
    if not a or not b:
        return 0
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


# ---------------------------------------------------------------------------
# Generalized suffix array
# ---------------------------------------------------------------------------

def _concatenate(strings: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """
    Integer text with separator i (code i) after string i; characters get
    codes ≥ len(strings). Returns (text, owner) where owner[p] is the
    string index position p belongs to.
    """
    alphabet = sorted(set("".join(strings)))
    code = {ch: len(strings) + i for i, ch in enumerate(alphabet)}
    text, owner = [], []
    for doc, s in enumerate(strings):
        text.extend(code[ch] for ch in s)
        text.append(doc)
        owner.extend([doc] * (len(s) + 1))
    return np.asarray(text, dtype=np.int64), np.asarray(owner, dtype=np.int64)


def suffix_array(text: np.ndarray) -> np.ndarray:
    """Prefix doubling over rank pairs with numpy lexsort, O(n log² n)."""
    n = len(text)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    rank = np.unique(text, return_inverse=True)[1].astype(np.int64)
    k = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        if k < n:
            second[:n - k] = rank[k:]
        order = np.lexsort((second, rank))
        r, s = rank[order], second[order]
        changed = np.concatenate(([0], ((r[1:] != r[:-1]) | (s[1:] != s[:-1])).astype(np.int64)))
        new_rank = np.empty(n, dtype=np.int64)
        new_rank[order] = np.cumsum(changed)
        rank = new_rank
        if rank.max() == n - 1 or k >= n:
            return order
        k *= 2


def lcp_array(text: np.ndarray, sa: np.ndarray) -> np.ndarray:
    """Kasai: lcp[i] = LCP(suffix sa[i-1], suffix sa[i]); lcp[0] = 0."""
    n = len(sa)
    rank = np.empty(n, dtype=np.int64)
    rank[sa] = np.arange(n)
    t   = text.tolist()
    sal = sa.tolist()
    lcp = [0] * n
    h = 0
    for i in range(n):
        r = int(rank[i])
        if r == 0:
            h = 0
            continue
        j = sal[r - 1]
        while i + h < n and j + h < n and t[i + h] == t[j + h]:
            h += 1
        lcp[r] = h
        if h:
            h -= 1
    return np.asarray(lcp, dtype=np.int64)


def _interval_best(strings: Sequence[str]) -> dict[int, tuple[int, int]]:
    """
    Walk the LCP-interval tree bottom-up. Returns, for each account count
    d ≥ 2, the deepest interval covering exactly d accounts as
    (depth, account bitmask). Separators are unique, so no LCP spans one.
    """
    text, owner = _concatenate(strings)
    sa  = suffix_array(text)
    lcp = lcp_array(text, sa)
    n   = len(sa)
    doc_bit = [1 << int(owner[p]) for p in sa.tolist()]

    best: dict[int, tuple[int, int]] = {}

    def report(depth: int, mask: int):
        d = mask.bit_count()
        if d >= 2 and (d not in best or depth > best[d][0]):
            best[d] = (depth, mask)

    stack = [[0, 0]]                    # [depth, mask]
    for i in range(1, n + 1):
        h = int(lcp[i]) if i < n else 0
        carry = doc_bit[i - 1]
        while stack[-1][0] > h:
            depth, mask = stack.pop()
            mask |= carry
            report(depth, mask)
            carry = mask
        if stack[-1][0] < h:
            stack.append([h, carry])
        else:
            stack[-1][1] |= carry
    return best


def lcs_among(strings: Sequence[str]) -> int:
    """Longest substring common to every string."""
    if len(strings) < 2:
        raise InsufficientDataError(f"lcs_among needs at least 2 strings, got {len(strings)}")
    if any(not s for s in strings):
        return 0
    best = _interval_best(strings)
    full = len(strings)
    return best[full][0] if full in best else 0


# ---------------------------------------------------------------------------
# Curve and verdict
# ---------------------------------------------------------------------------

def lcs_curve(sequences: Mapping[str, str]) -> LcsCurve:
    """
    lcs_len(k) for k = 2..n with a witness group of exactly k accounts per k.

    Witnesses take the lowest-index accounts (input order) of the interval
    attaining the value.
    """
    user_ids = list(sequences)
    n = len(user_ids)
    if n < 2:
        raise InsufficientDataError(f"an LCS curve needs at least 2 accounts, got {n}")
    best = _interval_best([sequences[u] for u in user_ids])

    points, groups = [], {}
    running_depth, running_mask = 0, 0
    for d in range(n, 1, -1):           # suffix maximum over account counts ≥ k
        if d in best and best[d][0] > running_depth:
            running_depth, running_mask = best[d]
        k = d
        members = [u for i, u in enumerate(user_ids) if running_mask >> i & 1][:k]
        points.append((k, running_depth))
        groups[k] = tuple(members) if running_depth > 0 else ()
    points.reverse()
    curve = LcsCurve(tuple(points), groups)
    _logger.info(f"LCS curve over {n} accounts: " +
                 " ".join(f"{k}:{v}" for k, v in curve.points))
    return curve


def detect_group(curve: LcsCurve) -> GroupVerdict:
    """Split at the steepest consecutive drop; ties go to the smaller k."""
    if len(curve.points) < 2:
        raise InsufficientDataError("group detection needs a curve with at least 2 points")
    split_k, drop = 0, 0
    for (k, a), (_, b) in zip(curve.points, curve.points[1:]):
        if a - b > drop:
            split_k, drop = k, a - b
    if drop == 0:
        return GroupVerdict(frozenset(), 0, 0)
    return GroupVerdict(frozenset(curve.groups.get(split_k, ())), split_k, drop)


def curve_tsv(curve: LcsCurve) -> str:
    return "k\tlcs_len\n" + "".join(f"{k}\t{v}\n" for k, v in curve.points)
