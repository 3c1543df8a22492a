from collections import Counter

import numpy as np
import pytest

from errors import InsufficientDataError
from lcs import (LcsCurve, curve_tsv, detect_group, lcp_array, lcs_among, lcs_curve, lcs_pair,
                 suffix_array)
from synthetic import planted_group


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------

def _substrings(s: str) -> set[str]:
    return {s[i:j] for i in range(len(s)) for j in range(i + 1, len(s) + 1)}


def brute_curve(strings: list[str]) -> list[int]:
    """lcs_len(k) = longest substring contained in at least k strings."""
    counts = Counter()
    for s in strings:
        counts.update(_substrings(s))
    return [max((len(sub) for sub, c in counts.items() if c >= k), default=0)
            for k in range(2, len(strings) + 1)]


def brute_among(strings: list[str]) -> int:
    common = _substrings(strings[0])
    for s in strings[1:]:
        common &= _substrings(s)
    return max((len(x) for x in common), default=0)


def _random_corpus(rng, max_n=8, max_len=64, max_sigma=5):
    sigma = int(rng.integers(1, max_sigma + 1))
    letters = np.array(list("ACTNU"[:sigma]))
    n = int(rng.integers(2, max_n + 1))
    return [("".join(letters[rng.integers(0, sigma, int(rng.integers(1, max_len + 1)))]))
            for _ in range(n)]


def _check_against_oracle(strings):
    seqs = {f"s{i}": s for i, s in enumerate(strings)}
    curve = lcs_curve(seqs)
    assert [v for _, v in curve.points] == brute_curve(strings)
    assert lcs_among(strings) == brute_among(strings)
    for k, v in curve.points:
        group = curve.groups[k]
        if v == 0:
            assert group == ()
            continue
        assert len(group) == k
        assert lcs_among([seqs[u] for u in group]) >= v


# ---------------------------------------------------------------------------
# Tests
# ---------------------------------------------------------------------------

def test_lcs_pair():
    assert lcs_pair("ABCDEF", "ZBCDF") == 3
    assert lcs_pair("", "ACT") == 0
    assert lcs_pair("TTTT", "TT") == 2


def test_suffix_and_lcp_arrays():
    text = np.array([ord(c) for c in "banana"], dtype=np.int64)
    sa = suffix_array(text)
    assert sa.tolist() == [5, 3, 1, 0, 4, 2]
    assert lcp_array(text, sa).tolist()[1:] == [1, 3, 0, 0, 2]


def test_small_corpora_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(60):
        _check_against_oracle(_random_corpus(rng, max_n=6, max_len=24))


@pytest.mark.slow
def test_random_corpora_match_oracle():
    rng = np.random.default_rng(12345)
    for _ in range(500):
        _check_against_oracle(_random_corpus(rng))


def test_lcs_among_edge_cases():
    with pytest.raises(InsufficientDataError):
        lcs_among(["ACT"])
    assert lcs_among(["ACT", ""]) == 0
    assert lcs_among(["AAAA", "AAAA", "AAAA"]) == 4
    assert lcs_among(["AAA", "TTT"]) == 0


def test_curve_needs_two_accounts():
    with pytest.raises(InsufficientDataError):
        lcs_curve({"a": "ACT"})


def test_planted_group_is_recovered():
    for seed in range(5):
        seqs, bots = planted_group(seed=seed)
        curve = lcs_curve(seqs)
        verdict = detect_group(curve)
        assert verdict.bot_group == bots
        assert verdict.split_k == 3
        assert curve.length_at(3) >= 30
        assert verdict.drop_magnitude == curve.length_at(3) - curve.length_at(4)


def test_identical_strings_give_flat_curve():
    curve = lcs_curve({f"a{i}": "ACTTACA" for i in range(5)})
    assert [v for _, v in curve.points] == [7, 7, 7, 7]
    verdict = detect_group(curve)
    assert verdict.split_k == 0
    assert verdict.bot_group == frozenset()
    assert verdict.drop_magnitude == 0


def test_ties_go_to_smaller_k():
    curve = LcsCurve(((2, 10), (3, 6), (4, 2)), {2: ("a", "b"), 3: ("a", "b", "c")})
    verdict = detect_group(curve)
    assert verdict.split_k == 2
    assert verdict.bot_group == {"a", "b"}


def test_curve_validation():
    with pytest.raises(InsufficientDataError):
        LcsCurve(((2, 3), (3, 5)))
    with pytest.raises(InsufficientDataError):
        LcsCurve(((3, 3), (4, 2)))
    with pytest.raises(InsufficientDataError):
        detect_group(LcsCurve(((2, 4),)))


def test_curve_tsv():
    curve = LcsCurve(((2, 5), (3, 1)))
    assert curve_tsv(curve) == "k\tlcs_len\n2\t5\n3\t1\n"
