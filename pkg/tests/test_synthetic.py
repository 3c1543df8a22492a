from collections import Counter

from dna import Alphabet, encode
from ingest import Label, filter_eligible, scan_entities
from synthetic import fixture_accounts, learnable_corpus, planted_group, xor_corpus


def test_fixture_accounts():
    records = fixture_accounts()
    assert [r.user_id for r in records] == [f"u{i:02d}" for i in range(12)]
    assert Counter(r.label for r in records) == {Label.BOT: 6, Label.HUMAN: 6}
    assert all(len(r.tweets) == 200 for r in records)
    assert filter_eligible(records) == records
    for t in records[0].tweets:
        assert scan_entities(t.text) == (t.n_urls, t.n_hashtags, t.n_mentions)


def test_fixtures_are_seeded():
    assert fixture_accounts(seed=4) == fixture_accounts(seed=4)
    assert planted_group(seed=2) == planted_group(seed=2)


def test_learnable_corpus_is_pre_split_and_balanced():
    records = learnable_corpus(8, 4, 4, tweets=10)
    assert Counter(r.split for r in records) == {"train": 8, "val": 4, "test": 4}
    for split in ("train", "val", "test"):
        labels = Counter(r.label for r in records if r.split == split)
        assert labels[Label.BOT] == labels[Label.HUMAN]


def test_xor_corpus_label_is_text_bit_xor_timeline_bit():
    records = xor_corpus(16, 8, 8)
    for r in records:
        text_bit = int("alpha" in r.description.split())
        dna = encode(r, Alphabet.TYPE3).seq
        image_bit = int(dna.count("T") > dna.count("A"))
        assert int(r.label) == text_bit ^ image_bit
    for split in ("train", "val", "test"):
        labels = Counter(int(r.label) for r in records if r.split == split)
        assert labels[0] == labels[1]
