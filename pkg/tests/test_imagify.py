import math

import numpy as np
import pytest

from dna import Alphabet, DnaSequence, encode_records
from errors import AlphabetError, CanvasError, PaletteError
from imagify import (DnaImage, Palette, canvas_side, default_palette, load_png, load_raw,
                     paint, read_manifest, render, render_corpus, resize_nn, to_three_channels,
                     unpaint)

TYPE3 = default_palette(Alphabet.TYPE3)


def test_canvas_side_matches_ceil_sqrt_exhaustively():
    for n in range(1, 1_000_001):
        s = canvas_side(n)
        assert (s - 1) * (s - 1) < n <= s * s
    assert canvas_side(10**12) == 10**6
    assert canvas_side(10**12 + 1) == 10**6 + 1


def test_canvas_side_rejects_empty():
    with pytest.raises(CanvasError):
        canvas_side(0)


def test_paint_row_major_with_padding():
    img = paint(DnaSequence("u", Alphabet.TYPE3, "ACT"), 2, TYPE3)
    assert img.pixels.shape == (1, 2, 2)
    assert img.pixels[0].tolist() == [[85, 170], [255, 0]]


def test_paint_unpaint_round_trip():
    rng = np.random.default_rng(1)
    for alphabet in Alphabet:
        palette = default_palette(alphabet)
        symbols = np.array(alphabet.symbols)
        for _ in range(500):
            n = int(rng.integers(1, 400))
            seq = DnaSequence("u", alphabet, "".join(symbols[rng.integers(0, len(symbols), n)]))
            side = canvas_side(n) + int(rng.integers(0, 3))
            assert unpaint(paint(seq, side, palette), n, palette) == seq


def test_paint_errors():
    seq = DnaSequence("u", Alphabet.TYPE3, "ACTAC")
    with pytest.raises(CanvasError):
        paint(seq, 2, TYPE3)
    with pytest.raises(AlphabetError):
        paint(seq, 3, default_palette(Alphabet.CONTENT5))


def test_resize_nn_floor_formula():
    rng = np.random.default_rng(2)
    src = DnaImage("u", rng.integers(0, 256, size=(3, 7, 7), dtype=np.uint8))
    out = resize_nn(src, 256)
    assert out.pixels.shape == (3, 256, 256)
    for i in (0, 36, 37, 128, 255):
        for j in (0, 73, 74, 200, 255):
            assert np.array_equal(out.pixels[:, i, j], src.pixels[:, i * 7 // 256, j * 7 // 256])
    assert set(np.unique(out.pixels)) <= set(np.unique(src.pixels))


def test_render_shape_and_levels():
    img = render(DnaSequence("u", Alphabet.TYPE3, "ACTTA"), 3, TYPE3)
    assert img.pixels.shape == (3, 256, 256) and img.pixels.dtype == np.uint8
    assert np.array_equal(img.pixels[0], img.pixels[1])
    assert np.array_equal(img.pixels[1], img.pixels[2])
    assert set(np.unique(img.pixels).tolist()) == {0, 85, 170, 255}


def test_three_channels_only_once():
    img = to_three_channels(paint(DnaSequence("u", Alphabet.TYPE3, "A"), 1, TYPE3))
    with pytest.raises(CanvasError, match="already 3 channels"):
        to_three_channels(img)


# ---------------------------------------------------------------------------
# Palettes
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("level, pad", [
    ({"A": 10, "C": 10, "T": 30}, 0),       # duplicate level
    ({"A": 10, "C": 20, "T": 30}, 20),      # pad collides
    ({"A": 10, "C": 20}, 0),                # missing symbol
    ({"A": 10, "C": 20, "T": 300}, 0),      # out of range
])
def test_palette_validation(level, pad):
    with pytest.raises(PaletteError):
        Palette(Alphabet.TYPE3, level, pad)


def test_palette_overrides_and_digest():
    custom = TYPE3.with_overrides({"A": 40})
    assert custom.level == {"A": 40, "C": 170, "T": 255}
    assert custom.digest() != TYPE3.digest()
    assert default_palette(Alphabet.TYPE3).digest() == TYPE3.digest()
    with pytest.raises(PaletteError):
        TYPE3.with_overrides({"N": 1})
    with pytest.raises(PaletteError):
        TYPE3.with_overrides({"A": 170})


# ---------------------------------------------------------------------------
# Corpus rendering
# ---------------------------------------------------------------------------

def test_render_corpus_is_bit_identical(tmp_path, fixture_records):
    seqs, max_len = encode_records(fixture_records, Alphabet.TYPE3)
    images, manifest = render_corpus(seqs, TYPE3, tmp_path / "a", max_len)
    render_corpus(seqs, TYPE3, tmp_path / "b", max_len, workers=3)
    assert len(images) == len(manifest) == 12
    assert manifest[0].side == math.isqrt(199) + 1
    for row in manifest:
        a = (tmp_path / "a" / row.path).read_bytes()
        b = (tmp_path / "b" / row.path).read_bytes()
        assert a == b
        assert np.array_equal(load_png(tmp_path / "a" / row.path).pixels,
                              images[row.user_id].pixels)
        raw = load_raw((tmp_path / "a" / row.path).with_suffix(".bdna"))
        assert raw.user_id == row.user_id
        assert np.array_equal(raw.pixels, images[row.user_id].pixels)
    assert read_manifest(tmp_path / "a" / "manifest.tsv") == manifest


def test_render_corpus_errors(tmp_path):
    seqs = {"a": DnaSequence("a", Alphabet.TYPE3, "ACTAC")}
    with pytest.raises(CanvasError, match="shorter than the longest"):
        render_corpus(seqs, TYPE3, max_len=3)
    with pytest.raises(AlphabetError):
        render_corpus(seqs, default_palette(Alphabet.CONTENT5))
    bad = {"x/y": DnaSequence("x/y", Alphabet.TYPE3, "A")}
    with pytest.raises(CanvasError, match="file name"):
        render_corpus(bad, TYPE3, tmp_path)
