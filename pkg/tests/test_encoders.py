import numpy as np
import pytest

from binfmt import save_tensors
from dna import Alphabet, DnaSequence
from encoders import (EncoderConfig, Encoders, ToyTextEncoder, ToyVisionEncoder,
                      adaptive_average_pool, load_precomputed, parse_mode, prepare_inputs,
                      text_tokens, tokenize, trigram_buckets)
from errors import ConfigError, FeatureError, ShapeError
from imagify import default_palette, render
from tensor import grad_check

from conftest import TINY_ENCODER, random_projection


def _pixels(seq: str) -> np.ndarray:
    return render(DnaSequence("u", Alphabet.TYPE3, seq), 4, default_palette(Alphabet.TYPE3)).pixels


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_parse_mode_accepts_short_and_full_names():
    assert parse_mode("vgg16") == "vgg16_shape"
    assert parse_mode("AlexNet") == "alexnet_shape"
    assert parse_mode("alexnet_shape") == "alexnet_shape"
    with pytest.raises(ConfigError, match="resnet"):
        parse_mode("resnet")


@pytest.mark.parametrize("kwargs", [
    {"kind": "bert"},
    {"mode": "vgg19_shape"},
    {"d_model": 0},
    {"d_vision": 0},
    {"seed": -1},
    {"kind": "precomputed"},
])
def test_encoder_config_validation(kwargs):
    with pytest.raises(ConfigError):
        EncoderConfig(**kwargs)


def test_encoder_config_presets():
    vgg = EncoderConfig(mode="vgg16_shape")
    assert (vgg.grid, vgg.positions, vgg.vision_width) == (32, 64, 512)
    alex = EncoderConfig(mode="alexnet_shape", d_vision=7)
    assert (alex.grid, alex.positions, alex.vision_width) == (28, 49, 7)


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------

def test_tokenize_splits_words_and_punctuation():
    assert tokenize("Hello, World!") == ["hello", ",", "world", "!"]
    assert tokenize("a b c d e", max_tokens=3) == ["a", "b"]
    assert tokenize("   ") == []


def test_trigram_buckets_are_seeded_and_in_range():
    grams = trigram_buckets("cat", 16, seed=0)
    assert len(grams) == 3                       # <ca, cat, at>
    assert all(0 <= g < 16 for g in grams)
    assert grams == trigram_buckets("cat", 16, seed=0)
    assert len(trigram_buckets("a", 16, seed=0)) == 1


def test_text_encoder_shapes(tiny_encoder):
    enc = ToyTextEncoder(tiny_encoder, np.random.default_rng(0))
    tokens = [text_tokens(tiny_encoder, "short"), text_tokens(tiny_encoder, "a much longer one"),
              text_tokens(tiny_encoder, "")]
    feat = enc(tokens)
    assert feat.pooled.shape == (3, 8)
    assert feat.sequence.shape == (3, 5, 8)
    assert feat.lengths.tolist() == [2, 5, 1]


def test_text_encoder_ignores_padding(tiny_encoder):
    enc = ToyTextEncoder(tiny_encoder, np.random.default_rng(0))
    short = text_tokens(tiny_encoder, "bot account")
    longer = text_tokens(tiny_encoder, "posting every hour on the hour, all day")
    alone = enc([short])
    padded = enc([short, longer])
    assert np.allclose(alone.pooled.data[0], padded.pooled.data[0], rtol=0, atol=1e-12)
    assert np.allclose(alone.sequence.data[0], padded.sequence.data[0, :3], rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# Vision
# ---------------------------------------------------------------------------

def test_adaptive_pool_block_means():
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, size=(3, 256, 256), dtype=np.uint8)
    pooled = adaptive_average_pool(pixels, 32)
    expected = pixels.reshape(3, 32, 8, 32, 8).mean(axis=(2, 4)).transpose(1, 2, 0) / 255.0
    assert pooled.shape == (32, 32, 3)
    assert np.allclose(pooled, expected, atol=1e-12)
    flat = adaptive_average_pool(np.full((3, 256, 256), 51, dtype=np.uint8), 28)
    assert np.allclose(flat, 0.2)


def test_adaptive_pool_rejects_bad_shape():
    with pytest.raises(ShapeError):
        adaptive_average_pool(np.zeros((1, 8, 8), dtype=np.uint8), 4)


@pytest.mark.parametrize("mode, positions", [("vgg16_shape", 64), ("alexnet_shape", 49)])
def test_vision_encoder_positions(mode, positions):
    cfg = EncoderConfig(**{**TINY_ENCODER, "mode": mode})
    enc = ToyVisionEncoder(cfg, np.random.default_rng(0))
    grids = [prepare_inputs(cfg, "u", "", _pixels(s)).grid for s in ("ACTTA", "TTTTTTT")]
    feat = enc(grids)
    assert feat.sequence.shape == (2, positions, 8)
    assert feat.pooled.shape == (2, 8)
    assert feat.mask.all()


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def test_prepare_inputs(tiny_encoder):
    inputs = prepare_inputs(tiny_encoder, "u1", "hi there", _pixels("ACT"))
    assert inputs.user_id == "u1"
    assert len(inputs.tokens) == 2
    assert inputs.grid.shape == (28, 28, 3)
    with pytest.raises(FeatureError, match="u1"):
        prepare_inputs(tiny_encoder, "u1", "hi")
    with pytest.raises(ShapeError):
        prepare_inputs(tiny_encoder, "u1", "hi", np.zeros((3, 64, 64), dtype=np.uint8))


def test_precomputed_inputs_carry_ids_only(tmp_path):
    cfg = EncoderConfig(kind="precomputed", features_path=str(tmp_path / "f.bwts"))
    inputs = prepare_inputs(cfg, "u9")
    assert inputs.user_id == "u9" and inputs.tokens == () and inputs.grid is None


# ---------------------------------------------------------------------------
# Precomputed features
# ---------------------------------------------------------------------------

def _features(path, rng, d=4):
    save_tensors(path, {
        "u1/text": rng.normal(size=(3, d)), "u1/vision": rng.normal(size=(5, d)),
        "u2/text": rng.normal(size=(1, d)), "u2/vision": rng.normal(size=(5, d)),
    })


def test_precomputed_lookup(tmp_path):
    rng = np.random.default_rng(0)
    _features(tmp_path / "f.bwts", rng)
    store = load_precomputed(tmp_path / "f.bwts", {"text": 4, "vision": 4})
    assert store.user_ids == ["u1", "u2"]
    text, vision = store.lookup(["u2", "u1"])
    assert text.sequence.shape == (2, 3, 4)
    assert text.mask.tolist() == [[True, False, False], [True, True, True]]
    assert np.array_equal(text.pooled.data[1], store.text["u1"][0])
    assert np.allclose(vision.pooled.data[0], store.vision["u2"].mean(axis=0))
    with pytest.raises(FeatureError, match="u3"):
        store.lookup(["u1", "u3"])


def test_precomputed_load_errors(tmp_path):
    rng = np.random.default_rng(0)
    _features(tmp_path / "f.bwts", rng)
    with pytest.raises(FeatureError, match="width 4, expected 8"):
        load_precomputed(tmp_path / "f.bwts", {"text": 8, "vision": 4})
    save_tensors(tmp_path / "lonely.bwts", {"u1/text": np.ones((1, 4))})
    with pytest.raises(FeatureError, match="one modality"):
        load_precomputed(tmp_path / "lonely.bwts", {"text": 4, "vision": 4})
    save_tensors(tmp_path / "named.bwts", {"u1/audio": np.ones((1, 4))})
    with pytest.raises(FeatureError, match="is not"):
        load_precomputed(tmp_path / "named.bwts", {"text": 4, "vision": 4})


def test_precomputed_encoders_are_frozen(tmp_path):
    _features(tmp_path / "f.bwts", np.random.default_rng(0))
    cfg = EncoderConfig(kind="precomputed", d_model=4, features_path=str(tmp_path / "f.bwts"))
    enc = Encoders(cfg, np.random.default_rng(0))
    assert not enc.trainable
    assert enc.parameters() == []
    text, vision = enc([prepare_inputs(cfg, "u1")])
    assert text.pooled.shape == (1, 4) and vision.sequence.shape == (1, 5, 4)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def test_encoder_gradients_match_finite_differences():
    cfg = EncoderConfig(d_model=4, buckets=16, max_tokens=6, conv_channels=2, d_vision=3,
                        mode="alexnet_shape")
    enc = Encoders(cfg, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    batch = [prepare_inputs(cfg, f"u{i}", desc, rng.integers(0, 256, (3, 256, 256), np.uint8))
             for i, desc in enumerate(("fast bot", "hello world again"))]

    def loss(*_):
        text, vision = enc(batch)
        return random_projection(text.pooled, 1) + random_projection(vision.pooled, 2)

    assert grad_check(loss, enc.parameters(), atol=1e-7) < 1e-5
