"""
encoders.py - Text and vision encoders feeding the fusion heads.

Two kinds:
  toy          small trainable stand-ins with the real encoders' output
               shapes: a hashed-trigram text encoder (start vector first,
               CLS-style pooling) and a two-block CNN whose last feature
               map has T = 64 (vgg16_shape) or T = 49 (alexnet_shape)
               positions.
  precomputed  features exported by an external pipeline, served
               verbatim from a BWTS1 file with entries `<user_id>/text`
               and `<user_id>/vision`.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from binfmt import load_tensors
from constants import (CONV_CHANNELS, D_MODEL, TARGET_SIDE, TEXT_BUCKETS,
                       TEXT_MAX_TOKENS, VISION_PRESETS)
from errors import ConfigError, FeatureError, ShapeError
from tensor import (Dense, Module, Parameter, Tensor, concat, conv2d, embedding_bag,
                    expand, global_average_pool, init_bias, init_weight, max_pool2d, relu,
                    reshape, scaled_dot_attention, tanh)

_logger = logging.getLogger("botdna.encoders")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

ENCODER_KINDS = ("toy", "precomputed")


# ---------------------------------------------------------------------------
# Config and feature types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderConfig:
    kind:          str = "toy"
    mode:          str = "vgg16_shape"
    d_model:       int = D_MODEL
    buckets:       int = TEXT_BUCKETS
    max_tokens:    int = TEXT_MAX_TOKENS
    conv_channels: int = CONV_CHANNELS
    d_vision:      int | None = None        # None → the mode's preset width
    seed:          int = 0
    features_path: str | None = None

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind '{self.kind}' (expected toy or precomputed)")
        if self.mode not in VISION_PRESETS:
            raise ConfigError(f"unknown vision mode '{self.mode}' "
                              f"(expected {' or '.join(VISION_PRESETS)})")
        for name in ("d_model", "buckets", "max_tokens", "conv_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder.{name} must be ≥ 1")
        if self.d_vision is not None and self.d_vision < 1:
            raise ConfigError("encoder.d_vision must be ≥ 1")
        if self.seed < 0:
            raise ConfigError("encoder.seed must be ≥ 0")
        if self.kind == "precomputed" and not self.features_path:
            raise ConfigError("precomputed encoders need encoder.features_path")

    @property
    def grid(self) -> int:
        return VISION_PRESETS[self.mode][0]

    @property
    def positions(self) -> int:
        return VISION_PRESETS[self.mode][1]

    @property
    def vision_width(self) -> int:
        return self.d_vision or VISION_PRESETS[self.mode][2]

    def to_dict(self) -> dict:
        return asdict(self)


def parse_mode(name: str) -> str:
    """'vgg16' / 'vgg16_shape' → 'vgg16_shape'."""
    key = name.lower()
    key = key if key.endswith("_shape") else f"{key}_shape"
    if key not in VISION_PRESETS:
        raise ConfigError(f"unknown vision mode '{name}' (expected vgg16 or alexnet)")
    return key


@dataclass
class TextFeature:
    pooled:   Tensor              # (B, d_t)
    sequence: Tensor              # (B, N, d_t)
    mask:     np.ndarray          # (B, N) bool, True for real positions

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class VisionFeature:
    pooled:   Tensor              # (B, d)
    sequence: Tensor              # (B, T, d)
    mask:     np.ndarray          # (B, T) bool


@dataclass(frozen=True)
class UserInputs:
    """Per-user encoder inputs, prepared once and reused every epoch."""
    user_id: str
    tokens:  tuple[tuple[int, ...], ...] = ()
    grid:    np.ndarray | None = None        # (g, g, 3) float64 in [0, 1]


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------

def tokenize(text: str, max_tokens: int = TEXT_MAX_TOKENS) -> list[str]:
    """Lowercase word / punctuation tokens, leaving room for the start vector."""
    return _TOKEN_RE.findall(text.lower())[: max_tokens - 1]


def trigram_buckets(token: str, buckets: int, seed: int) -> tuple[int, ...]:
    """Seeded blake2b hashes of the character trigrams of '<token>'."""
    padded = f"<{token}>"
    key = seed.to_bytes(8, "little")
    return tuple(
        int.from_bytes(hashlib.blake2b(padded[i:i + 3].encode("utf-8"),
                                       digest_size=8, key=key).digest(), "little") % buckets
        for i in range(len(padded) - 2))


class ToyTextEncoder(Module):
    """
    Hashed-trigram embeddings summed per token, a trainable start vector in
    front, one residual self-attention block and a tanh projection. The
    start position's output is the pooled feature.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg   = cfg
        self.table = init_weight(rng, (cfg.buckets, d), "table", fan_in=d)
        self.start = Parameter(rng.uniform(-1.0, 1.0, size=d) / np.sqrt(d), "start")
        self.proj  = Dense(rng, d, d)

    def __call__(self, token_lists: list[tuple[tuple[int, ...], ...]]) -> TextFeature:
        B = len(token_lists)
        d = self.cfg.d_model
        n_tok = max((len(t) for t in token_lists), default=0)
        start = expand(reshape(self.start, (1, 1, d)), (B, 1, d))
        if n_tok:
            ids, rows = [], []
            for b, tokens in enumerate(token_lists):
                for pos, grams in enumerate(tokens):
                    ids.extend(grams)
                    rows.extend([b * n_tok + pos] * len(grams))
            tok = reshape(embedding_bag(self.table, np.array(ids, dtype=np.int64),
                                        np.array(rows, dtype=np.int64), B * n_tok), (B, n_tok, d))
            x = concat([start, tok], axis=1)
        else:
            x = start
        mask = np.zeros((B, 1 + n_tok), dtype=bool)
        for b, tokens in enumerate(token_lists):
            mask[b, : 1 + len(tokens)] = True
        h = tanh(self.proj(x + scaled_dot_attention(x, x, x, key_mask=mask)))
        return TextFeature(h[:, 0, :], h, mask)


# ---------------------------------------------------------------------------
# Vision
# ---------------------------------------------------------------------------

def adaptive_average_pool(pixels: np.ndarray, grid: int) -> np.ndarray:
    """
    (3, S, S) uint8 → (grid, grid, 3) float64 in [0, 1]. Bin i spans rows
    ⌊i·S/grid⌋ .. ⌈(i+1)·S/grid⌉, averaged through an integral image.
    """
    if pixels.ndim != 3 or pixels.shape[0] != 3 or pixels.shape[1] != pixels.shape[2]:
        raise ShapeError(f"vision input must be (3, S, S), got {pixels.shape}")
    side = pixels.shape[1]
    img  = pixels.transpose(1, 2, 0).astype(np.float64) / 255.0
    integral = np.zeros((side + 1, side + 1, 3))
    integral[1:, 1:] = img.cumsum(axis=0).cumsum(axis=1)
    i = np.arange(grid)
    lo = (i * side) // grid
    hi = -((-(i + 1) * side) // grid)
    total = (integral[hi][:, hi] - integral[lo][:, hi]
             - integral[hi][:, lo] + integral[lo][:, lo])
    area = np.outer(hi - lo, hi - lo)[..., None]
    return total / area


class ToyVisionEncoder(Module):
    """
    Non-trainable adaptive average pool to a small grid, then
    conv3×3+ReLU → maxpool → conv3×3+ReLU → maxpool, which leaves exactly
    T = (grid/4)² positions of width d_v, and a dense projection to d_model.
    Pooled feature = mean over positions.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        c, dv = cfg.conv_channels, cfg.vision_width
        self.cfg  = cfg
        self.W1   = init_weight(rng, (27, c), "W1")
        self.b1   = init_bias((c,), "b1")
        self.W2   = init_weight(rng, (9 * c, dv), "W2")
        self.b2   = init_bias((dv,), "b2")
        self.proj = Dense(rng, dv, cfg.d_model)

    def __call__(self, grids: list[np.ndarray]) -> VisionFeature:
        x = Tensor(np.stack(grids))                                   # B, g, g, 3
        x = max_pool2d(relu(conv2d(x, self.W1, self.b1)))
        x = max_pool2d(relu(conv2d(x, self.W2, self.b2)))
        B, h, w, dv = x.shape
        if h * w != self.cfg.positions:
            raise ShapeError(f"vision map has {h * w} positions, {self.cfg.mode} needs "
                             f"{self.cfg.positions}")
        seq = self.proj(reshape(x, (B, h * w, dv)))
        mask = np.ones((B, h * w), dtype=bool)
        return VisionFeature(global_average_pool(seq), seq, mask)


# ---------------------------------------------------------------------------
# Precomputed features
# ---------------------------------------------------------------------------

class PrecomputedFeatures:
    """Per-user feature arrays keyed `<user_id>/text` and `<user_id>/vision`."""

    def __init__(self, text: dict[str, np.ndarray], vision: dict[str, np.ndarray]):
        self.text   = text
        self.vision = vision

    @property
    def user_ids(self) -> list[str]:
        return sorted(self.text)

    def lookup(self, user_ids: list[str]) -> tuple[TextFeature, VisionFeature]:
        missing = [u for u in user_ids if u not in self.text or u not in self.vision]
        if missing:
            raise FeatureError(f"user {', '.join(missing)} absent")
        return (_batch_rows([self.text[u] for u in user_ids], cls_pooled=True),
                _batch_rows([self.vision[u] for u in user_ids], cls_pooled=False))


def _batch_rows(arrays: list[np.ndarray], cls_pooled: bool):
    seqs = [a if a.ndim == 2 else a[None, :] for a in arrays]
    n = max(s.shape[0] for s in seqs)
    d = seqs[0].shape[1]
    data = np.zeros((len(seqs), n, d))
    mask = np.zeros((len(seqs), n), dtype=bool)
    for b, s in enumerate(seqs):
        data[b, : s.shape[0]] = s
        mask[b, : s.shape[0]] = True
    seq = Tensor(data)
    if cls_pooled:
        return TextFeature(Tensor(data[:, 0, :]), seq, mask)
    return VisionFeature(global_average_pool(seq, mask), seq, mask)


def load_precomputed(path: str | Path, expected_dims: dict[str, int]) -> PrecomputedFeatures:
    """
    Load and dimension-check every entry up front; a width other than
    expected_dims['text'] / ['vision'] is a FeatureError naming both.
    """
    tensors = load_tensors(path)
    text, vision = {}, {}
    for name, arr in tensors.items():
        user_id, _, modality = name.rpartition("/")
        if modality not in ("text", "vision") or not user_id:
            raise FeatureError(f"{path}: entry '{name}' is not '<user_id>/text|vision'")
        if arr.ndim not in (1, 2) or arr.shape[-1] == 0:
            raise FeatureError(f"{path}: entry '{name}' has shape {arr.shape}")
        want = expected_dims[modality]
        if arr.shape[-1] != want:
            raise FeatureError(f"{path}: '{name}' has width {arr.shape[-1]}, expected {want}")
        (text if modality == "text" else vision)[user_id] = arr
    lonely = sorted(set(text) ^ set(vision))
    if lonely:
        raise FeatureError(f"{path}: users with only one modality: {lonely}")
    _logger.info(f"loaded precomputed features for {len(text)} users from {path}")
    return PrecomputedFeatures(text, vision)


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def text_tokens(cfg: EncoderConfig, description: str) -> tuple[tuple[int, ...], ...]:
    return tuple(trigram_buckets(t, cfg.buckets, cfg.seed)
                 for t in tokenize(description, cfg.max_tokens))


def vision_grid(cfg: EncoderConfig, pixels: np.ndarray) -> np.ndarray:
    if pixels.shape != (3, TARGET_SIDE, TARGET_SIDE) or pixels.dtype != np.uint8:
        raise ShapeError(f"vision encoder expects uint8 (3, {TARGET_SIDE}, {TARGET_SIDE}), "
                         f"got {pixels.dtype} {pixels.shape}")
    return adaptive_average_pool(pixels, cfg.grid)


def prepare_inputs(cfg: EncoderConfig, user_id: str, description: str = "",
                   pixels: np.ndarray | None = None) -> UserInputs:
    """
    Parameter-free preprocessing, shared by every seed replica. Precomputed
    encoders only need the id; lookups fail later for absent users.
    """
    if cfg.kind == "precomputed":
        return UserInputs(user_id)
    if pixels is None:
        raise FeatureError(f"user {user_id} has no image")
    return UserInputs(user_id, text_tokens(cfg, description), vision_grid(cfg, pixels))


# ---------------------------------------------------------------------------
# Encoder pair
# ---------------------------------------------------------------------------

class Encoders(Module):
    """Both modalities behind one call over a batch of prepared inputs."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        if cfg.kind == "toy":
            self.text   = ToyTextEncoder(cfg, rng)
            self.vision = ToyVisionEncoder(cfg, rng)
            self._store = None
        else:
            self._store = load_precomputed(cfg.features_path,
                                           {"text": cfg.d_model, "vision": cfg.d_model})

    @property
    def trainable(self) -> bool:
        return self.cfg.kind == "toy"

    def __call__(self, batch: list[UserInputs]) -> tuple[TextFeature, VisionFeature]:
        if self._store is not None:
            return self._store.lookup([u.user_id for u in batch])
        return self.text([u.tokens for u in batch]), self.vision([u.grid for u in batch])
