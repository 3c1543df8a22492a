"""
imagify.py - DnaSequence → square grayscale canvas → 3 channels → 256×256.

Pixels are painted row-major, one symbol per pixel, unused pixels get the
palette's pad level. Resizing is nearest-neighbour so no intensity that
belongs to no symbol is ever introduced.

PIL is imported lazily (inside the PNG helpers) to keep CLI startup fast.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from binfmt import read_raw_image, write_raw_image
from constants import CONTENT5_LEVELS, PAD_LEVEL, TARGET_SIDE, TYPE3_LEVELS
from dna import Alphabet, DnaSequence, single_alphabet
from errors import AlphabetError, CanvasError, IneligibleRecordError, PaletteError

_logger = logging.getLogger("botdna.imagify")


# ---------------------------------------------------------------------------
# Palette
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Palette:
    alphabet:  Alphabet
    level:     Mapping[str, int]
    pad_level: int = PAD_LEVEL

    def __post_init__(self):
        symbols = set(self.alphabet.symbols)
        if set(self.level) != symbols:
            raise PaletteError(f"palette covers {sorted(self.level)}, "
                               f"{self.alphabet.value} needs {sorted(symbols)}")
        values = list(self.level.values()) + [self.pad_level]
        if any(isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 255
               for v in values):
            raise PaletteError(f"palette levels must be integers in 0..255: {dict(self.level)}")
        if len(set(self.level.values())) != len(self.level):
            raise PaletteError(f"duplicate symbol levels in palette {dict(self.level)}")
        if self.pad_level in self.level.values():
            raise PaletteError(f"pad level {self.pad_level} collides with a symbol level")
        # Freeze a private copy in alphabet order.
        object.__setattr__(self, "level", {s: self.level[s] for s in self.alphabet.symbols})

    def with_overrides(self, overrides: Mapping[str, int] | None = None,
                       pad_level: int | None = None) -> "Palette":
        level = dict(self.level)
        for symbol, value in (overrides or {}).items():
            if symbol not in level:
                raise PaletteError(f"symbol '{symbol}' is not in {self.alphabet.value}")
            level[symbol] = value
        return Palette(self.alphabet, level, self.pad_level if pad_level is None else pad_level)

    def lookup_table(self) -> np.ndarray:
        """256-entry uint8 table from ASCII code to intensity."""
        lut = np.full(256, self.pad_level, dtype=np.uint8)
        for symbol, value in self.level.items():
            lut[ord(symbol)] = value
        return lut

    def to_dict(self) -> dict:
        return {"alphabet": self.alphabet.value, "level": dict(self.level),
                "pad_level": self.pad_level}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def default_palette(alphabet: Alphabet) -> Palette:
    levels = TYPE3_LEVELS if alphabet is Alphabet.TYPE3 else CONTENT5_LEVELS
    return Palette(alphabet, dict(levels), PAD_LEVEL)


# ---------------------------------------------------------------------------
# Image type
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DnaImage:
    user_id: str
    pixels:  np.ndarray = field(repr=False)   # uint8, (channels, side, side)

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[1] != p.shape[2] \
                or p.shape[0] not in (1, 3):
            raise CanvasError(f"image for {self.user_id} must be uint8 (1|3, S, S), "
                              f"got {p.dtype} {p.shape}")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def side(self) -> int:
        return self.pixels.shape[1]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def canvas_side(max_len: int) -> int:
    """Smallest s with s² ≥ max_len."""
    if max_len <= 0:
        raise CanvasError(f"max_len must be ≥ 1, got {max_len}")
    s = math.isqrt(max_len)
    return s if s * s == max_len else s + 1


def paint(seq: DnaSequence, side: int, palette: Palette) -> DnaImage:
    if palette.alphabet is not seq.alphabet:
        raise AlphabetError(f"palette is for {palette.alphabet.value}, "
                            f"sequence is {seq.alphabet.value}")
    n = len(seq.seq)
    if side < 1 or side * side < n:
        raise CanvasError(f"side {side} cannot hold {n} symbols")
    flat = np.full(side * side, palette.pad_level, dtype=np.uint8)
    if n:
        codes = np.frombuffer(seq.seq.encode("ascii"), dtype=np.uint8)
        flat[:n] = palette.lookup_table()[codes]
    return DnaImage(seq.user_id, flat.reshape(1, side, side))


def unpaint(img: DnaImage, length: int, palette: Palette) -> DnaSequence:
    """Inverse level lookup over the first *length* row-major pixels."""
    flat = img.pixels[0].reshape(-1)
    if length > flat.size:
        raise CanvasError(f"length {length} exceeds {flat.size} pixels")
    inverse = {v: s for s, v in palette.level.items()}
    try:
        seq = "".join(inverse[int(v)] for v in flat[:length])
    except KeyError as exc:
        raise PaletteError(f"pixel level {exc.args[0]} belongs to no symbol") from None
    return DnaSequence(img.user_id, palette.alphabet, seq)


def to_three_channels(img: DnaImage) -> DnaImage:
    if img.channels != 1:
        raise CanvasError("already 3 channels")
    return DnaImage(img.user_id, np.repeat(img.pixels, 3, axis=0))


def resize_nn(img: DnaImage, target: int = TARGET_SIDE) -> DnaImage:
    """Output (i, j) = input (⌊i·side/target⌋, ⌊j·side/target⌋)."""
    side = img.side
    if side == target:
        return DnaImage(img.user_id, img.pixels.copy())
    idx = (np.arange(target) * side) // target
    return DnaImage(img.user_id, np.ascontiguousarray(img.pixels[:, idx][:, :, idx]))


def render(seq: DnaSequence, side: int, palette: Palette,
           target: int = TARGET_SIDE) -> DnaImage:
    """paint → to_three_channels → resize_nn."""
    return resize_nn(to_three_channels(paint(seq, side, palette)), target)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def save_png(img: DnaImage, path: str | Path):
    from PIL import Image
    planes = img.pixels if img.channels == 3 else np.repeat(img.pixels, 3, axis=0)
    Image.fromarray(np.ascontiguousarray(planes.transpose(1, 2, 0))).save(
        path, format="PNG")


def load_png(path: str | Path, user_id: str = "") -> DnaImage:
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return DnaImage(user_id or Path(path).name.split(".")[0],
                    np.ascontiguousarray(arr.transpose(2, 0, 1)))


def load_raw(path: str | Path, user_id: str = "") -> DnaImage:
    return DnaImage(user_id or Path(path).name.split(".")[0], read_raw_image(path))


@dataclass(frozen=True)
class ManifestRow:
    user_id:      str
    alphabet:     str
    side:         int
    path:         str
    palette_hash: str


def _check_file_stem(user_id: str):
    if not user_id or "/" in user_id or "\\" in user_id or user_id.startswith("."):
        raise CanvasError(f"user_id {user_id!r} cannot be used as a file name")


def render_corpus(sequences: Mapping[str, DnaSequence], palette: Palette,
                  out_dir: str | Path | None = None, max_len: int | None = None,
                  workers: int = 1) -> tuple[dict[str, DnaImage], list[ManifestRow]]:
    """
    Render every sequence on one shared canvas (side from the corpus
    max_len) and, with *out_dir*, write `<user_id>.<alphabet>.png`, a BDNA1
    dump next to it, and `manifest.tsv`.
    """
    if not sequences:
        raise IneligibleRecordError("no sequences to render")
    alphabet = single_alphabet(sequences)
    if palette.alphabet is not alphabet:
        raise AlphabetError(f"palette is for {palette.alphabet.value}, "
                            f"sequences are {alphabet.value}")
    longest = max(len(s) for s in sequences.values())
    if max_len is None:
        max_len = longest
    elif max_len < longest:
        raise CanvasError(f"max_len {max_len} is shorter than the longest sequence ({longest})")
    side = canvas_side(max_len)
    out  = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    digest = palette.digest()

    def _one(seq: DnaSequence) -> tuple[DnaImage, ManifestRow | None]:
        img = render(seq, side, palette)
        if out is None:
            return img, None
        _check_file_stem(seq.user_id)
        png = out / f"{seq.user_id}.{alphabet.value}.png"
        save_png(img, png)
        write_raw_image(png.with_suffix(".bdna"), img.pixels)
        return img, ManifestRow(seq.user_id, alphabet.value, side, png.name, digest)

    seqs = list(sequences.values())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, seqs))
    else:
        results = [_one(s) for s in seqs]

    images   = {img.user_id: img for img, _ in results}
    manifest = [row for _, row in results if row is not None]
    if out is not None:
        write_manifest(out / "manifest.tsv", manifest)
    _logger.info(f"rendered {len(images)} images on a {side}×{side} canvas")
    return images, manifest


def write_manifest(path: str | Path, rows: list[ManifestRow]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id\talphabet\tside\tpath\tpalette_hash\n")
        for r in rows:
            fh.write(f"{r.user_id}\t{r.alphabet}\t{r.side}\t{r.path}\t{r.palette_hash}\n")


def read_manifest(path: str | Path) -> list[ManifestRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh, None)
        for raw in fh:
            if raw.strip():
                uid, alphabet, side, p, digest = raw.rstrip("\n").split("\t")
                rows.append(ManifestRow(uid, alphabet, int(side), p, digest))
    return rows
