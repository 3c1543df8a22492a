"""
config.py - CliConfig: the fully resolved run configuration (no I/O side effects).

Resolution order, later wins:
    built-in defaults < JSON config file (--config) < command-line flags
    < BOTDNA_THREADS (thread count only)

Every key is validated before any work starts; an unknown key anywhere is
a ConfigError naming its dotted path (e.g. 'train.lrr').
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from constants import DEFAULT_FRACTIONS, THREADS_ENV
from dna import Alphabet
from encoders import EncoderConfig, parse_mode
from errors import BotDnaError, ConfigError
from imagify import Palette, default_palette
from models import FusionKind, TrainConfig


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathsConfig:
    corpus:   str | None = None
    features: str | None = None
    out:      str = "out"


@dataclass(frozen=True)
class IngestConfig:
    name:              str = "corpus"
    fractions:         tuple[float, float, float] = DEFAULT_FRACTIONS
    balance:           bool = False
    max_tweets:        int | None = None
    backfill_entities: bool = False


@dataclass(frozen=True)
class CliConfig:
    paths:     PathsConfig = field(default_factory=PathsConfig)
    ingest:    IngestConfig = field(default_factory=IngestConfig)
    alphabet:  Alphabet = Alphabet.TYPE3
    palette:   Palette | None = None           # None → alphabet default
    fusion:    FusionKind = FusionKind.CONCAT
    seed:      int = 0
    threads:   int = 1
    train:     TrainConfig = field(default_factory=TrainConfig)
    encoder:   EncoderConfig = field(default_factory=EncoderConfig)

    @property
    def resolved_palette(self) -> Palette:
        return self.palette or default_palette(self.alphabet)

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out)

    def resolved(self) -> dict:
        """Plain, JSON-ready view of every effective setting."""
        palette = self.resolved_palette
        return {
            "paths":    dict(vars(self.paths)),
            "ingest":   {**vars(self.ingest), "fractions": list(self.ingest.fractions)},
            "alphabet": self.alphabet.value,
            "palette":  {"levels": dict(palette.level), "pad_level": palette.pad_level},
            "fusion":   self.fusion.value,
            "seed":     self.seed,
            "threads":  self.threads,
            "train":    self.train.to_dict(),
            "encoder":  self.encoder.to_dict(),
        }


def _defaults() -> dict:
    return {
        "paths":    {"corpus": None, "features": None, "out": "out"},
        "ingest":   {"name": "corpus", "fractions": list(DEFAULT_FRACTIONS), "balance": False,
                     "max_tweets": None, "backfill_entities": False},
        "alphabet": "type3",
        "palette":  {"levels": {}, "pad_level": None},
        "fusion":   "concat",
        "seed":     0,
        "threads":  1,
        "train":    TrainConfig().to_dict(),
        "encoder":  EncoderConfig().to_dict(),
    }


# Values at these paths are free-form mappings, replaced wholesale.
_OPEN_KEYS = {"palette.levels"}


# ---------------------------------------------------------------------------
# Merging
# ---------------------------------------------------------------------------

def _merge(base: dict, update: Mapping[str, Any], prefix: str = ""):
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[key], dict) and path not in _OPEN_KEYS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key '{path}' must be an object")
            _merge(base[key], value, f"{path}.")
        else:
            base[key] = copy.deepcopy(value)


def _set_dotted(tree: dict, dotted: str, value: Any):
    node = tree
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key '{dotted}'")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key '{dotted}'")
    node[parts[-1]] = value


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc.msg} at line {exc.lineno}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config file {path} is not valid UTF-8") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def threads_from_env(environ: Mapping[str, str] | None = None) -> int | None:
    raw = (os.environ if environ is None else environ).get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    return value


def build_config(file_data: Mapping[str, Any] | None = None,
                 overrides: Mapping[str, Any] | None = None,
                 environ: Mapping[str, str] | None = None) -> CliConfig:
    """Merge defaults, file and dotted-key overrides; validate into a CliConfig."""
    tree = _defaults()
    if file_data:
        _merge(tree, file_data)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(tree, dotted, value)
    env_threads = threads_from_env(environ)
    if env_threads is not None:
        tree["threads"] = env_threads
    try:
        return _from_tree(tree)
    except ConfigError:
        raise
    except BotDnaError as exc:
        raise ConfigError(str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def _from_tree(tree: dict) -> CliConfig:
    ingest = tree["ingest"]
    fractions = tuple(float(f) for f in ingest["fractions"])
    if len(fractions) != 3:
        raise ConfigError(f"ingest.fractions needs three values, got {list(fractions)}")
    if ingest["max_tweets"] is not None and int(ingest["max_tweets"]) < 1:
        raise ConfigError("ingest.max_tweets must be ≥ 1")

    alphabet = Alphabet.parse(tree["alphabet"])
    pal = tree["palette"]
    palette = None
    if pal["levels"] or pal["pad_level"] is not None:
        palette = default_palette(alphabet).with_overrides(pal["levels"], pal["pad_level"])

    threads = int(tree["threads"])
    if threads < 1:
        raise ConfigError("threads must be ≥ 1")

    train = dict(tree["train"])
    train["seeds"] = tuple(train["seeds"])
    if not isinstance(train["class_weights"], str):
        train["class_weights"] = tuple(train["class_weights"])

    encoder = dict(tree["encoder"])
    encoder["mode"] = parse_mode(encoder["mode"])
    if encoder["kind"] == "precomputed" and not encoder["features_path"]:
        encoder["features_path"] = tree["paths"]["features"]

    return CliConfig(
        paths    = PathsConfig(**tree["paths"]),
        ingest   = IngestConfig(name=ingest["name"], fractions=fractions,
                                balance=bool(ingest["balance"]),
                                max_tweets=None if ingest["max_tweets"] is None
                                else int(ingest["max_tweets"]),
                                backfill_entities=bool(ingest["backfill_entities"])),
        alphabet = alphabet,
        palette  = palette,
        fusion   = FusionKind.parse(tree["fusion"]),
        seed     = int(tree["seed"]),
        threads  = threads,
        train    = TrainConfig(**train),
        encoder  = EncoderConfig(**encoder),
    )


def hash_inputs(paths: Iterable[str | Path]) -> str:
    """sha256 over each input's name and bytes, in the given order."""
    digest = hashlib.sha256()
    for p in paths:
        p = Path(p)
        digest.update(p.name.encode("utf-8") + b"\0")
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()
