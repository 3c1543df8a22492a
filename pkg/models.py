"""
models.py - Fusion heads over the text and vision encoders, the training
loop, prediction, the multi-seed protocol and checkpoints.

Heads:
  concat      [f_t; f_v] → dense 128 + ReLU → dense 2
  gmu         gated multimodal unit → dense 2
  crossmodal  text→vision and vision→text attention, rows concatenated,
              masked global average pool → dense 2
  text        unimodal baseline on f_t (dense 128 + ReLU → dense 2)
  vision      unimodal baseline on f_v (same shape)
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from binfmt import load_tensors, save_tensors
from constants import (CONCAT_HIDDEN, DEFAULT_BATCH_SIZE, DEFAULT_EARLY_STOP, DEFAULT_LR,
                       DEFAULT_MAX_EPOCHS, DEFAULT_PLATEAU_FACTOR, DEFAULT_PLATEAU_PATIENCE,
                       DEFAULT_SEEDS, METRIC_NAMES, NUM_CLASSES)
from encoders import EncoderConfig, Encoders, TextFeature, UserInputs, VisionFeature
from errors import ConfigError, FormatError, NonFiniteError, ShapeError, TrainingError
from evaluation import (STD_CONVENTION, Confusion, aggregate, confusion, format_percent,
                        metrics)
from optim import AdamState, EarlyStopping, ReduceLROnPlateau, adam_step
from tensor import (Dense, Module, Tensor, class_weights_auto, concat, global_average_pool,
                    gmu, init_bias, init_weight, no_grad, relu, scaled_dot_attention,
                    softmax_lastdim, weighted_cross_entropy)

_logger = logging.getLogger("botdna.models")


class FusionKind(str, Enum):
    CONCAT      = "concat"
    GMU         = "gmu"
    CROSSMODAL  = "crossmodal"
    TEXT_ONLY   = "text"
    VISION_ONLY = "vision"

    @classmethod
    def parse(cls, name: str) -> "FusionKind":
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigError(f"unknown fusion '{name}' (expected "
                              f"{', '.join(k.value for k in cls)})") from None

    @property
    def title(self) -> str:
        return {"concat": "Concat", "gmu": "GMU", "crossmodal": "Cross-Modal Attention",
                "text": "Text only", "vision": "Vision only"}[self.value]


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr:                  float = DEFAULT_LR
    max_epochs:          int = DEFAULT_MAX_EPOCHS
    early_stop_patience: int = DEFAULT_EARLY_STOP
    plateau_factor:      float = DEFAULT_PLATEAU_FACTOR
    plateau_patience:    int = DEFAULT_PLATEAU_PATIENCE
    batch_size:          int = DEFAULT_BATCH_SIZE
    class_weights:       str | tuple[float, float] = "auto"
    seeds:               tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        # lr = 0 is allowed: a null update that still records history.
        if self.lr < 0:
            raise ConfigError(f"train.lr must be ≥ 0, got {self.lr}")
        for name in ("max_epochs", "early_stop_patience", "plateau_patience", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be ≥ 1")
        if not 0 < self.plateau_factor <= 1:
            raise ConfigError(f"train.plateau_factor must be in (0, 1], got {self.plateau_factor}")
        if not self.seeds:
            raise ConfigError("train.seeds must not be empty")
        if isinstance(self.class_weights, str):
            if self.class_weights not in ("auto", "none"):
                raise ConfigError(f"train.class_weights must be auto, none or [w0, w1], "
                                  f"got '{self.class_weights}'")
        else:
            w = tuple(float(x) for x in self.class_weights)
            if len(w) != 2 or min(w) <= 0:
                raise ConfigError(f"train.class_weights must be two positive numbers, got {w}")
            object.__setattr__(self, "class_weights", w)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        if not isinstance(self.class_weights, str):
            d["class_weights"] = list(self.class_weights)
        return d

    def resolve_weights(self, train_labels: np.ndarray) -> tuple[float, float]:
        if self.class_weights == "auto":
            return class_weights_auto(train_labels)
        if self.class_weights == "none":
            return (1.0, 1.0)
        return tuple(self.class_weights)


@dataclass
class LabeledSet:
    inputs: list[UserInputs]
    labels: np.ndarray                       # int64, 0 = human, 1 = bot

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ShapeError(f"{len(self.inputs)} inputs against {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def user_ids(self) -> list[str]:
        return [u.user_id for u in self.inputs]


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

class ConcatHead(Module):
    def __init__(self, rng: np.random.Generator, d_t: int, d_v: int):
        self.hidden = Dense(rng, d_t + d_v, CONCAT_HIDDEN)
        self.out    = Dense(rng, CONCAT_HIDDEN, NUM_CLASSES)

    def __call__(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        z = concat([text.pooled, vision.pooled], axis=-1)
        return self.out(relu(self.hidden(z)))


class GmuHead(Module):
    def __init__(self, rng: np.random.Generator, d_t: int, d_v: int, d_h: int):
        self.gate_params = {
            "W_t": init_weight(rng, (d_t, d_h), "W_t"),
            "b_t": init_bias((d_h,), "b_t"),
            "W_v": init_weight(rng, (d_v, d_h), "W_v"),
            "b_v": init_bias((d_h,), "b_v"),
            "W_z": init_weight(rng, (d_t + d_v, d_h), "W_z"),
            "b_z": init_bias((d_h,), "b_z"),
        }
        self.out = Dense(rng, d_h, NUM_CLASSES)

    def fuse(self, text: TextFeature, vision: VisionFeature) -> tuple[Tensor, Tensor]:
        """(h, gate)."""
        return gmu(text.pooled, vision.pooled, self.gate_params)

    def __call__(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        h, _ = self.fuse(text, vision)
        return self.out(h)


class CrossModalHead(Module):
    def __init__(self, rng: np.random.Generator, d: int):
        self.out = Dense(rng, d, NUM_CLASSES)

    def text_to_vision(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        """Text queries over vision keys/values: (B, N, d)."""
        return scaled_dot_attention(text.sequence, vision.sequence, vision.sequence,
                                    key_mask=vision.mask)

    def vision_to_text(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        return scaled_dot_attention(vision.sequence, text.sequence, text.sequence,
                                    key_mask=text.mask)

    def pooled(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        if text.sequence.shape[-1] != vision.sequence.shape[-1]:
            raise ShapeError(f"cross-modal attention needs equal widths, text "
                             f"{text.sequence.shape[-1]} vs vision {vision.sequence.shape[-1]}")
        z = self.text_to_vision(text, vision)
        y = self.vision_to_text(text, vision)
        rows = concat([z, y], axis=1)
        mask = np.concatenate([text.mask, vision.mask], axis=1)
        return global_average_pool(rows, mask)

    def __call__(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        return self.out(self.pooled(text, vision))


class UnimodalHead(Module):
    def __init__(self, rng: np.random.Generator, d: int, modality: str):
        self.modality = modality
        self.hidden   = Dense(rng, d, CONCAT_HIDDEN)
        self.out      = Dense(rng, CONCAT_HIDDEN, NUM_CLASSES)

    def __call__(self, text: TextFeature, vision: VisionFeature) -> Tensor:
        f = text.pooled if self.modality == "text" else vision.pooled
        return self.out(relu(self.hidden(f)))


class FusionModel(Module):
    """Encoders plus one head; logits are (B, 2)."""

    def __init__(self, kind: FusionKind, encoders: Encoders, head: Module):
        self.kind     = kind
        self.encoders = encoders
        self.head     = head

    @property
    def encoder_cfg(self) -> EncoderConfig:
        return self.encoders.cfg

    def logits(self, batch: Sequence[UserInputs]) -> Tensor:
        text, vision = self.encoders(list(batch))
        out = self.head(text, vision)
        if out.shape != (len(batch), NUM_CLASSES):
            raise ShapeError(f"head produced {out.shape}, expected ({len(batch)}, {NUM_CLASSES})")
        return out


def build(kind: FusionKind, encoder_cfg: EncoderConfig, seed: int = 0) -> FusionModel:
    """Fresh model with every parameter drawn from one generator seeded by *seed*."""
    kind = FusionKind.parse(kind) if not isinstance(kind, FusionKind) else kind
    rng = np.random.default_rng(seed)
    encoders = Encoders(encoder_cfg, rng)
    d = encoder_cfg.d_model
    if kind is FusionKind.CONCAT:
        head = ConcatHead(rng, d, d)
    elif kind is FusionKind.GMU:
        head = GmuHead(rng, d, d, d)
    elif kind is FusionKind.CROSSMODAL:
        head = CrossModalHead(rng, d)
    else:
        head = UnimodalHead(rng, d, kind.value)
    return FusionModel(kind, encoders, head)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class History:
    epochs:        list[dict] = field(default_factory=list)   # epoch, train_loss, val_loss, lr
    chosen_epoch:  int = 0
    stopped_early: bool = False

    @property
    def train_loss(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    @property
    def val_loss(self) -> list[float]:
        return [e["val_loss"] for e in self.epochs]

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "chosen_epoch": self.chosen_epoch,
                "stopped_early": self.stopped_early}


def _batches(n: int, size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, size):
        yield idx[start:start + size]


def dataset_loss(model: FusionModel, data: LabeledSet, weights: Sequence[float],
                 batch_size: int) -> float:
    """Mean weighted cross-entropy over *data*, no graph recorded."""
    total = 0.0
    with no_grad():
        for rows in _batches(len(data), batch_size):
            batch = [data.inputs[i] for i in rows]
            loss = weighted_cross_entropy(model.logits(batch), data.labels[rows], weights)
            total += float(loss.data) * len(rows)
    return total / len(data)


def train(model: FusionModel, train_set: LabeledSet, val_set: LabeledSet,
          cfg: TrainConfig, seed: int = 0) -> History:
    """
    Mini-batch Adam on weighted cross-entropy. After each epoch the
    validation loss drives plateau decay and early stopping; the best
    validation epoch's parameters are restored at the end.
    """
    if not len(train_set) or not len(val_set):
        raise TrainingError(f"train ({len(train_set)}) and validation ({len(val_set)}) "
                            "splits must be non-empty")
    weights = cfg.resolve_weights(train_set.labels)
    rng     = np.random.default_rng((seed, 1))
    params  = model.parameters()
    state   = AdamState.zeros_like(params)
    plateau = ReduceLROnPlateau(cfg.lr, cfg.plateau_factor, cfg.plateau_patience)
    stopper = EarlyStopping(cfg.early_stop_patience)
    history = History()
    best_state = model.state_dict()

    for epoch in range(1, cfg.max_epochs + 1):
        lr = plateau.lr
        running = 0.0
        for b, rows in enumerate(_batches(len(train_set), cfg.batch_size,
                                          rng.permutation(len(train_set))), start=1):
            batch = [train_set.inputs[i] for i in rows]
            model.zero_grad()
            try:
                loss = weighted_cross_entropy(model.logits(batch), train_set.labels[rows], weights)
                loss.backward()
                adam_step(params, None, state, lr)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}") from exc
            running += float(loss.data) * len(rows)
        train_loss = running / len(train_set)
        try:
            val_loss = dataset_loss(model, val_set, weights, cfg.batch_size)
        except NonFiniteError as exc:
            raise TrainingError(f"non-finite validation loss at epoch {epoch}: {exc}") from exc

        history.epochs.append({"epoch": epoch, "train_loss": train_loss,
                               "val_loss": val_loss, "lr": lr})
        _logger.info(f"seed {seed} epoch {epoch:2d}  train {train_loss:.6f}  "
                     f"val {val_loss:.6f}  lr {lr:.3g}")
        stop = stopper.step(val_loss, epoch)
        if stopper.is_best(epoch):
            best_state = model.state_dict()
        plateau.step(val_loss)
        if stop:
            history.stopped_early = True
            break

    model.load_state_dict(best_state)
    history.chosen_epoch = max(stopper.best_epoch, 0)
    return history


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    user_id: str
    label:   int
    p_bot:   float

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "label": self.label, "p_bot": self.p_bot}


def probabilities(logits: np.ndarray) -> np.ndarray:
    with no_grad():
        return softmax_lastdim(Tensor(logits)).data


def labels_from_logits(logits: np.ndarray) -> np.ndarray:
    """argmax with equal logits going to label 0 (human)."""
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def predict(model: FusionModel, inputs: Sequence[UserInputs],
            batch_size: int = DEFAULT_BATCH_SIZE) -> list[Prediction]:
    out: list[Prediction] = []
    with no_grad():
        for rows in _batches(len(inputs), batch_size):
            batch  = [inputs[i] for i in rows]
            logits = model.logits(batch).data
            probs  = probabilities(logits)
            for u, label, p in zip(batch, labels_from_logits(logits), probs[:, 1]):
                out.append(Prediction(u.user_id, int(label), float(p)))
    return out


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed:       int
    confusion:  Confusion
    metrics:    dict[str, float]
    degenerate: tuple[str, ...]
    history:    History
    model:      FusionModel | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "chosen_epoch": self.history.chosen_epoch,
                "confusion": self.confusion.to_dict(), "metrics": self.metrics,
                "degenerate": list(self.degenerate), "history": self.history.to_dict()}


@dataclass
class RunReport:
    fusion:        FusionKind
    encoder:       dict
    train:         dict
    class_weights: tuple[float, float]
    rows:          list[SeedResult]
    mean:          dict[str, float]
    std:           dict[str, float]
    extra:         dict = field(default_factory=dict)   # resolved config, input hashes

    def to_dict(self) -> dict:
        return {
            "fusion":          self.fusion.value,
            "encoder":         self.encoder,
            "train":           self.train,
            "class_weights":   list(self.class_weights),
            "std_convention":  STD_CONVENTION,
            "seeds":           [r.to_dict() for r in self.rows],
            "mean":            self.mean,
            "std":             self.std,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_markdown(self) -> str:
        head = "| Model | Precision | Recall | F1-score | Accuracy | Specificity |"
        rule = "|---|---|---|---|---|---|"
        cells = " | ".join(format_percent(self.mean[m], self.std[m]) for m in METRIC_NAMES)
        seeds = ", ".join(str(r.seed) for r in self.rows)
        return (f"Mean ± std (%) over seeds {seeds}; std is {STD_CONVENTION}.\n\n"
                f"{head}\n{rule}\n| {self.fusion.title} | {cells} |\n")

    def check_aggregates(self, tol: float = 1e-12):
        mean, std = aggregate([r.metrics for r in self.rows])
        for m in mean:
            if abs(mean[m] - self.mean[m]) > tol or abs(std[m] - self.std[m]) > tol:
                raise TrainingError(f"stored aggregate for {m} does not match the seed rows")


def run_seed(kind: FusionKind, encoder_cfg: EncoderConfig, data: Mapping[str, LabeledSet],
             cfg: TrainConfig, seed: int) -> SeedResult:
    model   = build(kind, encoder_cfg, seed)
    history = train(model, data["train"], data["val"], cfg, seed)
    test    = data["test"]
    preds   = [p.label for p in predict(model, test.inputs, cfg.batch_size)]
    conf    = confusion(preds, test.labels)
    m       = metrics(conf)
    _logger.info(f"seed {seed}: test " + "  ".join(f"{k} {v:.4f}" for k, v in m.as_dict().items()))
    return SeedResult(seed, conf, m.as_dict(), m.degenerate, history, model)


def run_protocol(kind: FusionKind, encoder_cfg: EncoderConfig, data: Mapping[str, LabeledSet],
                 cfg: TrainConfig, workers: int = 1) -> RunReport:
    """One replica per seed (concurrently up to *workers*), merged in seed order."""
    kind = FusionKind.parse(kind) if not isinstance(kind, FusionKind) else kind
    if not len(data["test"]):
        raise TrainingError("test split is empty")
    if workers > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: run_seed(kind, encoder_cfg, data, cfg, s), cfg.seeds))
    else:
        rows = [run_seed(kind, encoder_cfg, data, cfg, s) for s in cfg.seeds]
    mean, std = aggregate([r.metrics for r in rows])
    report = RunReport(kind, encoder_cfg.to_dict(), cfg.to_dict(),
                       cfg.resolve_weights(data["train"].labels), rows, mean, std)
    report.check_aggregates()
    return report


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: FusionModel, path: str | Path, meta: dict | None = None):
    """BWTS1 parameters plus a JSON sidecar (`<path>.json`) describing how to rebuild."""
    path = Path(path)
    save_tensors(path, model.state_dict())
    sidecar = {"fusion": model.kind.value, "encoder": model.encoder_cfg.to_dict(), **(meta or {})}
    with open(f"{path}.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[FusionModel, dict]:
    try:
        with open(f"{path}.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{path}: checkpoint sidecar {path}.json is missing") from None
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise FormatError(f"{path}: checkpoint sidecar {path}.json is not valid JSON") from None
    model = build(FusionKind.parse(meta["fusion"]), EncoderConfig(**meta["encoder"]), seed=0)
    model.load_state_dict(load_tensors(path))
    return model, meta
