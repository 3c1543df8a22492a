import json

import numpy as np
import pytest

from binfmt import save_tensors
from encoders import EncoderConfig, TextFeature, UserInputs, VisionFeature, text_tokens
from errors import ConfigError, FormatError, ShapeError
from models import (ConcatHead, CrossModalHead, FusionKind, GmuHead, LabeledSet, TrainConfig,
                    UnimodalHead, build, dataset_loss, labels_from_logits, load_checkpoint,
                    predict, probabilities, run_protocol, save_checkpoint, train)
from tensor import Tensor, grad_check

from conftest import random_projection

DESCRIPTIONS = {0: "just a person who likes cats", 1: "automated posting service"}


def _labeled(cfg: EncoderConfig, labels, seed: int, noise: float = 0.05) -> LabeledSet:
    rng = np.random.default_rng(seed)
    inputs = []
    for i, y in enumerate(labels):
        level = 0.8 if y else 0.2
        grid = np.clip(level + noise * rng.normal(size=(cfg.grid, cfg.grid, 3)), 0.0, 1.0)
        inputs.append(UserInputs(f"s{seed}u{i}", text_tokens(cfg, DESCRIPTIONS[y]), grid))
    return LabeledSet(inputs, labels)


def _data(cfg: EncoderConfig, n_train=8, n_val=4, n_test=4) -> dict[str, LabeledSet]:
    return {name: _labeled(cfg, [i % 2 for i in range(n)], seed)
            for seed, (name, n) in enumerate((("train", n_train), ("val", n_val),
                                              ("test", n_test)))}


def _features(rng, d=4, d_v=None) -> tuple[TextFeature, VisionFeature]:
    d_v = d_v or d
    text_mask = np.array([[True] * 5, [True, True, False, False, False], [True] + [False] * 4])
    text = TextFeature(Tensor(rng.normal(size=(3, d))), Tensor(rng.normal(size=(3, 5, d))),
                       text_mask)
    vision = VisionFeature(Tensor(rng.normal(size=(3, d_v))), Tensor(rng.normal(size=(3, 6, d_v))),
                           np.ones((3, 6), dtype=bool))
    return text, vision


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", list(FusionKind))
def test_every_head_gives_two_logits(kind, tiny_encoder):
    model = build(kind, tiny_encoder, seed=0)
    batch = _labeled(tiny_encoder, [0, 1, 1], seed=0).inputs
    assert model.logits(batch).shape == (3, 2)
    assert model.kind is kind


def test_build_is_seeded(tiny_encoder):
    a = build(FusionKind.GMU, tiny_encoder, seed=3).state_dict()
    b = build("gmu", tiny_encoder, seed=3).state_dict()
    c = build(FusionKind.GMU, tiny_encoder, seed=4).state_dict()
    assert list(a) == list(b)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_fusion_kind_parse():
    assert FusionKind.parse("CrossModal") is FusionKind.CROSSMODAL
    assert FusionKind.CROSSMODAL.title == "Cross-Modal Attention"
    with pytest.raises(ConfigError, match="late"):
        FusionKind.parse("late")


@pytest.mark.parametrize("kwargs", [
    {"lr": -1e-3},
    {"max_epochs": 0},
    {"plateau_factor": 0.0},
    {"seeds": ()},
    {"class_weights": (1.0, 0.0)},
    {"class_weights": "balanced"},
])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_train_config_weights():
    labels = np.array([0, 0, 0, 1])
    assert TrainConfig().resolve_weights(labels) == pytest.approx((4 / 6, 2.0))
    assert TrainConfig(class_weights="none").resolve_weights(labels) == (1.0, 1.0)
    assert TrainConfig(class_weights=[2, 3]).to_dict()["class_weights"] == [2.0, 3.0]


# ---------------------------------------------------------------------------
# Head gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda rng: ConcatHead(rng, 4, 4),
    lambda rng: GmuHead(rng, 4, 4, 4),
    lambda rng: UnimodalHead(rng, 4, "text"),
    lambda rng: UnimodalHead(rng, 4, "vision"),
])
def test_pooled_heads_match_finite_differences(make):
    rng = np.random.default_rng(11)
    head = make(rng)
    text, vision = _features(rng)
    inputs = head.parameters() + [text.pooled, vision.pooled]
    err = grad_check(lambda *_: random_projection(head(text, vision)), inputs, atol=1e-7)
    assert err < 1e-5


def test_crossmodal_head_matches_finite_differences():
    rng = np.random.default_rng(12)
    head = CrossModalHead(rng, 4)
    text, vision = _features(rng)
    inputs = head.parameters() + [text.sequence, vision.sequence]
    err = grad_check(lambda *_: random_projection(head(text, vision)), inputs, atol=1e-7)
    assert err < 1e-5


def test_crossmodal_ignores_token_order():
    rng = np.random.default_rng(13)
    head = CrossModalHead(rng, 4)
    text, vision = _features(rng)
    t_perm, v_perm = rng.permutation(5), rng.permutation(6)
    shuffled_text = TextFeature(text.pooled, Tensor(text.sequence.data[:, t_perm]),
                                text.mask[:, t_perm])
    shuffled_vision = VisionFeature(vision.pooled, Tensor(vision.sequence.data[:, v_perm]),
                                    vision.mask[:, v_perm])
    base = head.pooled(text, vision).data
    assert np.allclose(head.pooled(shuffled_text, vision).data, base, atol=1e-12)
    assert np.allclose(head.pooled(text, shuffled_vision).data, base, atol=1e-12)
    assert np.allclose(head(shuffled_text, shuffled_vision).data, head(text, vision).data,
                       atol=1e-12)


def test_single_batch_loss_does_not_increase(tiny_encoder):
    data = _data(tiny_encoder, n_train=6)
    cfg = TrainConfig(lr=1e-3, max_epochs=5, batch_size=6, seeds=(0,))
    model = build(FusionKind.CONCAT, tiny_encoder, seed=0)
    history = train(model, data["train"], data["train"], cfg, seed=0)
    losses = [e["train_loss"] for e in history.epochs]
    assert len(losses) == 5
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_crossmodal_rejects_unequal_widths():
    rng = np.random.default_rng(0)
    text, vision = _features(rng, d=4, d_v=3)
    with pytest.raises(ShapeError, match="equal widths"):
        CrossModalHead(rng, 4)(text, vision)


def test_gmu_gate_is_a_probability():
    rng = np.random.default_rng(1)
    head = GmuHead(rng, 4, 4, 4)
    text, vision = _features(rng)
    _, z = head.fuse(text, vision)
    assert z.shape == (3, 4)
    assert np.all((z.data > 0) & (z.data < 1))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def test_training_restores_best_validation_epoch(tiny_encoder):
    data = _data(tiny_encoder)
    cfg = TrainConfig(lr=1e-2, max_epochs=5, batch_size=4, seeds=(0,))
    model = build(FusionKind.CONCAT, tiny_encoder, seed=0)
    history = train(model, data["train"], data["val"], cfg, seed=0)
    assert [e["epoch"] for e in history.epochs] == list(range(1, len(history.epochs) + 1))
    best = min(history.val_loss)
    assert history.val_loss[history.chosen_epoch - 1] == best
    weights = cfg.resolve_weights(data["train"].labels)
    assert dataset_loss(model, data["val"], weights, cfg.batch_size) == pytest.approx(best,
                                                                                       rel=1e-12)


def test_zero_learning_rate_stops_after_patience(tiny_encoder):
    data = _data(tiny_encoder)
    cfg = TrainConfig(lr=0.0, max_epochs=20, batch_size=4, seeds=(0,))
    model = build(FusionKind.TEXT_ONLY, tiny_encoder, seed=0)
    before = model.state_dict()
    history = train(model, data["train"], data["val"], cfg, seed=0)
    assert len(history.epochs) == 7
    assert history.stopped_early
    assert history.chosen_epoch == 1
    assert len(set(history.val_loss)) == 1
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_labels_from_logits_ties_go_to_human():
    logits = np.array([[1.0, 1.0], [0.0, 2.0], [3.0, -1.0]])
    assert labels_from_logits(logits).tolist() == [0, 1, 0]
    probs = probabilities(logits)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert probs[0, 1] == pytest.approx(0.5)


def test_predict_keeps_input_order(tiny_encoder):
    model = build(FusionKind.GMU, tiny_encoder, seed=0)
    inputs = _labeled(tiny_encoder, [1, 0, 1, 0, 1], seed=2).inputs
    preds = predict(model, inputs, batch_size=2)
    assert [p.user_id for p in preds] == [u.user_id for u in inputs]
    for p in preds:
        assert 0.0 <= p.p_bot <= 1.0
        assert p.label == int(p.p_bot > 0.5) or p.p_bot == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# Protocol and reports
# ---------------------------------------------------------------------------

def test_protocol_is_deterministic_across_workers(tiny_encoder):
    data = _data(tiny_encoder)
    cfg = TrainConfig(lr=1e-2, max_epochs=2, batch_size=4, seeds=(0, 1))
    serial = run_protocol(FusionKind.GMU, tiny_encoder, data, cfg, workers=1)
    again = run_protocol(FusionKind.GMU, tiny_encoder, data, cfg, workers=1)
    pooled = run_protocol(FusionKind.GMU, tiny_encoder, data, cfg, workers=2)
    assert [r.seed for r in pooled.rows] == [0, 1]
    for other in (again, pooled):
        assert [r.to_dict() for r in other.rows] == [r.to_dict() for r in serial.rows]
        assert other.mean == serial.mean and other.std == serial.std


def test_report_formats(tiny_encoder):
    data = _data(tiny_encoder)
    cfg = TrainConfig(lr=1e-2, max_epochs=1, batch_size=4, seeds=(0, 1))
    report = run_protocol(FusionKind.CONCAT, tiny_encoder, data, cfg)
    doc = json.loads(report.to_json())
    assert doc["fusion"] == "concat"
    assert doc["std_convention"] == "population (divide by n)"
    assert [s["seed"] for s in doc["seeds"]] == [0, 1]
    assert set(doc["mean"]) == {"precision", "recall", "f1", "accuracy", "specificity"}
    md = report.to_markdown()
    assert "| Model | Precision | Recall | F1-score | Accuracy | Specificity |" in md
    assert "| Concat | " in md
    assert "seeds 0, 1" in md


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, tiny_encoder):
    model = build(FusionKind.CROSSMODAL, tiny_encoder, seed=5)
    save_checkpoint(model, tmp_path / "m.bwts", {"seed": 5, "side": 15})
    restored, meta = load_checkpoint(tmp_path / "m.bwts")
    assert meta["fusion"] == "crossmodal" and meta["seed"] == 5 and meta["side"] == 15
    assert restored.encoder_cfg == tiny_encoder
    batch = _labeled(tiny_encoder, [0, 1], seed=0).inputs
    assert np.array_equal(restored.logits(batch).data, model.logits(batch).data)


def test_checkpoint_needs_sidecar(tmp_path, tiny_encoder):
    model = build(FusionKind.TEXT_ONLY, tiny_encoder, seed=0)
    save_checkpoint(model, tmp_path / "m.bwts")
    (tmp_path / "m.bwts.json").unlink()
    with pytest.raises(FormatError, match="sidecar"):
        load_checkpoint(tmp_path / "m.bwts")


# ---------------------------------------------------------------------------
# Precomputed features
# ---------------------------------------------------------------------------

def test_precomputed_trains_only_the_head(tmp_path):
    rng = np.random.default_rng(0)
    labels = [i % 2 for i in range(12)]
    tensors = {}
    for i, y in enumerate(labels):
        tensors[f"u{i}/text"] = rng.normal(loc=y, size=(3, 4))
        tensors[f"u{i}/vision"] = rng.normal(loc=-y, size=(5, 4))
    save_tensors(tmp_path / "f.bwts", tensors)
    cfg = EncoderConfig(kind="precomputed", d_model=4, features_path=str(tmp_path / "f.bwts"))
    sets = {name: LabeledSet([UserInputs(f"u{i}") for i in idx], [labels[i] for i in idx])
            for name, idx in (("train", range(8)), ("val", range(8, 10)),
                              ("test", range(10, 12)))}
    model = build(FusionKind.CROSSMODAL, cfg, seed=0)
    assert not model.encoders.trainable
    assert all(name.startswith("head.") for name, _ in model.named_parameters())
    history = train(model, sets["train"], sets["val"], TrainConfig(lr=1e-2, max_epochs=3,
                                                                   batch_size=4), seed=0)
    assert len(history.epochs) == 3

