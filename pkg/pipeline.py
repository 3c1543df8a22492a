"""
pipeline.py - Pipeline: coordinates CliConfig and the library modules.

One method per CLI command. Each reads the artifacts of the command before
it from the output directory, writes its own, re-reads them to validate,
and returns a small summary dict that main.py logs.

Output directory layout:

    corpus.jsonl, summary.json                     ingest
    dna.<alphabet>.jsonl / .tsv / .meta.json       encode-dna
    images.<alphabet>/  (*.png, *.bdna, manifest.tsv)   render-images
    lcs.<alphabet>.tsv / .verdict.json / .svg      lcs-curve
    report.<fusion>.json / .md, checkpoints/       train
    evaluation.<fusion>.json                       evaluate
    predictions.<fusion>.jsonl                     predict
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from binfmt import load_tensors
from config import CliConfig, hash_inputs
from constants import SPLIT_NAMES
from dna import (Alphabet, DnaSequence, encode, encode_corpus, read_dna_jsonl, read_meta,
                 single_alphabet, write_dna_jsonl, write_dna_tsv, write_meta)
from encoders import EncoderConfig, prepare_inputs
from errors import (FeatureError, FormatError, IneligibleRecordError, LabelError,
                    TrainingError)
from evaluation import aggregate, confusion, metrics
from imagify import Palette, canvas_side, read_manifest, render, render_corpus
from ingest import (Corpus, UserRecord, balance_downsample, build_corpus, dump_jsonl,
                    filter_eligible, parse_jsonl, truncate_recent)
from lcs import curve_tsv, detect_group, lcs_curve
from models import (FusionModel, LabeledSet, load_checkpoint, predict, run_protocol,
                    save_checkpoint)

_logger = logging.getLogger("botdna.pipeline")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{path} not found (run the previous command first)") from None


def palette_from_dict(d: dict) -> Palette:
    return Palette(Alphabet.parse(d["alphabet"]), dict(d["level"]), int(d["pad_level"]))


class Pipeline:
    """
    Runs the commands against one resolved CliConfig.

    Nothing here parses arguments or touches logging handlers; main.py owns
    both.
    """

    def __init__(self, cfg: CliConfig):
        self._cfg = cfg

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------

    @property
    def cfg(self) -> CliConfig:
        return self._cfg

    @property
    def out(self) -> Path:
        return self._cfg.out_dir

    @property
    def corpus_path(self) -> Path:
        return self.out / "corpus.jsonl"

    def dna_path(self, suffix: str = "jsonl") -> Path:
        return self.out / f"dna.{self._cfg.alphabet.value.lower()}.{suffix}"

    @property
    def images_dir(self) -> Path:
        return self.out / f"images.{self._cfg.alphabet.value.lower()}"

    def checkpoint_path(self, seed: int) -> Path:
        return self.out / "checkpoints" / f"{self._cfg.fusion.value}.seed{seed}.bwts"

    def _ensure_out(self):
        self.out.mkdir(parents=True, exist_ok=True)

    def _provenance(self, inputs: Sequence[Path]) -> dict:
        return {"config": self._cfg.resolved(), "inputs_sha256": hash_inputs(inputs)}

    # ------------------------------------------------------------------
    # Corpus
    # ------------------------------------------------------------------

    def ingest(self, source: str | Path | None = None) -> dict:
        """Raw JSONL → filtered, truncated, optionally balanced, split corpus."""
        src = source or self._cfg.paths.corpus
        if not src:
            raise FormatError("ingest needs an input corpus (argument or paths.corpus)")
        src = Path(src)
        if not src.is_file():
            raise FormatError(f"input corpus {src} not found")
        icfg = self._cfg.ingest

        records = parse_jsonl(src, backfill_entities=icfg.backfill_entities)
        if icfg.max_tweets is not None:
            records = [truncate_recent(r, icfg.max_tweets) for r in records]
        records = filter_eligible(records)
        if not records:
            raise IneligibleRecordError(f"{src}: no eligible users")
        if icfg.balance:
            records = balance_downsample(records, self._cfg.seed)
        corpus = build_corpus(records, icfg.fractions, self._cfg.seed, icfg.name)

        self._ensure_out()
        written = dump_jsonl(corpus.records(), self.corpus_path)
        if len(parse_jsonl(self.corpus_path)) != written:
            raise FormatError(f"{self.corpus_path} did not re-read as {written} records")
        summary = {**corpus.summary(), **self._provenance([src])}
        _write_json(self.out / "summary.json", summary)
        for name, s in summary["splits"].items():
            _logger.info(f"split {name}: {s['users']} users ({s['human']} human, {s['bot']} bot)")
        return corpus.summary()

    def load_corpus(self) -> Corpus:
        if not self.corpus_path.is_file():
            raise FormatError(f"{self.corpus_path} not found (run ingest first)")
        return build_corpus(parse_jsonl(self.corpus_path), name=self._cfg.ingest.name)

    # ------------------------------------------------------------------
    # DNA and images
    # ------------------------------------------------------------------

    def encode_dna(self) -> dict:
        corpus = self.load_corpus()
        alphabet = self._cfg.alphabet
        sequences, max_len = encode_corpus(corpus, alphabet, self._cfg.threads)
        self._ensure_out()
        count = write_dna_jsonl(sequences.values(), self.dna_path("jsonl"))
        write_dna_tsv(sequences.values(), self.dna_path("tsv"))
        write_meta(self.dna_path("meta.json"), alphabet, max_len, count)
        if len(read_dna_jsonl(self.dna_path("jsonl"))) != count:
            raise FormatError(f"{self.dna_path('jsonl')} did not re-read as {count} sequences")
        return {"alphabet": alphabet.value, "count": count, "max_len": max_len}

    def load_dna(self) -> tuple[dict[str, DnaSequence], dict]:
        path = self.dna_path("jsonl")
        if not path.is_file():
            raise FormatError(f"{path} not found (run encode-dna first)")
        sequences = read_dna_jsonl(path)
        if not sequences:
            raise IneligibleRecordError(f"{path} holds no sequences")
        meta = _read_json(self.dna_path("meta.json"))
        if single_alphabet(sequences).value != meta["alphabet"]:
            raise FormatError(f"{path} and its meta sidecar disagree on the alphabet")
        return sequences, meta

    def render_images(self) -> dict:
        sequences, meta = self.load_dna()
        palette = self._cfg.resolved_palette
        images, manifest = render_corpus(sequences, palette, self.images_dir,
                                         int(meta["max_len"]), self._cfg.threads)
        if len(read_manifest(self.images_dir / "manifest.tsv")) != len(images):
            raise FormatError(f"{self.images_dir / 'manifest.tsv'} is incomplete")
        return {"images": len(images), "side": manifest[0].side,
                "palette_hash": palette.digest(), "dir": str(self.images_dir)}

    # ------------------------------------------------------------------
    # LCS
    # ------------------------------------------------------------------

    def lcs_curve(self, plot: bool = False) -> dict:
        sequences, _ = self.load_dna()
        curve   = lcs_curve({uid: s.seq for uid, s in sequences.items()})
        verdict = detect_group(curve)
        stem    = f"lcs.{self._cfg.alphabet.value.lower()}"
        with open(self.out / f"{stem}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(curve_tsv(curve))
        result = {"alphabet": self._cfg.alphabet.value, "accounts": len(sequences),
                  **verdict.to_dict(), **self._provenance([self.dna_path("jsonl")])}
        _write_json(self.out / f"{stem}.verdict.json", result)
        if plot:
            from plotting import plot_curve
            plot_curve(curve, self.out / f"{stem}.svg", verdict,
                       title=f"LCS curve ({self._cfg.alphabet.value})")
        _logger.info(f"group verdict: split at k={verdict.split_k}, "
                     f"{len(verdict.bot_group)} accounts, drop {verdict.drop_magnitude}")
        return verdict.to_dict()

    # ------------------------------------------------------------------
    # Model inputs
    # ------------------------------------------------------------------

    def _inputs(self, records: Sequence[UserRecord], enc: EncoderConfig, alphabet: Alphabet,
                palette: Palette, side: int) -> list:
        if enc.kind == "precomputed":
            return [prepare_inputs(enc, r.user_id) for r in records]
        out = []
        for r in records:
            pixels = render(encode(r, alphabet), side, palette).pixels
            out.append(prepare_inputs(enc, r.user_id, r.description, pixels))
        return out

    def _labeled(self, records: Sequence[UserRecord], enc: EncoderConfig, alphabet: Alphabet,
                 palette: Palette, side: int) -> LabeledSet:
        missing = [r.user_id for r in records if r.label is None]
        if missing:
            raise LabelError(f"unlabeled records in a labeled split: {missing[:5]}")
        return LabeledSet(self._inputs(records, enc, alphabet, palette, side),
                          np.array([int(r.label) for r in records], dtype=np.int64))

    # ------------------------------------------------------------------
    # Training, evaluation, prediction
    # ------------------------------------------------------------------

    def train(self) -> dict:
        """Five-seed (by default) protocol; one checkpoint per seed plus the report."""
        cfg      = self._cfg
        corpus   = self.load_corpus()
        alphabet = cfg.alphabet
        palette  = cfg.resolved_palette
        _, max_len = encode_corpus(corpus, alphabet, cfg.threads)
        side = canvas_side(max_len)
        data = {name: self._labeled(corpus.splits.get(name, []), cfg.encoder, alphabet,
                                    palette, side)
                for name in SPLIT_NAMES}

        report = run_protocol(cfg.fusion, cfg.encoder, data, cfg.train, cfg.threads)
        image_meta = {"alphabet": alphabet.value, "palette": palette.to_dict(), "side": side}
        report.extra = {**image_meta, **self._provenance([self.corpus_path])}

        (self.out / "checkpoints").mkdir(parents=True, exist_ok=True)
        for row in report.rows:
            path = self.checkpoint_path(row.seed)
            save_checkpoint(row.model, path, {**image_meta, "seed": row.seed,
                                              "test_confusion": row.confusion.to_dict(),
                                              "test_metrics": row.metrics})
            if set(load_tensors(path)) != set(row.model.state_dict()):
                raise FormatError(f"{path} did not re-read with every parameter")

        stem = f"report.{cfg.fusion.value}"
        with open(self.out / f"{stem}.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json())
        with open(self.out / f"{stem}.md", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_markdown())
        _logger.info(f"{cfg.fusion.title}: " + "  ".join(
            f"{m} {report.mean[m]:.4f}±{report.std[m]:.4f}" for m in report.mean))
        return {"fusion": cfg.fusion.value, "seeds": [r.seed for r in report.rows],
                "mean": report.mean, "std": report.std}

    def _checkpoints(self, checkpoint: str | Path | None) -> list[Path]:
        if checkpoint is not None:
            paths = [Path(checkpoint)]
        else:
            paths = [self.checkpoint_path(s) for s in self._cfg.train.seeds]
        for p in paths:
            if not p.is_file():
                raise FormatError(f"checkpoint {p} not found (run train first)")
        return paths

    def _restore(self, path: Path) -> tuple[FusionModel, dict, Palette]:
        model, meta = load_checkpoint(path)
        palette = palette_from_dict(meta["palette"])
        return model, meta, palette

    def evaluate(self, checkpoint: str | Path | None = None) -> dict:
        """
        Re-run each checkpoint on the test split and require the stored test
        metrics to come back exactly.
        """
        corpus = self.load_corpus()
        test_records = corpus.splits.get("test", [])
        if not test_records:
            raise TrainingError("test split is empty")
        rows = []
        for path in self._checkpoints(checkpoint):
            model, meta, palette = self._restore(path)
            test = self._labeled(test_records, model.encoder_cfg, palette.alphabet, palette,
                                 int(meta["side"]))
            preds = [p.label for p in predict(model, test.inputs, self._cfg.train.batch_size)]
            conf  = confusion(preds, test.labels)
            m     = metrics(conf).as_dict()
            stored = meta.get("test_metrics")
            if stored is not None and stored != m:
                raise TrainingError(f"{path}: test metrics {m} do not reproduce the stored {stored}")
            rows.append({"checkpoint": path.name, "seed": meta.get("seed"),
                         "confusion": conf.to_dict(), "metrics": m})
        mean, std = aggregate([r["metrics"] for r in rows])
        result = {"rows": rows, "mean": mean, "std": std,
                  **self._provenance([self.corpus_path, *self._checkpoints(checkpoint)])}
        _write_json(self.out / f"evaluation.{self._cfg.fusion.value}.json", result)
        return {"checkpoints": len(rows), "mean": mean}

    def predict(self, users: Sequence[str] | None = None, source: str | Path | None = None,
                checkpoint: str | Path | None = None) -> list[dict]:
        """Label stream for *users* (default: every user in *source* or the corpus)."""
        path = self._checkpoints(checkpoint)[0]
        model, meta, palette = self._restore(path)
        src = Path(source) if source is not None else self.corpus_path
        if not src.is_file():
            raise FormatError(f"{src} not found")
        by_id = {r.user_id: r for r in parse_jsonl(src)}
        wanted = list(users) if users else list(by_id)
        unknown = [u for u in wanted if u not in by_id]
        if unknown:
            raise FeatureError(f"unknown user {', '.join(unknown)}")
        records = [by_id[u] for u in wanted]
        empty = [r.user_id for r in records if not r.tweets]
        if empty:
            raise IneligibleRecordError(f"users with an empty timeline: {empty}")
        inputs = self._inputs(records, model.encoder_cfg, palette.alphabet, palette,
                              int(meta["side"]))
        preds = [p.to_dict() for p in predict(model, inputs, self._cfg.train.batch_size)]

        self._ensure_out()
        out_path = self.out / f"predictions.{self._cfg.fusion.value}.jsonl"
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            for p in preds:
                fh.write(json.dumps(p, separators=(",", ":")) + "\n")
        _logger.info(f"{len(preds)} predictions from {path.name} written to {out_path}")
        return preds
