"""Experiment specs and the steps behind each CLI command.

Output layout under ``out_dir``::

    data/train.jsonl, test.jsonl, long.jsonl   corpus manifests (+ *_frames/)
    data/train_aug.jsonl                       when length augmentation is on
    data/histogram.json, histogram.png
    model.ckpt, train_log.tsv, train_config.txt, training_curves.png
    report.txt, report.jsonl, probe.jsonl
    embeddings/S.npy, G.npy, summary.json, similarity.png
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .codec import Vocabulary
from .config import from_keyvalue, keyvalue_kwargs, read_keyvalue, to_keyvalue
from .evaluation import EvalReport, error_propagation_probe, evaluate, render_table, reports_jsonl
from .model import load_checkpoint, save_checkpoint
from .synth import (FRAME_PERIOD_MS, GeneratorConfig, augment_corpus, generate, generate_long, histogram,
                    read_manifest, write_manifest)
from .training import (ABLATION_P, ABLATION_W_REG, TrainConfig, checkpoint_extra, gaussian_target, similarity_summary,
                       train, vocab_from_extra)

log = logging.getLogger(__name__)


@dataclass
class ExperimentSpec:
    name: str = "desk"
    out_dir: str = "runs/desk"
    seed: int = 0
    train_count: int = 5000
    test_count: int = 300
    long_count: int = 200
    long_min_factor: float = 1.5
    long_max_factor: float = 2.0
    injection_offset: int = 20
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ExperimentSpec":
        values = read_keyvalue(path)
        top = {k: v for k, v in values.items() if "." not in k}
        unknown = {k.split(".", 1)[0] for k in values if "." in k} - {"generator", "train"}
        if unknown or {"generator", "train"} & set(top):
            raise KeyError(f"unknown spec keys or sections: {sorted(unknown | ({'generator', 'train'} & set(top)))}")
        return cls(**keyvalue_kwargs(cls, top),
                   generator=from_keyvalue(GeneratorConfig, values, "generator"),
                   train=from_keyvalue(TrainConfig, values, "train"))

    def to_text(self) -> str:
        return (to_keyvalue(self, skip=("generator", "train"))
                + to_keyvalue(self.generator, "generator") + to_keyvalue(self.train, "train"))

    def with_overrides(self, seed=None, out_dir=None, w_reg=None, p=None, length_aug=None) -> "ExperimentSpec":
        spec = self
        if seed is not None:
            spec = replace(spec, seed=seed, train=replace(spec.train, seed=seed))
        if out_dir is not None:
            spec = replace(spec, out_dir=str(out_dir))
        tr = {k: v for k, v in dict(w_reg=w_reg, p=p, length_aug=length_aug).items() if v is not None}
        if tr:
            spec = replace(spec, train=replace(spec.train, **tr))
        return spec

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    def vocabulary(self) -> Vocabulary:
        return self.generator.vocabulary()


# --- gen-data ---------------------------------------------------------------


def gen_data(spec: ExperimentSpec, data_dir: Path | None = None) -> dict:
    """Write train/test/long manifests with disjoint seeds and a histogram summary."""
    data_dir = Path(data_dir) if data_dir is not None else spec.data_dir
    data_dir.mkdir(parents=True, exist_ok=True)
    vocab = spec.vocabulary()
    g = spec.generator
    train_set = generate(replace(g, seed=3 * spec.seed), spec.train_count)
    test_set = generate(replace(g, seed=3 * spec.seed + 1), spec.test_count)
    longest = max(u.duration_ms for u in train_set)
    lo = int(np.ceil(spec.long_min_factor * longest))
    hi = min(int(spec.long_max_factor * longest), vocab.max_duration_ms - FRAME_PERIOD_MS)
    long_set = generate_long(replace(g, seed=3 * spec.seed + 2), spec.long_count, lo, hi)
    write_manifest(train_set, data_dir / "train.jsonl")
    write_manifest(test_set, data_dir / "test.jsonl")
    write_manifest(long_set, data_dir / "long.jsonl")

    hists = {"train": histogram(train_set, vocab)}
    if spec.train.length_aug:
        aug = augment_corpus(train_set, vocab.max_duration_ms)
        write_manifest(aug, data_dir / "train_aug.jsonl")
        hists["train + length aug"] = histogram(train_set + aug, vocab)
    tail_at = vocab.timestamp_count // 4
    summary = {
        "train_max_duration_ms": longest,
        "long_window_ms": [lo, hi],
        "tail_threshold_index": tail_at,
        "histograms": {k: {"max_index": h.max_index, "tail_mass": h.tail_mass(tail_at), "total": h.total}
                       for k, h in hists.items()},
    }
    (data_dir / "histogram.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    plotting.timestamp_histograms({k: h.counts for k, h in hists.items()}, data_dir / "histogram.png",
                                  vocab.resolution_ms)
    return summary


def format_histogram_summary(summary: dict) -> str:
    lines = [f"train max duration: {summary['train_max_duration_ms']} ms; "
             f"long split window: {summary['long_window_ms'][0]}-{summary['long_window_ms'][1]} ms"]
    for name, h in summary["histograms"].items():
        lines.append(f"{name:<20} max index {h['max_index']:>4}   "
                     f"tail mass (>= t_{summary['tail_threshold_index']}) {h['tail_mass']:.4f}")
    return "\n".join(lines) + "\n"


# --- train ------------------------------------------------------------------


def run_train(spec: ExperimentSpec, out: Path | None = None, data_dir: Path | None = None) -> Path:
    out = Path(out) if out is not None else spec.out
    data_dir = Path(data_dir) if data_dir is not None else spec.data_dir
    manifest = data_dir / "train.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"training corpus not found: {manifest} (run gen-data first)")
    corpus = read_manifest(manifest)
    vocab = spec.vocabulary()
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.txt").write_text(to_keyvalue(spec.train))
    result = train(corpus, spec.train, vocab, out)
    ckpt = save_checkpoint(result.model, out / "model.ckpt", checkpoint_extra(vocab, spec.train, spec.train.steps))
    plotting.training_curves(result.log, out / "training_curves.png", spec.train.w_reg)
    return ckpt


# --- evaluate ---------------------------------------------------------------


def run_evaluate(spec: ExperimentSpec, checkpoint: Path, out: Path | None = None,
                 data_dir: Path | None = None) -> list[EvalReport]:
    out = Path(out) if out is not None else Path(checkpoint).parent
    data_dir = Path(data_dir) if data_dir is not None else spec.data_dir
    model, extra = load_checkpoint(checkpoint)
    vocab = vocab_from_extra(extra)
    reports = []
    probes = []
    for split in ("test", "long"):
        path = data_dir / f"{split}.jsonl"
        if not path.exists():
            continue
        corpus = read_manifest(path)
        reports.append(evaluate(model, corpus, vocab, split))
        if split == "test":
            pr = error_propagation_probe(model, corpus, vocab, spec.injection_offset)
            rec = {"corpus": split, **asdict(pr), "degradation": pr.degradation}
            probes.append({k: None if isinstance(v, float) and math.isnan(v) else v for k, v in rec.items()})
    if not reports:
        raise FileNotFoundError(f"no test manifests under {data_dir}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(render_table(reports))
    (out / "report.jsonl").write_text(reports_jsonl(reports))
    (out / "probe.jsonl").write_text("".join(json.dumps(p, sort_keys=True) + "\n" for p in probes))
    return reports


# --- inspect-embeddings -----------------------------------------------------


def inspect_embeddings(checkpoint: Path, out: Path | None = None) -> dict:
    out = Path(out) if out is not None else Path(checkpoint).parent / "embeddings"
    model, extra = load_checkpoint(checkpoint)
    vocab = vocab_from_extra(extra)
    sigma = extra.get("sigma", vocab.timestamp_count / 4)
    target = gaussian_target(vocab.timestamp_count, sigma)
    summary = similarity_summary(model.timestamp_embeddings, target)
    S = summary.pop("S")
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "S.npy", S)
    np.save(out / "G.npy", target.G)
    summary["sigma"] = sigma
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    plotting.similarity_maps(S, target.G, out / "similarity.png",
                             f"MSE {summary['mse']:.4f}, row corr {summary['row_corr']:.3f}")
    return summary


# --- run-matrix -------------------------------------------------------------

MATRIX_ROWS = {
    "baseline": dict(length_aug=False, w_reg=0.0, p=0.0),
    "+length_aug": dict(length_aug=True, w_reg=0.0, p=0.0),
    "+length_aug+reg": dict(length_aug=True, w_reg=ABLATION_W_REG, p=0.0),
    "+length_aug+reduced_tf": dict(length_aug=True, w_reg=0.0, p=ABLATION_P),
}
# both techniques together; reported for observation, not part of the four-row comparison
COMBINED_ROW = {"+length_aug+reg+reduced_tf": dict(length_aug=True, w_reg=ABLATION_W_REG, p=ABLATION_P)}


def _row_dir(name: str) -> str:
    return name.strip("+").replace("+", "_") or "baseline"


def _run_row(spec: ExperimentSpec, name: str, switches: dict) -> dict:
    torch.set_num_threads(1)
    row_spec = replace(spec, train=replace(spec.train, **switches))
    row_out = spec.out / _row_dir(name)
    ckpt = run_train(row_spec, row_out, spec.data_dir)
    reports = run_evaluate(row_spec, ckpt, row_out, spec.data_dir)
    emb = inspect_embeddings(ckpt, row_out / "embeddings")
    probe = json.loads((row_out / "probe.jsonl").read_text().splitlines()[0])
    return {"reports": reports, "embeddings": emb, "probe": probe}


def run_matrix(spec: ExperimentSpec, rows: dict | None = None, jobs: int = 1) -> dict:
    """Train, evaluate and inspect every ablation row on one shared corpus.

    Rows run serially unless ``jobs > 1``, in which case they run in worker
    processes; each row is seeded independently so results do not depend on
    ``jobs``. Results land in ``<out>/<row>/`` plus a combined
    ``matrix.txt`` / ``matrix.jsonl`` / ``matrix.png`` at the top level.
    """
    rows = rows or MATRIX_ROWS
    data_spec = replace(spec, train=replace(spec.train, length_aug=True))
    if not (spec.data_dir / "train.jsonl").exists():
        gen_data(data_spec)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=mp.get_context("spawn")) as pool:
            futures = {name: pool.submit(_run_row, spec, name, sw) for name, sw in rows.items()}
            results = {name: f.result() for name, f in futures.items()}
    else:
        results = {name: _run_row(spec, name, sw) for name, sw in rows.items()}
    write_matrix(spec.out, results)
    return results


def _num(v) -> float:
    return math.nan if v is None else v


def write_matrix(out: Path, results: dict):
    lines = []
    records = []
    bars = {}
    flat = []
    for name, res in results.items():
        for r in res["reports"]:
            flat.append(replace(r, corpus=f"{name} / {r.corpus}"))
        rec = {"row": name, "mse_SG": res["embeddings"]["mse"], "row_corr_SG": res["embeddings"]["row_corr"],
               "probe_degradation_ms": res["probe"]["degradation"],
               "probe_wer_injected_pct": res["probe"]["wer_injected"],
               "reports": [r.record() for r in res["reports"]]}
        records.append(rec)
        by = {r.corpus: r for r in res["reports"]}
        bars[name] = {"test AAS (ms)": by["test"].aas_ms if "test" in by else float("nan"),
                      "long AAS (ms)": by["long"].aas_ms if "long" in by else float("nan"),
                      "MSE(S,G)": res["embeddings"]["mse"],
                      "probe AAS gap (ms)": _num(res["probe"]["degradation"])}
    lines.append(render_table(flat, label_width=36))
    w = max(24, *(len(rec["row"]) for rec in records))
    lines.append(f"{'row':<{w}} {'MSE(S,G)':>10} {'corr(S,G)':>10} {'probe gap(ms)':>14} {'inj. WER(%)':>12}")
    for rec in records:
        lines.append(f"{rec['row']:<{w}} {rec['mse_SG']:>10.4f} {rec['row_corr_SG']:>10.4f} "
                     f"{_num(rec['probe_degradation_ms']):>14.2f} {rec['probe_wer_injected_pct']:>12.2f}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "matrix.txt").write_text("\n".join(lines) + "\n")
    (out / "matrix.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    plotting.matrix_bars(bars, out / "matrix.png")
