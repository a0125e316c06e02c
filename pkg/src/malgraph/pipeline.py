"""Dataset plumbing, stratified splits, the training loop, and evaluation.

A manifest (JSON Lines: ``{"path":...,"label":0|1,"family":"..."}`` per line)
names the dataset; paths resolve relative to the manifest's directory and may
point at graph JSON documents, ``.ll`` files, or raw trace files — the latter
two are parsed and built into graphs on load.  Manifest label/family always
override whatever the graph file carries.

Training follows the usual protocol: stratified 80/20 split, vocabulary built
from the training split only (an opt-in scope widens it to all graphs),
shuffled mini-batches with adaptive-moment updates, and per-epoch test
accuracy/AUROC history.  Everything is deterministic in the config seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytics import OpVocabulary, build_vocab, encode
from .depgraph import DepGraph, build_graph, load_graph
from .errors import (
    EmptyUnit,
    IoError,
    MalformedFile,
    MalformedLine,
    MalgraphError,
    SingleClass,
    TooFewSamples,
)
from .ir import parse_ll, parse_trace
from .sage import (
    AdamState,
    ArchConfig,
    ModelParams,
    adam_step,
    backward,
    forward,
    init_params,
    load_model,
    save_model,
)

__all__ = [
    "Manifest", "ManifestEntry", "TrainConfig", "EpochStats", "TrainResult",
    "EvalReport", "load_manifest", "save_manifest", "load_dataset", "split",
    "train", "auroc", "metrics", "eval_per_family", "score_samples",
    "save_history", "save_model", "load_model", "worker_count",
    "HISTORY_CSV_HEADER",
]

HISTORY_CSV_HEADER = "epoch,train_loss,test_acc,test_auroc"


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    family: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    base_dir: str = ""

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for e in self.entries:
            if e.label not in (0, 1) or type(e.label) is not int:
                raise ValueError(f"label must be 0 or 1: {e!r}")
            if not e.family:
                raise ValueError(f"family must be nonempty: {e!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        if self.base_dir:
            return Path(self.base_dir) / entry.path
        return Path(entry.path)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from None
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedFile(str(path), f"line {line_no}: not valid JSON: {e}") from None
        if not isinstance(obj, dict):
            raise MalformedFile(str(path), f"line {line_no}: expected an object")
        p, label, family = obj.get("path"), obj.get("label"), obj.get("family")
        if not isinstance(p, str) or not p:
            raise MalformedFile(str(path), f"line {line_no}: bad path {p!r}")
        if type(label) is not int or label not in (0, 1):
            raise MalformedFile(str(path), f"line {line_no}: bad label {label!r}")
        if not isinstance(family, str) or not family:
            raise MalformedFile(str(path), f"line {line_no}: bad family {family!r}")
        entries.append(ManifestEntry(p, label, family))
    try:
        return Manifest(entries=tuple(entries), base_dir=str(path.parent))
    except ValueError as e:
        raise MalformedFile(str(path), str(e)) from None


def save_manifest(manifest: Manifest, path):
    lines = [json.dumps({"path": e.path, "label": e.label, "family": e.family},
                        separators=(",", ":"))
             for e in manifest.entries]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None


def worker_count() -> int:
    raw = os.environ.get("MGN_THREADS")
    if raw is None or not raw.strip():
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise MalgraphError(f"MGN_THREADS must be a positive integer, got {raw!r}")
    return value


def _load_entry(manifest: Manifest, entry: ManifestEntry,
                control_edges: bool, memory_edges: bool) -> DepGraph:
    path = manifest.resolve(entry)
    suffix = path.suffix.lower()
    try:
        if suffix == ".json":
            g = load_graph(path)
        else:
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as e:
                raise IoError(f"cannot read {path}: {e}") from None
            unit = parse_ll(text, path) if suffix == ".ll" else parse_trace(text, path)
            g = build_graph(unit, control_edges=control_edges, memory_edges=memory_edges)
    except (MalformedLine, EmptyUnit) as e:
        raise MalformedFile(str(path), str(e)) from None
    return dataclasses.replace(g, label=entry.label, family=entry.family)


def load_dataset(manifest: Manifest, *, control_edges: bool = False,
                 memory_edges: bool = False) -> list:
    """All graphs of a manifest, in manifest order; one worker per file."""
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(
            lambda e: _load_entry(manifest, e, control_edges, memory_edges),
            manifest.entries))


def split(manifest: Manifest, fraction: float, seed: int):
    """Stratified split: per label, seeded shuffle then first ceil(f·n) to train."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    train_entries, test_entries = [], []
    for label in (0, 1):
        group = [e for e in manifest.entries if e.label == label]
        if len(group) < 2:
            raise TooFewSamples(
                f"need at least 2 entries of label {label}, found {len(group)}")
        rng = np.random.default_rng([seed, label])
        order = rng.permutation(len(group))
        take = math.ceil(fraction * len(group))
        train_entries.extend(group[i] for i in order[:take])
        test_entries.extend(group[i] for i in order[take:])
    return (Manifest(tuple(train_entries), manifest.base_dir),
            Manifest(tuple(test_entries), manifest.base_dir))


def auroc(scores, labels) -> float:
    """Mann–Whitney AUROC with the 0.5-per-tie convention (average ranks)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    p = int(pos.sum())
    n = len(labels) - p
    if p == 0 or n == 0:
        raise SingleClass("AUROC needs both a positive and a negative sample")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0  # average of 1-based ranks
        i = j + 1
    u = ranks[pos].sum() - p * (p + 1) / 2.0
    return float(u / (p * n))


def metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Accuracy and F1 (malicious = positive class) at a fixed threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if len(scores) == 0 or len(scores) != len(labels):
        raise ValueError("scores and labels must be nonempty and aligned")
    pred = scores >= threshold
    actual = labels == 1
    acc = float(np.mean(pred == actual))
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"acc": acc, "f1": f1}


@dataclass
class TrainConfig:
    arch: ArchConfig
    epochs: int
    seed: int
    batch_size: int = 32
    lr: float = 1e-3
    split_fraction: float = 0.8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must be in (0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    test_acc: float
    test_auroc: float


@dataclass
class TrainResult:
    params: ModelParams
    vocab: OpVocabulary
    history: list
    train_manifest: Manifest
    test_manifest: Manifest


@dataclass(frozen=True)
class EvalReport:
    acc: float
    auroc: float | None
    f1: float
    per_family: dict = field(default_factory=dict)
    threshold: float = 0.5


def score_samples(params: ModelParams, samples, batch_size: int = 64,
                  rng=None) -> np.ndarray:
    """Scores for a sample list, chunked to bound the disjoint-union size."""
    chunks = [forward(params, samples[i:i + batch_size], rng=rng)[0]
              for i in range(0, len(samples), batch_size)]
    return np.concatenate(chunks) if chunks else np.empty(0)


def _labels_of(samples) -> np.ndarray:
    return np.asarray([s.label for s in samples], dtype=float)


def _require_both_classes(manifest: Manifest, which: str):
    labels = {e.label for e in manifest.entries}
    if labels != {0, 1}:
        raise TooFewSamples(
            f"{which} split must contain both classes, got labels {sorted(labels)}")


def train(manifest: Manifest, cfg: TrainConfig, *, vocab_scope: str = "train",
          control_edges: bool = False, memory_edges: bool = False) -> TrainResult:
    """Split, build vocabulary, train for cfg.epochs, and record history.

    The vocabulary is built from the train split only unless
    vocab_scope="all"; cfg.arch.vocab_size is overridden to match it.
    """
    if vocab_scope not in ("train", "all"):
        raise ValueError("vocab_scope must be 'train' or 'all'")
    train_m, test_m = split(manifest, cfg.split_fraction, cfg.seed)
    _require_both_classes(train_m, "train")
    _require_both_classes(test_m, "test")

    train_graphs = load_dataset(train_m, control_edges=control_edges,
                                memory_edges=memory_edges)
    test_graphs = load_dataset(test_m, control_edges=control_edges,
                               memory_edges=memory_edges)

    vocab_source = train_graphs if vocab_scope == "train" else train_graphs + test_graphs
    vocab = build_vocab(vocab_source)
    arch = dataclasses.replace(cfg.arch, vocab_size=vocab.size)

    train_samples = [encode(g, vocab) for g in train_graphs]
    test_samples = [encode(g, vocab) for g in test_graphs]
    train_labels = _labels_of(train_samples)
    test_labels = _labels_of(test_samples)

    params = init_params(arch, cfg.seed)
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    sample_rng = (np.random.default_rng([cfg.seed, 2])
                  if arch.sample_cap is not None else None)

    history = []
    step = 0
    n = len(train_samples)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch_idx = order[lo:lo + cfg.batch_size]
            batch = [train_samples[i] for i in batch_idx]
            _, cache = forward(params, batch, rng=sample_rng)
            loss, grads = backward(params, cache, train_labels[batch_idx])
            step += 1
            adam_step(params, grads, state, step, lr=cfg.lr)
            loss_sum += loss * len(batch)
        scores = score_samples(params, test_samples, cfg.batch_size, rng=sample_rng)
        history.append(EpochStats(
            epoch=epoch,
            train_loss=loss_sum / n,
            test_acc=metrics(scores, test_labels)["acc"],
            test_auroc=auroc(scores, test_labels),
        ))
    return TrainResult(params, vocab, history, train_m, test_m)


def eval_per_family(params: ModelParams, vocab: OpVocabulary, manifest: Manifest, *,
                    control_edges: bool = False, memory_edges: bool = False,
                    batch_size: int = 64) -> EvalReport:
    """Overall ACC/AUROC/F1 plus per-family accuracy on a labeled manifest."""
    if not manifest.entries:
        raise TooFewSamples("evaluation needs at least one entry")
    graphs = load_dataset(manifest, control_edges=control_edges,
                          memory_edges=memory_edges)
    samples = [encode(g, vocab) for g in graphs]
    labels = _labels_of(samples)
    scores = score_samples(params, samples, batch_size)
    core = metrics(scores, labels)
    try:
        area = auroc(scores, labels)
    except SingleClass:
        area = None

    groups: dict[str, list] = {}
    for entry, score in zip(manifest.entries, scores):
        name = "benign" if entry.label == 0 else entry.family
        groups.setdefault(name, []).append((score, entry.label))
    per_family = {}
    for name in sorted(groups):
        rows = groups[name]
        correct = sum((s >= 0.5) == (y == 1) for s, y in rows)
        per_family[name] = {"samples": len(rows), "acc": correct / len(rows)}
    return EvalReport(acc=core["acc"], auroc=area, f1=core["f1"],
                      per_family=per_family)


def save_history(history, path):
    lines = [HISTORY_CSV_HEADER]
    lines += [f"{h.epoch},{h.train_loss!r},{h.test_acc!r},{h.test_auroc!r}"
              for h in history]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None
