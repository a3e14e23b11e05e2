"""End-to-end orchestration: signals -> images -> cross-validated CNN reports.

The pipeline is deterministic under a fixed master seed: dataset generation,
rendering, fold assignment, and per-fold training are all seeded, so a rerun
writes byte-identical artifacts.  Test folds are withheld before training
starts; nothing downstream of the split can feed test images back into the
optimizer.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cnn
from .imaging import decode_png, encode_png, render_spectrogram
from .motorsim import (
    FaultClass,
    DatasetManifest,
    MotorSpec,
    class_separability_report,
    generate_dataset,
)
from .dsp import load_timeseries
from .tfr import Method, TransformConfig, transform

__all__ = [
    "FoldPlan",
    "EvalReport",
    "ImageCorpus",
    "RunConfig",
    "stratified_kfold",
    "confusion_matrix",
    "render_corpus",
    "load_image_corpus",
    "cross_validate",
    "compare_methods",
    "comparison_to_csv",
    "comparison_to_text",
    "run_all",
    "PUBLISHED_ACCURACY_PCT",
]

N_CLASSES = len(FaultClass)

# Reference results from the original study on the real (non-public) motor
# dataset.  Annotation only -- synthetic data cannot reproduce them.
PUBLISHED_ACCURACY_PCT = {
    "STFT-O": 97.65,
    "STFT-R": 96.32,
    "STFT": 96.08,
    "STFT-OR": 96.03,
    "STFT-S": 88.27,
}
PUBLISHED_NOTE = "published, real data"


def thread_cap() -> int:
    """Parallelism cap from TFMD_THREADS; defaults to serial execution."""
    raw = os.environ.get("TFMD_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"TFMD_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# ---------------------------------------------------------------------------
# Fold planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every sample index to one of k folds."""

    k: int
    assignment: np.ndarray  # (n,) fold id per sample index
    seed: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignment must be a non-empty 1-d array")
        if a.min() < 0 or a.max() >= self.k:
            raise ValueError("fold ids must lie in 0..k-1")

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> FoldPlan:
    """Per-class shuffle + round-robin assignment.

    Guarantees the folds partition the index set and that each class's counts
    across folds differ by at most one.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    assignment = np.full(len(labels), -1, dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise ValueError(
                f"class {cls} has {len(idx)} samples; stratified {k}-fold needs >= {k}"
            )
        idx = rng.permutation(idx)
        assignment[idx] = np.arange(len(idx)) % k
    return FoldPlan(k=k, assignment=assignment, seed=seed)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def confusion_matrix(preds, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """cell (i, j) = count of true class i predicted as class j."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


@dataclass
class EvalReport:
    """Cross-validation outcome for one method.

    fold_accuracies holds None for folds whose training diverged; the mean
    and std are over the successful folds, and the confusion matrix pools
    their test predictions.
    """

    method: str
    k: int
    seed: int
    fold_accuracies: list
    failed_folds: list
    confusion: np.ndarray
    mean_accuracy: float = 0.0
    std_accuracy: float = 0.0
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)

    @classmethod
    def build(cls, method, k, seed, fold_accuracies, failed_folds, confusion):
        confusion = np.asarray(confusion, dtype=np.int64)
        ok = [a for a in fold_accuracies if a is not None]
        if not ok:
            raise ValueError("every fold failed; no report to build")
        col = confusion.sum(axis=0)
        row = confusion.sum(axis=1)
        diag = np.diag(confusion)
        precision = [float(diag[i] / col[i]) if col[i] else 0.0 for i in range(len(col))]
        recall = [float(diag[i] / row[i]) if row[i] else 0.0 for i in range(len(row))]
        return cls(
            method=method,
            k=k,
            seed=seed,
            fold_accuracies=list(fold_accuracies),
            failed_folds=list(failed_folds),
            confusion=confusion,
            mean_accuracy=float(np.mean(ok)),
            std_accuracy=float(np.std(ok)),
            precision=precision,
            recall=recall,
        )

    @property
    def pooled_accuracy(self) -> float:
        total = int(self.confusion.sum())
        return float(np.trace(self.confusion) / total) if total else 0.0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "seed": self.seed,
            "fold_accuracies": self.fold_accuracies,
            "failed_folds": self.failed_folds,
            "confusion": self.confusion.tolist(),
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "pooled_accuracy": self.pooled_accuracy,
            "precision": self.precision,
            "recall": self.recall,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls(
            method=d["method"],
            k=d["k"],
            seed=d["seed"],
            fold_accuracies=d["fold_accuracies"],
            failed_folds=d["failed_folds"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            mean_accuracy=d["mean_accuracy"],
            std_accuracy=d["std_accuracy"],
            precision=d["precision"],
            recall=d["recall"],
        )


# ---------------------------------------------------------------------------
# Image corpora
# ---------------------------------------------------------------------------


@dataclass
class ImageCorpus:
    """Rendered images plus labels, in manifest order."""

    images: np.ndarray  # (n, 3, size, size) float32 in [0, 1]
    labels: np.ndarray  # (n,) int
    loads: np.ndarray  # (n,) int
    method: str


def render_corpus(
    manifest: DatasetManifest,
    data_dir,
    method: Method,
    out_dir,
    cfg: TransformConfig | None = None,
    size: int = 64,
    floor_db: float = -80.0,
    freq_range_hz: tuple[float, float] | None = (0.0, 500.0),
) -> Path:
    """Render every manifest entry to a PNG under out_dir; returns the path
    of the images manifest.

    The default frequency crop keeps the band that carries every injected
    signature component, so image pixels are spent where the classes differ.
    """
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in manifest.entries:
        ts, _ = load_timeseries(data_dir / e["path"])
        img = render_spectrogram(
            transform(ts, method, cfg),
            size=size,
            floor_db=floor_db,
            freq_range_hz=freq_range_hz,
        )
        rel = str(Path(e["path"]).with_suffix(".png"))
        png_path = out_dir / rel
        png_path.parent.mkdir(parents=True, exist_ok=True)
        png_path.write_bytes(encode_png(img))
        entries.append({**e, "path": rel})
    payload = {
        "method": method.code,
        "size": size,
        "floor_db": floor_db,
        "freq_range_hz": list(freq_range_hz) if freq_range_hz else None,
        "entries": entries,
    }
    path = out_dir / "images_manifest.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))
    return path


def load_image_corpus(images_dir) -> ImageCorpus:
    """Read a rendered corpus back as float32 arrays in [0, 1]."""
    images_dir = Path(images_dir)
    d = json.loads((images_dir / "images_manifest.json").read_text())
    images, labels, loads = [], [], []
    for e in d["entries"]:
        img = decode_png((images_dir / e["path"]).read_bytes())
        images.append(img.pixels.transpose(2, 0, 1).astype(np.float32) / 255.0)
        labels.append(e["label"])
        loads.append(e["load"])
    return ImageCorpus(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        loads=np.asarray(loads, dtype=np.int64),
        method=d["method"],
    )


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def _default_trainer(train_images, train_labels, test_images, fold_seed,
                     train_cfg: cnn.TrainConfig, checkpoint_path=None,
                     history_path=None):
    """Fresh seeded network per fold; only training-fold arrays reach the
    optimizer."""
    net = cnn.build_default_network(seed=fold_seed, input_shape=train_images.shape[1:])
    history = cnn.train(net, train_images, train_labels,
                        replace(train_cfg, seed=fold_seed))
    if checkpoint_path is not None:
        cnn.save_checkpoint(net, checkpoint_path)
    if history_path is not None:
        history.to_csv(history_path)
    preds, _ = cnn.predict(net, test_images)
    return preds


def _fold_job(args):
    (fold, fold_seed, train_images, train_labels, test_images,
     train_cfg, ckpt, hist) = args
    try:
        preds = _default_trainer(train_images, train_labels, test_images,
                                 fold_seed, train_cfg, ckpt, hist)
        return fold, preds, None
    except cnn.TrainingDiverged as exc:
        return fold, None, str(exc)


def cross_validate(
    corpus: ImageCorpus,
    train_cfg: cnn.TrainConfig,
    k: int = 10,
    seed: int = 0,
    trainer=None,
    artifacts_dir=None,
) -> EvalReport:
    """Train k independent models and pool their held-out predictions.

    Fold i's network and shuffling are seeded with ``seed ^ i`` so each fold
    is reproducible in isolation.  A fold whose training diverges is recorded
    in ``failed_folds`` and excluded from the pooled confusion matrix; the
    run continues.  ``trainer`` may be replaced (signature: train_images,
    train_labels, test_images, fold_seed -> predictions) for testing.
    """
    plan = stratified_kfold(corpus.labels, k=k, seed=seed)
    if artifacts_dir is not None:
        artifacts_dir = Path(artifacts_dir)
        artifacts_dir.mkdir(parents=True, exist_ok=True)

    def paths(fold):
        if artifacts_dir is None:
            return None, None
        return (
            artifacts_dir / f"fold_{fold:02d}.ckpt",
            artifacts_dir / f"fold_{fold:02d}_history.csv",
        )

    jobs = []
    for fold in range(k):
        tr = plan.train_indices(fold)
        te = plan.test_indices(fold)
        ckpt, hist = paths(fold)
        jobs.append((fold, seed ^ fold, corpus.images[tr], corpus.labels[tr],
                     corpus.images[te], train_cfg, ckpt, hist))

    results = {}
    workers = thread_cap()
    if trainer is not None:
        for fold, fold_seed, xtr, ytr, xte, _, _, _ in jobs:
            try:
                results[fold] = (trainer(xtr, ytr, xte, fold_seed), None)
            except cnn.TrainingDiverged as exc:
                results[fold] = (None, str(exc))
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for fold, preds, err in pool.map(_fold_job, jobs):
                results[fold] = (preds, err)
    else:
        for job in jobs:
            fold, preds, err = _fold_job(job)
            results[fold] = (preds, err)

    fold_accuracies = []
    failed = []
    pooled = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for fold in range(k):
        preds, err = results[fold]
        te = plan.test_indices(fold)
        if preds is None:
            fold_accuracies.append(None)
            failed.append({"fold": fold, "error": err})
            continue
        preds = np.asarray(preds)
        truth = corpus.labels[te]
        fold_accuracies.append(float(np.mean(preds == truth)))
        pooled += confusion_matrix(preds, truth)
    return EvalReport.build(corpus.method, k, seed, fold_accuracies, failed, pooled)


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------


def compare_methods(reports) -> dict:
    """Comparison table over EvalReports, sorted by measured mean accuracy
    (descending, ties broken by method code).

    The published column reproduces the original study's real-data results
    purely for reference; it is never a target for the synthetic corpus.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report to compare")
    rows = []
    for r in reports:
        rows.append({
            "method": r.method,
            "mean_accuracy": r.mean_accuracy,
            "std_accuracy": r.std_accuracy,
            "fold_accuracies": r.fold_accuracies,
            "n_failed_folds": len(r.failed_folds),
            "published_accuracy_pct": PUBLISHED_ACCURACY_PCT.get(r.method),
            "published_note": PUBLISHED_NOTE,
        })
    rows.sort(key=lambda row: (-row["mean_accuracy"], row["method"]))
    return {"rows": rows, "published_note": PUBLISHED_NOTE}


def comparison_to_csv(table: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([
        "method", "mean_accuracy", "std_accuracy", "n_failed_folds",
        "published_accuracy_pct", "published_note",
    ])
    for row in table["rows"]:
        pub = row["published_accuracy_pct"]
        writer.writerow([
            row["method"],
            f"{row['mean_accuracy']:.6f}",
            f"{row['std_accuracy']:.6f}",
            row["n_failed_folds"],
            "" if pub is None else f"{pub:.2f}",
            row["published_note"],
        ])
    return buf.getvalue()


def comparison_to_text(table: dict) -> str:
    lines = [
        f"{'method':<9} {'mean acc':>9} {'std':>7} {'failed':>6} "
        f"{'published % (' + PUBLISHED_NOTE + ')':>28}"
    ]
    for row in table["rows"]:
        pub = row["published_accuracy_pct"]
        lines.append(
            f"{row['method']:<9} {row['mean_accuracy']:>9.4f} "
            f"{row['std_accuracy']:>7.4f} {row['n_failed_folds']:>6d} "
            f"{('-' if pub is None else f'{pub:.2f}'):>28}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# run-all
# ---------------------------------------------------------------------------

ALL_METHOD_CODES = tuple(m.code for m in Method)


@dataclass
class RunConfig:
    """One config drives the whole pipeline; (config, seed) determines every
    artifact byte."""

    per_cell: int = 20
    seed: int = 0
    k: int = 10
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    methods: tuple = ALL_METHOD_CODES
    image_size: int = 64
    floor_db: float = -80.0
    freq_range_hz: tuple = (0.0, 500.0)
    motor: dict = field(default_factory=dict)
    transform: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in ALL_METHOD_CODES]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {ALL_METHOD_CODES}")

    def motor_spec(self) -> MotorSpec:
        return MotorSpec(**self.motor)

    def transform_cfg(self) -> TransformConfig:
        return TransformConfig(**self.transform)

    def train_cfg(self) -> cnn.TrainConfig:
        return cnn.TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "per_cell": self.per_cell,
            "seed": self.seed,
            "k": self.k,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "methods": list(self.methods),
            "image_size": self.image_size,
            "floor_db": self.floor_db,
            "freq_range_hz": list(self.freq_range_hz),
            "motor": self.motor,
            "transform": self.transform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        if "freq_range_hz" in d:
            d["freq_range_hz"] = tuple(d["freq_range_hz"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_all(config: RunConfig, out_dir) -> dict:
    """Generate -> render (per method) -> cross-validate -> compare.

    A failing stage is recorded in the run log and skips only the methods it
    affects; everything else still runs.  Returns the run log, which is also
    written to ``run_log.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=1)
    )
    log = {"config": config.to_dict(), "stages": [], "reports": {}}

    def record(stage, status, detail=""):
        log["stages"].append({"stage": stage, "status": status, "detail": detail})

    t0 = time.perf_counter()
    data_dir = out_dir / "data"
    try:
        manifest = generate_dataset(config.motor_spec(), config.per_cell,
                                    config.seed, data_dir)
        record("gen", "ok", f"{len(manifest.entries)} signals")
    except Exception as exc:
        record("gen", "failed", repr(exc))
        _finish(log, out_dir, t0)
        return log

    reports = []
    tcfg = config.transform_cfg()
    for code in config.methods:
        method = Method.from_code(code)
        images_dir = out_dir / "images" / code
        try:
            render_corpus(
                manifest, data_dir, method, images_dir, tcfg,
                size=config.image_size, floor_db=config.floor_db,
                freq_range_hz=config.freq_range_hz,
            )
            record(f"render:{code}", "ok")
        except Exception as exc:
            record(f"render:{code}", "failed", repr(exc))
            continue
        try:
            corpus = load_image_corpus(images_dir)
            report = cross_validate(
                corpus, config.train_cfg(), k=config.k, seed=config.seed,
                artifacts_dir=out_dir / "cv" / code,
            )
            reports_dir = out_dir / "reports"
            reports_dir.mkdir(parents=True, exist_ok=True)
            report.save(reports_dir / f"{code}.json")
            reports.append(report)
            record(f"cv:{code}", "ok", f"mean_acc={report.mean_accuracy:.4f}")
            log["reports"][code] = report.to_dict()
        except Exception as exc:
            record(f"cv:{code}", "failed", repr(exc))

    if reports:
        table = compare_methods(reports)
        (out_dir / "comparison.json").write_text(
            json.dumps(table, sort_keys=True, indent=1)
        )
        (out_dir / "comparison.csv").write_text(comparison_to_csv(table))
        (out_dir / "comparison.txt").write_text(comparison_to_text(table))
        # per-fold accuracies for box-plot style summaries
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "fold", "accuracy"])
        for r in reports:
            for fold, acc in enumerate(r.fold_accuracies):
                writer.writerow([r.method, fold, "" if acc is None else f"{acc:.6f}"])
        (out_dir / "fold_accuracies.csv").write_text(buf.getvalue())
        record("compare", "ok")
    else:
        record("compare", "skipped", "no successful reports")

    _finish(log, out_dir, t0)
    return log


def _finish(log, out_dir, t0):
    log["elapsed_s"] = round(time.perf_counter() - t0, 3)
    Path(out_dir, "run_log.json").write_text(json.dumps(log, sort_keys=True, indent=1))
