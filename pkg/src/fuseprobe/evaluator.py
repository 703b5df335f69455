"""Evaluation protocol: multi-clip logit averaging, balanced/top-k accuracy,
per-view reports, and the trained-view vs novel-view aggregation.

Per video, logits are averaged over equidistantly sampled clips (3 by
default). Balanced accuracy is the mean of per-class recalls over classes
that have at least one test sample; classes absent from a view's test
split are excluded from that view's balanced accuracy and noted in the
report. The cross-view aggregate is the unweighted mean over novel views
(the trained view never contributes to it). Reduction into confusion
matrices runs in manifest order, so reports are deterministic.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .store import sample_clips


def predict_video(head, probe, manifest, record, num_clips=3, frames_per_clip=16):
    """Mean of per-clip logits over equidistant eval clips -> [C] array."""
    frames = 1 if manifest.is_clip_level else frames_per_clip
    clips = sample_clips(manifest, record, num_clips, frames, "eval_equidistant")
    per_clip = [probe.logits(head.fuse(clip)).data.astype(np.float64) for clip in clips]
    return np.mean(per_clip, axis=0)


def topk_accuracy(logits, labels, k):
    """Fraction of rows whose label ranks in the top k logits.

    Ties resolve in favor of the lower class id (stable sort on negated
    logits), so results are reproducible on constant logits.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    c = logits.shape[1]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > c:
        raise ValueError(f"k={k} exceeds class count {c}")
    order = np.argsort(-logits, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


def confusion_matrix(predictions, labels, class_count):
    """Counts[true, predicted]; row sums equal per-class sample counts."""
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    for true, pred in zip(labels, predictions):
        cm[true, pred] += 1
    return cm


def balanced_accuracy(confusion):
    """Mean per-class recall over classes with at least one sample."""
    confusion = np.asarray(confusion)
    row_sums = confusion.sum(axis=1)
    present = row_sums > 0
    if not present.any():
        raise ValueError("confusion matrix has no samples")
    recalls = np.diag(confusion)[present] / row_sums[present]
    return float(recalls.mean())


def _top5_k(class_count):
    # top-5 over fewer than 5 classes degenerates to k = C (always 1.0)
    return min(5, class_count)


@dataclass
class ViewMetrics:
    view: str
    sample_count: int
    balanced_acc: float
    top1: float
    top5: float
    confusion: np.ndarray
    missing_classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "view": self.view,
            "sample_count": self.sample_count,
            "balanced_acc": self.balanced_acc,
            "top1": self.top1,
            "top5": self.top5,
            "missing_classes": list(self.missing_classes),
            "confusion": self.confusion.tolist(),
        }


@dataclass
class EvalReport:
    dataset: str
    trained_view: str
    class_count: int
    per_view: dict
    overall: ViewMetrics
    cross_view: dict
    common_classes: list
    rare_classes: list
    common_rare: dict
    trained_view_in_test: bool
    novel_views: list

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "trained_view": self.trained_view,
            "class_count": self.class_count,
            "per_view": {v: m.to_dict() for v, m in self.per_view.items()},
            "overall": self.overall.to_dict(),
            "cross_view": dict(self.cross_view),
            "common_classes": list(self.common_classes),
            "rare_classes": list(self.rare_classes),
            "common_rare": dict(self.common_rare),
            "trained_view_in_test": self.trained_view_in_test,
            "novel_views": list(self.novel_views),
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        """Flat per-view rows for plotting."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["view", "role", "sample_count", "balanced_acc", "top1", "top5"]
            )
            for view, m in self.per_view.items():
                role = "trained" if view == self.trained_view else "novel"
                writer.writerow(
                    [view, role, m.sample_count, f"{m.balanced_acc:.6f}", f"{m.top1:.6f}", f"{m.top5:.6f}"]
                )
            if self.cross_view:
                writer.writerow(
                    [
                        "mean_novel", "aggregate", "",
                        f"{self.cross_view['balanced_acc']:.6f}",
                        f"{self.cross_view['top1']:.6f}",
                        f"{self.cross_view['top5']:.6f}",
                    ]
                )


def _metrics_for(view, logits, labels, class_count):
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    preds = _argmax_tiebreak_low(logits)
    cm = confusion_matrix(preds, labels, class_count)
    missing = [int(c) for c in np.flatnonzero(cm.sum(axis=1) == 0)]
    return ViewMetrics(
        view=view,
        sample_count=len(labels),
        balanced_acc=balanced_accuracy(cm),
        top1=topk_accuracy(logits, labels, 1),
        top5=topk_accuracy(logits, labels, _top5_k(class_count)),
        confusion=cm,
        missing_classes=missing,
    )


def _argmax_tiebreak_low(logits):
    return np.asarray(logits).argmax(axis=1)


def split_common_rare(manifest):
    """Classes sorted by descending train-split frequency; the first
    ceil(C/2) are common, the rest rare. Frequency ties break by class id."""
    counts = {c: 0 for c in range(len(manifest.classes))}
    for record in manifest.split_records("train"):
        counts[record.class_id] += 1
    ranked = sorted(counts, key=lambda c: (-counts[c], c))
    cut = math.ceil(len(ranked) / 2)
    return ranked[:cut], ranked[cut:]


def _subset_metrics(logits, labels, class_ids, class_count):
    mask = np.isin(labels, class_ids)
    if not mask.any():
        return None
    logits_s = logits[mask]
    labels_s = labels[mask]
    preds = _argmax_tiebreak_low(logits_s)
    cm = confusion_matrix(preds, labels_s, class_count)
    return {
        "sample_count": int(mask.sum()),
        "balanced_acc": balanced_accuracy(cm),
        "top1": topk_accuracy(logits_s, labels_s, 1),
    }


def evaluate(head, probe, manifest, trained_view, num_clips=3, frames_per_clip=16, split="test"):
    """Full protocol over one split; returns an :class:`EvalReport`."""
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"manifest has no {split} split")
    if trained_view not in manifest.views:
        raise ValueError(f"trained view {trained_view!r} not in manifest views")
    class_count = len(manifest.classes)

    by_view = {}
    all_logits = []
    all_labels = []
    for record in records:  # manifest order: deterministic reduction
        logits = predict_video(head, probe, manifest, record, num_clips, frames_per_clip)
        by_view.setdefault(record.view, ([], []))
        by_view[record.view][0].append(logits)
        by_view[record.view][1].append(record.class_id)
        all_logits.append(logits)
        all_labels.append(record.class_id)

    per_view = {
        view: _metrics_for(view, np.array(lg), np.array(lb), class_count)
        for view, (lg, lb) in by_view.items()
    }
    overall = _metrics_for("overall", np.array(all_logits), np.array(all_labels), class_count)

    novel_views = [v for v in per_view if v != trained_view]
    cross_view = {}
    if novel_views:
        cross_view = {
            "views": novel_views,
            "balanced_acc": float(np.mean([per_view[v].balanced_acc for v in novel_views])),
            "top1": float(np.mean([per_view[v].top1 for v in novel_views])),
            "top5": float(np.mean([per_view[v].top5 for v in novel_views])),
        }

    common, rare = split_common_rare(manifest)
    all_logits_arr = np.array(all_logits)
    all_labels_arr = np.array(all_labels)
    common_rare = {}
    for name, ids in (("common", common), ("rare", rare)):
        subset = _subset_metrics(all_logits_arr, all_labels_arr, ids, class_count)
        if subset is not None:
            common_rare[name] = subset

    return EvalReport(
        dataset=manifest.dataset,
        trained_view=trained_view,
        class_count=class_count,
        per_view=per_view,
        overall=overall,
        cross_view=cross_view,
        common_classes=common,
        rare_classes=rare,
        common_rare=common_rare,
        trained_view_in_test=trained_view in per_view,
        novel_views=novel_views,
    )


def evaluate_split_balanced_acc(head, probe, manifest, records, num_clips=3, frames_per_clip=16):
    """Balanced accuracy over an explicit record list (trainer's val hook)."""
    preds = []
    labels = []
    for record in records:
        logits = predict_video(head, probe, manifest, record, num_clips, frames_per_clip)
        preds.append(int(logits.argmax()))
        labels.append(record.class_id)
    cm = confusion_matrix(preds, labels, len(manifest.classes))
    return balanced_accuracy(cm)


def random_baseline(class_count, n_samples=10000, seed=0):
    """Metrics of uniform-random logits on uniform labels (sanity anchor:
    both top-1 and balanced accuracy concentrate at 1/C)."""
    rng = np.random.default_rng(seed)
    logits = rng.uniform(size=(n_samples, class_count))
    labels = rng.integers(0, class_count, size=n_samples)
    preds = _argmax_tiebreak_low(logits)
    cm = confusion_matrix(preds, labels, class_count)
    return {
        "top1": topk_accuracy(logits, labels, 1),
        "top5": topk_accuracy(logits, labels, _top5_k(class_count)),
        "balanced_acc": balanced_accuracy(cm),
    }


def export_embeddings(head, probe, manifest, out_path, split="test",
                      num_clips=3, frames_per_clip=16):
    """One CSV row per video: fused feature, view, class id, prediction.

    Features come from the first equidistant clip (deterministic); the
    prediction uses the full multi-clip protocol.
    """
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"manifest has no {split} split")
    frames = 1 if manifest.is_clip_level else frames_per_clip
    rows = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dim = head.out_dim if not manifest.is_clip_level else None
        header_written = False
        for record in records:
            clips = sample_clips(manifest, record, num_clips, frames, "eval_equidistant")
            feature = head.fuse(clips[0]).data.astype(np.float64)
            logits = predict_video(head, probe, manifest, record, num_clips, frames_per_clip)
            if not header_written:
                dim = feature.shape[0]
                writer.writerow(
                    ["video_id", "view", "class_id", "prediction"]
                    + [f"f{i}" for i in range(dim)]
                )
                header_written = True
            writer.writerow(
                [record.video_id, record.view, record.class_id, int(logits.argmax())]
                + [repr(float(v)) for v in feature]
            )
            rows += 1
    return rows
