"""Segmentation metrics with exactly reproducible integer-count arithmetic.

Precision/recall/F1 and IoU come from pixel confusion counts; the dataset
threshold sweeps binarize probability maps at a fixed grid. Every number
here must match a brute-force loop over pixels bit for bit, so counts stay
integers until the final division and zero denominators resolve to 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    """p_ab = pixels with true class a, predicted class b."""
    p_00: int
    p_01: int
    p_10: int
    p_11: int

    @property
    def total(self) -> int:
        return self.p_00 + self.p_01 + self.p_10 + self.p_11


def _as_binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if not np.all((arr == 0) | (arr == 1)):
        raise ContractError(f"{name} must be binary (0/1)")
    return arr.astype(np.int64)


def confusion(mask, label) -> ConfusionCounts:
    m = _as_binary(mask, "mask")
    y = _as_binary(label, "label")
    if m.shape != y.shape:
        raise ShapeError(f"mask {m.shape} vs label {y.shape}")
    return ConfusionCounts(
        p_00=int(np.sum((y == 0) & (m == 0))),
        p_01=int(np.sum((y == 0) & (m == 1))),
        p_10=int(np.sum((y == 1) & (m == 0))),
        p_11=int(np.sum((y == 1) & (m == 1))))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _prf1_from_counts(tp: int, fp: int, fn: int) -> tuple:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def prf1(mask, label) -> tuple:
    """(precision, recall, F1) on the positive class; empty denominators
    give 0 rather than NaN."""
    c = confusion(mask, label)
    return _prf1_from_counts(c.p_11, c.p_01, c.p_10)


def miou(mask, label) -> float:
    """Mean of background IoU and crack IoU."""
    c = confusion(mask, label)
    iou_bg = _ratio(c.p_00, c.p_00 + c.p_01 + c.p_10)
    iou_crack = _ratio(c.p_11, c.p_11 + c.p_01 + c.p_10)
    return 0.5 * (iou_bg + iou_crack)


def threshold_grid(n: int = 99) -> np.ndarray:
    """Evenly spaced binarization thresholds 0.01 .. 0.99."""
    return np.arange(1, n + 1) / (n + 1.0)


def _sweep_counts(prob_maps, labels, thresholds):
    """Per threshold, per image: (tp, fp, fn) from prob >= t."""
    if len(prob_maps) == 0:
        raise ContractError("empty image set")
    if len(prob_maps) != len(labels):
        raise ContractError(f"{len(prob_maps)} probability maps vs "
                            f"{len(labels)} labels")
    ts = np.asarray(thresholds, dtype=np.float64)
    if ts.size == 0:
        raise ConfigError("empty threshold grid")
    if np.any((ts <= 0.0) | (ts >= 1.0)):
        raise ConfigError("thresholds must lie strictly inside (0, 1)")
    if np.unique(ts).size != ts.size:
        raise ConfigError("duplicate thresholds")
    counts = np.zeros((ts.size, len(prob_maps), 3), dtype=np.int64)
    for i, (pm, lb) in enumerate(zip(prob_maps, labels)):
        pm = np.asarray(pm, dtype=np.float64)
        y = _as_binary(lb, "label")
        if pm.shape != y.shape:
            raise ShapeError(f"probability map {pm.shape} vs label {y.shape}")
        for k, t in enumerate(ts):
            m = pm >= t
            counts[k, i, 0] = np.sum(m & (y == 1))
            counts[k, i, 1] = np.sum(m & (y == 0))
            counts[k, i, 2] = np.sum(~m & (y == 1))
    return counts


def ods(prob_maps, labels, thresholds=None, mean_f1: bool = False) -> float:
    """Best dataset-level F1 over a shared threshold.

    Default pools confusion counts over all images before computing F1 at
    each threshold; mean_f1=True instead averages per-image F1 values, the
    other convention in circulation.
    """
    ts = threshold_grid() if thresholds is None else thresholds
    counts = _sweep_counts(prob_maps, labels, ts)
    best = 0.0
    for k in range(counts.shape[0]):
        if mean_f1:
            f1s = [_prf1_from_counts(*counts[k, i]) for i in
                   range(counts.shape[1])]
            score = float(np.mean([f[2] for f in f1s]))
        else:
            tp, fp, fn = counts[k].sum(axis=0)
            score = _prf1_from_counts(int(tp), int(fp), int(fn))[2]
        if score > best:
            best = score
    return best


def ois(prob_maps, labels, thresholds=None) -> float:
    """Mean over images of the best per-image F1 over thresholds."""
    ts = threshold_grid() if thresholds is None else thresholds
    counts = _sweep_counts(prob_maps, labels, ts)
    per_image = []
    for i in range(counts.shape[1]):
        best = 0.0
        for k in range(counts.shape[0]):
            f1 = _prf1_from_counts(*(int(c) for c in counts[k, i]))[2]
            if f1 > best:
                best = f1
        per_image.append(best)
    return float(np.mean(per_image))
