"""Binary link-sign classification metrics."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyInput


@dataclass
class EvalReport:
    auc: float
    binary_f1: float
    macro_f1: float
    micro_f1: float
    n_pos: int
    n_neg: int
    threshold: float = 0.5

    def as_dict(self):
        return asdict(self)


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    return scores, labels


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties, via mid-ranks."""
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def f1_suite(scores, labels, threshold=0.5):
    """(binary_f1, macro_f1, micro_f1) with predictions = score >= threshold."""
    scores, labels = _as_arrays(scores, labels)
    if scores.size == 0:
        raise EmptyInput("no predictions to score")
    pred = scores >= threshold
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    return f1_pos, (f1_pos + f1_neg) / 2.0, (tp + tn) / scores.size


def evaluate(scores, labels, threshold=0.5) -> EvalReport:
    """All four metrics; undefined ones (empty or single-class input) are NaN."""
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    if scores.size == 0:
        nan = float("nan")
        return EvalReport(nan, nan, nan, nan, 0, 0, threshold)
    binary, macro, micro = f1_suite(scores, labels, threshold)
    try:
        auc = auc_roc(scores, labels)
    except DegenerateLabels:
        auc = float("nan")
    return EvalReport(
        auc=auc,
        binary_f1=binary,
        macro_f1=macro,
        micro_f1=micro,
        n_pos=n_pos,
        n_neg=int(labels.size - n_pos),
        threshold=threshold,
    )
