"""B-cubed precision/recall/F1 between a predicted clustering and gold labels.

Per item, precision is the fraction of its predicted cluster sharing its gold
class and recall the fraction of its gold class sharing its cluster (the item
counts itself); scores are unweighted means over items.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment


@dataclass(frozen=True)
class B3Scores:
    precision: float
    recall: float
    f1: float

    def as_dict(self):
        return {"b3_precision": self.precision, "b3_recall": self.recall, "b3_f1": self.f1}


def _dense(values) -> np.ndarray:
    ids: dict = {}
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        if v is None:
            raise ValueError(f"item {i} has no gold label")
        if v not in ids:
            ids[v] = len(ids)
        out[i] = ids[v]
    return out


def b3_scores(pred: ClusterAssignment | np.ndarray, gold) -> B3Scores:
    """Element-averaged B-cubed scores of a clustering against gold classes."""
    pred_ids = pred.cluster_ids if isinstance(pred, ClusterAssignment) else np.asarray(pred)
    n = len(pred_ids)
    if n == 0:
        raise ValueError("cannot score an empty clustering")
    if len(gold) != n:
        raise ValueError(f"length mismatch: {n} predictions vs {len(gold)} gold labels")
    pred_d = _dense(list(pred_ids))
    gold_d = _dense(list(gold))
    table = np.zeros((pred_d.max() + 1, gold_d.max() + 1))
    np.add.at(table, (pred_d, gold_d), 1.0)
    inter = table[pred_d, gold_d]
    pred_sizes = np.bincount(pred_d).astype(np.float64)
    gold_sizes = np.bincount(gold_d).astype(np.float64)
    precision = float(np.mean(inter / pred_sizes[pred_d]))
    recall = float(np.mean(inter / gold_sizes[gold_d]))
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return B3Scores(precision, recall, f1)
