"""Task evaluation metrics."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def rank1_accuracy(query_feats, gallery_feats, query_ids, gallery_ids) -> float:
    """Fraction of queries whose Euclidean-nearest gallery vector has the same identity.

    Ties go to the lowest gallery index.
    """
    q = np.asarray(query_feats, dtype=np.float64)
    g = np.asarray(gallery_feats, dtype=np.float64)
    if len(q) == 0:
        raise ContractError("empty query set")
    if len(g) == 0:
        raise ContractError("empty gallery")
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"feature widths differ: {q.shape[1]} vs {g.shape[1]}")
    d2 = ((q[:, None, :] - g[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argmin(d2, axis=1)
    return float(np.mean(np.asarray(gallery_ids)[nearest] == np.asarray(query_ids)))


def classification_accuracy(probs, labels) -> float:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape[0] != labels.shape[0]:
        raise ShapeError(f"{probs.shape[0]} predictions for {labels.shape[0]} labels")
    return float(np.mean(np.argmax(probs, axis=1) == labels))
