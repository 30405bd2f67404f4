from __future__ import annotations

from typing import Dict, Optional

import numpy as np
import pandas as pd

from app.autograd.tensor import Tensor, no_tape
from app.models.network import Model, forward, predict
from app.schemas.records import Label, ScoredSet
from app.services.synth_service import SequenceDataset
from app.utils.exceptions import StorageError, UndefinedMetricError
from app.utils.logger import get_loggers

logger = get_loggers("MetricsEngine")


def accuracy(s: ScoredSet, threshold: float = 0.5) -> float:
    scores = np.asarray(s.scores, dtype=np.float64)
    labels = np.asarray(s.labels)
    return float(np.mean((scores >= threshold) == (labels == Label.FAKE)))


def mann_whitney_u(scores, labels) -> float:
    """U statistic of the fake class: pairs where fake outscores real, ties counted 0.5."""
    ranks = pd.Series(np.asarray(scores, dtype=np.float64)).rank(method="average").to_numpy()
    fake = np.asarray(labels) == Label.FAKE
    n_fake = int(fake.sum())
    return float(ranks[fake].sum() - n_fake * (n_fake + 1) / 2)


def auc(s: ScoredSet) -> float:
    labels = np.asarray(s.labels)
    n_fake = int((labels == Label.FAKE).sum())
    n_real = labels.size - n_fake
    if not n_fake or not n_real:
        raise UndefinedMetricError("AUC needs at least one real and one fake sample")
    return mann_whitney_u(s.scores, labels) / (n_fake * n_real)


class MetricsEngine:
    """Batched inference over a dataset plus the ACC/AUC and clue-map summaries."""

    def __init__(self, model: Model, batch_size: int = 16):
        self.model = model
        self.batch_size = batch_size

    def _batches(self, n: int):
        for start in range(0, n, self.batch_size):
            yield slice(start, min(start + self.batch_size, n))

    def score_dataset(self, tensors: np.ndarray, labels: np.ndarray) -> ScoredSet:
        scores = [predict(self.model, Tensor(tensors[sl])).score for sl in self._batches(len(labels))]
        return ScoredSet(scores=np.concatenate(scores).tolist(), labels=np.asarray(labels).tolist())

    def evaluate(self, dataset: SequenceDataset, threshold: float = 0.5) -> Dict[str, float]:
        scored = self.score_dataset(dataset.tensors, dataset.labels)
        metrics = {"acc": accuracy(scored, threshold), "auc": auc(scored)}
        logger.info(f"Evaluated {len(dataset)} sequences: acc={metrics['acc']:.4f} auc={metrics['auc']:.4f}")
        return metrics

    def ad_clue_energy(self, tensors: np.ndarray, labels: np.ndarray) -> Dict[str, Optional[float]]:
        """Mean per-sample L1 norm of the clue map F*, per class."""
        if self.model.ad is None:
            raise ValueError("model has no anomaly branch")
        norms = []
        with no_tape():
            for sl in self._batches(len(labels)):
                f_star = forward(self.model, Tensor(tensors[sl])).f_star.data.astype(np.float64)
                norms.append(np.abs(f_star).reshape(f_star.shape[0], -1).sum(axis=1))
        norms = np.concatenate(norms)
        labels = np.asarray(labels)
        energy = {}
        for label in Label:
            mask = labels == label
            energy[label.name.lower()] = float(norms[mask].mean()) if mask.any() else None
        logger.debug(f"AD clue energy: {energy}")
        return energy


def write_report(path: str, metrics: Dict[str, float]) -> None:
    frame = pd.DataFrame(list(metrics.items()), columns=["metric", "value"])
    try:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise StorageError(f"cannot write report {path}: {e}") from e
    logger.info(f"Report written to {path}")
