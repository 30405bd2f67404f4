from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from app.autograd.tensor import Parameter, Tape, Tensor, backward
from app.models.network import Model, compute_loss, forward
from app.schemas.config import TrainConfig
from app.schemas.records import Label
from app.services.checkpoint_service import Checkpoint
from app.services.synth_service import SequenceDataset
from app.utils.exceptions import DivergenceError, GmlError, LabelError, MissingGradientError, StorageError
from app.utils.logger import get_loggers

logger = get_loggers("TrainingService")

LOG_COLUMNS = ["step", "l_cls1", "l_l1", "l_cls2", "total"]


class BatchSampler:
    """Epoch-wise shuffle without replacement; batch ``step`` depends only on (seed, step)."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise ValueError("cannot sample batches from an empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.batches_per_epoch = math.ceil(n / batch_size)
        self._epoch = -1
        self._order: Optional[np.ndarray] = None

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch != self._epoch:
            self._order = np.random.default_rng([self.seed, epoch]).permutation(self.n)
            self._epoch = epoch
        return self._order

    def batch(self, step: int) -> np.ndarray:
        epoch, k = divmod(step, self.batches_per_epoch)
        order = self._permutation(epoch)
        return order[k * self.batch_size:(k + 1) * self.batch_size]


def sgd_step(params: Dict[str, Parameter], cfg: TrainConfig,
             velocity: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """``v = momentum*v + grad + wd*value``; ``value -= lr*v``. Returns the new velocity."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for {', '.join(missing)}")
    velocity = {} if velocity is None else velocity
    updated = {}
    for name, p in params.items():
        v = p.grad + cfg.weight_decay * p.data
        if cfg.momentum and name in velocity:
            v = cfg.momentum * velocity[name] + v
        v = v.astype(p.data.dtype, copy=False)
        p.data = p.data - cfg.lr * v
        updated[name] = v
    return updated


def clip_gradients(params: Dict[str, Parameter], max_norm: Optional[float]) -> float:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params.values()))
    if not math.isfinite(total):
        raise DivergenceError(f"gradient norm is {total}")
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            p.grad = (p.grad * scale).astype(p.grad.dtype, copy=False)
    return total


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: pd.DataFrame


def _should_log(step_no: int, cfg: TrainConfig) -> bool:
    return step_no == 1 or step_no % cfg.log_every == 0 or step_no == cfg.steps


def _check_compatible(model: Model, dataset: SequenceDataset, cfg: TrainConfig) -> None:
    if model.cfg.mode != cfg.mode or model.cfg.ad_enabled != cfg.ad_enabled:
        raise ValueError(
            f"model ({model.cfg.mode.value}, ad={model.cfg.ad_enabled}) does not match "
            f"training config ({cfg.mode.value}, ad={cfg.ad_enabled})")
    if not len(dataset):
        raise ValueError("training dataset is empty")
    if cfg.ad_enabled:
        present = set(np.unique(dataset.labels).tolist())
        if cfg.use_l1_loss and Label.REAL not in present:
            raise LabelError("the clue-map L1 term needs real samples, dataset has none")
        if present != {Label.REAL, Label.FAKE}:
            logger.warning(f"Training the anomaly branch on a single class {sorted(present)}")


def train(model: Model, dataset: SequenceDataset, cfg: TrainConfig,
          resume: Optional[Checkpoint] = None) -> TrainResult:
    """Run SGD up to ``cfg.steps`` total steps, optionally continuing a checkpoint."""
    _check_compatible(model, dataset, cfg)
    start, sampler_seed, velocity = 0, cfg.seed, None
    if resume is not None:
        if resume.step > cfg.steps:
            raise ValueError(f"checkpoint is at step {resume.step}, beyond the requested {cfg.steps}")
        model.load_state_dict(resume.params)
        start, sampler_seed = resume.step, resume.rng_state
        velocity = None if resume.velocity is None else {k: v.copy() for k, v in resume.velocity.items()}
        logger.info(f"Resuming from step {start}")
    sampler = BatchSampler(len(dataset), cfg.batch_size, sampler_seed)
    params = model.named_parameters()
    rows: List[Dict[str, float]] = []
    logger.info(f"Training {cfg.mode.value} (ad={cfg.ad_enabled}) for {cfg.steps - start} steps "
                f"on {len(dataset)} sequences, batch {cfg.batch_size}, lr {cfg.lr}")

    for step in range(start, cfg.steps):
        step_no = step + 1
        idx = sampler.batch(step)
        labels = dataset.labels[idx]
        try:
            model.zero_grad()
            with Tape() as tape:
                out = forward(model, Tensor(dataset.tensors[idx]))
                losses = compute_loss(out.logits_main, out.logits_ad, out.f_star, labels,
                                      use_l1_loss=cfg.use_l1_loss, use_ad_cls_loss=cfg.use_ad_cls_loss)
            if not math.isfinite(losses.total.item()):
                raise DivergenceError(f"non-finite loss {losses.as_row()}")
            backward(tape, losses.total)
            # parameters outside this step's graph (disabled loss terms, all-fake batch)
            for p in params.values():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            grad_norm = clip_gradients(params, cfg.grad_clip)
            velocity = sgd_step(params, cfg, velocity if cfg.momentum else None)
        except GmlError as e:
            logger.error(f"Training failed at step {step_no}: {e}")
            raise GmlError(f"step {step_no}: {e}") from e
        if _should_log(step_no, cfg):
            row = {"step": step_no, **losses.as_row()}
            rows.append(row)
            logger.info(f"step {step_no}: total={row['total']:.5f} l_cls1={row['l_cls1']:.5f} "
                        f"l_l1={row['l_l1']:.5f} l_cls2={row['l_cls2']:.5f} grad_norm={grad_norm:.3e}")

    ckpt = Checkpoint(
        params=model.state_dict(),
        step=cfg.steps,
        rng_state=sampler_seed,
        velocity=velocity if cfg.momentum else None,
        model_config=model.cfg,
    )
    if cfg.momentum and ckpt.velocity is None:
        ckpt.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}
    log = pd.DataFrame(rows, columns=LOG_COLUMNS).astype({"step": "int64"})
    return TrainResult(ckpt, log)


def write_metrics_log(path: str, log: pd.DataFrame) -> None:
    try:
        log.to_csv(path, index=False, columns=LOG_COLUMNS, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise StorageError(f"cannot write metrics log {path}: {e}") from e
    logger.info(f"Metrics log with {len(log)} rows written to {path}")
