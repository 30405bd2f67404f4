from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from app.autograd import ops
from app.autograd.tensor import DEFAULT_DTYPE, Parameter, Tensor, no_tape
from app.models.blocks import (
    AdParams, McbParams, ParamFactory, PointwiseKernel, ad_forward, iter_parameters, mcb_forward, named,
)
from app.schemas.config import ModelConfig
from app.schemas.records import Label
from app.utils.exceptions import DimensionError, LabelError
from app.utils.logger import get_loggers

logger = get_loggers("Network")

NUM_CLASSES = 2


@dataclass
class LinearHead:
    weight: Parameter
    bias: Parameter

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, v: Tensor) -> Tensor:
        return ops.linear(v, self.weight, self.bias)


@dataclass
class ForwardOutput:
    logits_main: Tensor
    logits_ad: Optional[Tensor] = None
    f_star: Optional[Tensor] = None


@dataclass
class LossBundle:
    l_cls1: Tensor
    l_l1: Tensor
    l_cls2: Tensor
    total: Tensor

    def as_row(self) -> Dict[str, float]:
        return {
            "l_cls1": self.l_cls1.item(),
            "l_l1": self.l_l1.item(),
            "l_cls2": self.l_cls2.item(),
            "total": self.total.item(),
        }


@dataclass
class Prediction:
    p_main: np.ndarray
    p_ad: Optional[np.ndarray]
    score: np.ndarray


class Model:
    """Stem, MCB stages, main classifier and the optional anomaly branch."""

    def __init__(self, cfg: ModelConfig, dtype=DEFAULT_DTYPE):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        factory = ParamFactory(cfg.seed, dtype)
        widths = cfg.widths
        self.stem: PointwiseKernel = factory.pointwise("stem", widths[0], cfg.in_channels)
        self.stages: List[McbParams] = [
            McbParams.build(factory, f"stage{i}.mcb", w, cfg.reduction_ratio, cfg.mode)
            for i, w in enumerate(widths)
        ]
        self.transitions: List[PointwiseKernel] = [
            factory.pointwise(f"stage{i}.transition", widths[i + 1], widths[i])
            for i in range(cfg.stages - 1)
        ]
        self.head = self._linear(factory, "head", widths[-1])
        self.ad: Optional[AdParams] = None
        self.ad_head: Optional[LinearHead] = None
        if cfg.ad_enabled:
            tap_width = widths[cfg.tap_stage]
            self.ad = AdParams.build(factory, "ad", tap_width, cfg.ad_units)
            self.ad_head = self._linear(factory, "ad_head", tap_width)
        self._named = named(self.parameters())

    @staticmethod
    def _linear(factory: ParamFactory, name: str, c_in: int) -> LinearHead:
        return LinearHead(factory.uniform(f"{name}.weight", (NUM_CLASSES, c_in), c_in),
                          factory.zeros(f"{name}.bias", (NUM_CLASSES,)))

    def parameters(self) -> List[Parameter]:
        return list(iter_parameters(self.stem, *self.stages, *self.transitions, self.head, self.ad, self.ad_head))

    def named_parameters(self) -> Dict[str, Parameter]:
        return dict(self._named)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._named.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._named) - set(state)
        unexpected = set(state) - set(self._named)
        if missing or unexpected:
            raise DimensionError(f"state does not fit model: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in self._named.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"parameter {name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(self.dtype, copy=True)

    def forward(self, x: Tensor) -> ForwardOutput:
        return forward(self, x)


def build_model(cfg: ModelConfig, dtype=DEFAULT_DTYPE) -> Model:
    model = Model(cfg, dtype)
    logger.debug(f"Built model with {len(model.parameters())} parameter tensors, widths {cfg.widths}")
    return model


def forward(m: Model, x: Tensor) -> ForwardOutput:
    cfg = m.cfg
    if x.data.ndim != 5 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected input (B,{cfg.in_channels},T,H,W), got {x.shape}")
    min_side = 2 ** (cfg.stages - 1) * 2
    if x.shape[3] < min_side or x.shape[4] < min_side:
        raise DimensionError(f"input {x.shape[3]}x{x.shape[4]} is too small for {cfg.stages} stages (need {min_side})")
    if x.dtype != m.dtype:
        x = Tensor(x.data.astype(m.dtype), requires_grad=x.requires_grad)
    h = m.stem(x)
    tap = None
    for i, stage in enumerate(m.stages):
        h = ops.relu(mcb_forward(h, stage))
        if i == cfg.tap_stage:
            tap = h
        if i < len(m.transitions):
            h = m.transitions[i](ops.mean_pool2x2(h))
    out = ForwardOutput(logits_main=m.head(ops.global_avg_pool(h)))
    if m.ad is not None:
        out.f_star = ad_forward(tap, m.ad)
        out.logits_ad = m.ad_head(ops.global_avg_pool(out.f_star))
    return out


def compute_loss(logits_main: Tensor, logits_ad: Optional[Tensor], f_star: Optional[Tensor], labels,
                 use_l1_loss: bool = True, use_ad_cls_loss: bool = True) -> LossBundle:
    """Main cross-entropy + L1 on real samples' clues + anomaly-branch cross-entropy.

    Real faces (label 0) are the positive set of the L1 term; a batch without any
    real sample contributes 0.
    """
    y = np.asarray(labels)
    if y.ndim != 1 or y.size and not np.isin(y, (Label.REAL, Label.FAKE)).all():
        raise LabelError(f"labels must be 0 (real) or 1 (fake), got {y!r}")
    y = y.astype(np.int64)
    l_cls1 = ops.softmax_cross_entropy(logits_main, y)
    zero = Tensor(np.zeros((), dtype=l_cls1.dtype))
    l_l1 = zero
    l_cls2 = zero
    if f_star is not None and use_l1_loss:
        if f_star.shape[0] != y.size:
            raise DimensionError(f"clue map batch {f_star.shape[0]} != {y.size} labels")
        l_l1 = ops.l1_mean(f_star, select=(y == Label.REAL))
    if logits_ad is not None and use_ad_cls_loss:
        l_cls2 = ops.softmax_cross_entropy(logits_ad, y)
    total = ops.add(ops.add(l_cls1, l_l1), l_cls2)
    return LossBundle(l_cls1, l_l1, l_cls2, total)


def combine_heads(logits_main: np.ndarray, logits_ad: Optional[np.ndarray] = None) -> Prediction:
    """Probability of fake, averaged over the two heads when the anomaly branch exists."""
    p_main = ops.softmax(np.asarray(logits_main, dtype=np.float64))
    if logits_ad is None:
        return Prediction(p_main, None, p_main[:, Label.FAKE].copy())
    p_ad = ops.softmax(np.asarray(logits_ad, dtype=np.float64))
    score = (p_main[:, Label.FAKE] + p_ad[:, Label.FAKE]) / 2
    return Prediction(p_main, p_ad, score)


def predict(m: Model, x: Tensor) -> Prediction:
    with no_tape():
        out = forward(m, x)
    return combine_heads(out.logits_main.data, None if out.logits_ad is None else out.logits_ad.data)
