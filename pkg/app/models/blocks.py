"""Spatio-temporal building blocks.

CSTM fuses adjacent frames and embeds space, CMM takes a first-order motion
difference through the pre-modelling kernel ``kpm``, MCM applies the same
``kpm`` a second time to the motion feature, and MCB sums whichever of these
the configured mode asks for. ``ad_forward`` is the residual anomaly branch.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional

import numpy as np

from app.autograd import ops
from app.autograd.tensor import DEFAULT_DTYPE, Parameter, Tensor
from app.schemas.config import MotionMode
from app.utils.exceptions import DimensionError


@dataclass
class PointwiseKernel:
    weight: Parameter
    bias: Parameter

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_pointwise(x, self.weight, self.bias)


class ParamFactory:
    """Creates named parameters; each name draws from its own seeded stream.

    Weights are uniform in ``+-sqrt(3 / fan_in)`` (unit gain on the second
    moment) and biases start at zero, so a parameter's initial value depends
    only on (seed, name, shape).
    """

    def __init__(self, seed: int, dtype=DEFAULT_DTYPE):
        self.seed = seed
        self.dtype = dtype

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def uniform(self, name: str, shape, fan_in: int) -> Parameter:
        bound = np.sqrt(3.0 / fan_in)
        data = self._rng(name).uniform(-bound, bound, size=shape)
        return Parameter(name, data.astype(self.dtype))

    def zeros(self, name: str, shape) -> Parameter:
        return Parameter(name, np.zeros(shape, dtype=self.dtype))

    def pointwise(self, name: str, c_out: int, c_in: int) -> PointwiseKernel:
        return PointwiseKernel(self.uniform(f"{name}.weight", (c_out, c_in), c_in),
                               self.zeros(f"{name}.bias", (c_out,)))

    def zero_pointwise(self, name: str, c_out: int, c_in: int) -> PointwiseKernel:
        return PointwiseKernel(self.zeros(f"{name}.weight", (c_out, c_in)),
                               self.zeros(f"{name}.bias", (c_out,)))

    def channelwise_spatial(self, name: str, channels: int) -> Parameter:
        return self.uniform(name, (channels, 3, 3), 9)

    def near_identity_spatial(self, name: str, channels: int, spread: float = 0.1) -> Parameter:
        """Centre tap 1 plus uniform noise in ``+-spread``."""
        data = self._rng(name).uniform(-spread, spread, size=(channels, 3, 3))
        data[:, 1, 1] += 1.0
        return Parameter(name, data.astype(self.dtype))

    def channelwise_temporal(self, name: str, channels: int) -> Parameter:
        return self.uniform(name, (channels, 3), 3)


def reduced_channels(channels: int, reduction_ratio: int) -> int:
    if channels >= reduction_ratio and channels % reduction_ratio:
        raise DimensionError(f"{channels} channels are not divisible by reduction ratio {reduction_ratio}")
    return max(channels // reduction_ratio, 1)


@dataclass
class McbParams:
    channels: int
    mode: MotionMode
    temporal_k: Parameter
    spatial_k: Parameter
    down_k: Optional[PointwiseKernel] = None
    kpm: Optional[Parameter] = None
    up_m: Optional[PointwiseKernel] = None
    up_mm: Optional[PointwiseKernel] = None

    @classmethod
    def build(cls, factory: ParamFactory, prefix: str, channels: int,
              reduction_ratio: int, mode: MotionMode) -> "McbParams":
        mode = MotionMode(mode)
        params = cls(
            channels=channels,
            mode=mode,
            temporal_k=factory.channelwise_temporal(f"{prefix}.temporal_k", channels),
            spatial_k=factory.channelwise_spatial(f"{prefix}.spatial_k", channels),
        )
        if mode is MotionMode.CSTM_ONLY:
            return params
        c_r = reduced_channels(channels, reduction_ratio)
        params.down_k = factory.pointwise(f"{prefix}.down_k", c_r, channels)
        # starts close to a plain frame difference
        params.kpm = factory.near_identity_spatial(f"{prefix}.kpm", c_r)
        params.up_m = factory.pointwise(f"{prefix}.up_m", channels, c_r)
        if mode is MotionMode.MCB:
            params.up_mm = factory.pointwise(f"{prefix}.up_mm", channels, c_r)
        return params

    @property
    def reduced(self) -> int:
        return self.kpm.shape[0] if self.kpm is not None else 0

    def parameters(self) -> List[Parameter]:
        out = [self.temporal_k, self.spatial_k]
        if self.down_k is not None:
            out += self.down_k.parameters() + [self.kpm] + self.up_m.parameters()
        if self.up_mm is not None:
            out += self.up_mm.parameters()
        return out


@dataclass
class AdUnit:
    cw_k: Parameter
    pw_k: PointwiseKernel

    def parameters(self) -> List[Parameter]:
        return [self.cw_k] + self.pw_k.parameters()


@dataclass
class AdParams:
    channels: int
    units: List[AdUnit] = field(default_factory=list)

    @classmethod
    def build(cls, factory: ParamFactory, prefix: str, channels: int, n_units: int) -> "AdParams":
        units = [
            AdUnit(factory.channelwise_spatial(f"{prefix}.unit{i}.cw_k", channels),
                   factory.zero_pointwise(f"{prefix}.unit{i}.pw_k", channels, channels))
            for i in range(n_units)
        ]
        return cls(channels, units)

    def parameters(self) -> List[Parameter]:
        return [p for unit in self.units for p in unit.parameters()]


class CmmOutput(NamedTuple):
    f_m_raw: Tensor
    f_m_up: Tensor


class McmOutput(NamedTuple):
    f_m_up: Tensor
    f_mm_up: Tensor
    f_m_raw: Tensor
    f_mm_raw: Tensor


def _check_channels(x: Tensor, channels: int, block: str) -> None:
    if x.data.ndim != 5 or x.shape[1] != channels:
        raise DimensionError(f"{block}: expected {channels} channels, got input of shape {x.shape}")


def _require_motion(p: McbParams, block: str) -> None:
    if p.down_k is None:
        raise DimensionError(f"{block}: block built in mode {p.mode.value} has no motion kernels")


def cstm_forward(f: Tensor, p: McbParams) -> Tensor:
    _check_channels(f, p.channels, "cstm")
    fused = ops.conv_channelwise_temporal(f, p.temporal_k)
    return ops.conv_channelwise_spatial(fused, p.spatial_k)


def cmm_forward(f: Tensor, p: McbParams) -> CmmOutput:
    _check_channels(f, p.channels, "cmm")
    _require_motion(p, "cmm")
    f_d = p.down_k(f)
    f_pm = ops.conv_channelwise_spatial(f_d, p.kpm)
    f_m_raw = ops.shifted_subtract(f_d, f_pm)
    return CmmOutput(f_m_raw, p.up_m(f_m_raw))


def mcm_forward(f: Tensor, p: McbParams) -> McmOutput:
    if p.up_mm is None:
        raise DimensionError(f"mcm: block built in mode {p.mode.value} has no consistency kernels")
    f_m_raw, f_m_up = cmm_forward(f, p)
    # same kpm as the first difference
    f_pmm = ops.conv_channelwise_spatial(f_m_raw, p.kpm)
    f_mm_raw = ops.shifted_subtract(f_m_raw, f_pmm)
    return McmOutput(f_m_up, p.up_mm(f_mm_raw), f_m_raw, f_mm_raw)


def mcb_forward(f: Tensor, p: McbParams) -> Tensor:
    f_s = cstm_forward(f, p)
    if p.mode is MotionMode.CSTM_ONLY:
        return f_s
    if p.mode is MotionMode.STM:
        return ops.add(f_s, cmm_forward(f, p).f_m_up)
    if p.mode is MotionMode.MCB:
        motion = mcm_forward(f, p)
        return ops.add(ops.add(f_s, motion.f_m_up), motion.f_mm_up)
    raise ValueError(f"unknown block mode {p.mode!r}")


def ad_forward(f_out: Tensor, p: AdParams) -> Tensor:
    _check_channels(f_out, p.channels, "ad")
    x = f_out
    for unit in p.units:
        branch = ops.relu(ops.conv_channelwise_spatial(x, unit.cw_k))
        x = ops.add(x, unit.pw_k(branch))
    return x


def named(params: List[Parameter]) -> Dict[str, Parameter]:
    out: Dict[str, Parameter] = {}
    for p in params:
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p
    return out


def iter_parameters(*groups) -> Iterator[Parameter]:
    for group in groups:
        if group is not None:
            yield from group.parameters()
