"""The three output heads and the code algebra around them.

The code generator emits soft codes in (-1, 1) via tanh(a*h) where the
aging parameter a sharpens across epochs; bit space is the affine map
(soft+1)/2.  The masker emits soft masks in (0, 1) via the shifted
tanh(h + 1/(a+1)), so masks start near one and earn their zeros.  The
positional base anneals from 2 toward 1 so early bits dominate early
training and all positions equalise late.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .nn import ParamStore, mlp_apply


@dataclass
class TrainSchedule:
    """Aging and positional-base state for one epoch."""

    a: float
    base: float
    epoch: int = 0
    n_epochs: int = 1

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("aging parameter must be >= 0")
        if not (1.0 <= self.base <= 2.0):
            raise ValueError(f"positional base must lie in [1, 2], got {self.base}")

    @classmethod
    def at_epoch(cls, epoch: int, n_epochs: int, a_start: float = 1.0,
                 a_max: float = 10.0) -> "TrainSchedule":
        """base = 2 - epoch/n_epochs; aging grows linearly from a_start to a_max."""
        if n_epochs <= 0:
            return cls(a=a_start, base=2.0, epoch=epoch, n_epochs=max(n_epochs, 1))
        frac = epoch / n_epochs
        return cls(
            a=a_start + frac * (a_max - a_start),
            base=2.0 - frac,
            epoch=epoch,
            n_epochs=n_epochs,
        )


@dataclass
class BinaryCode:
    """Soft code in (-1, 1) plus its bit-space image in (0, 1)."""

    soft: Tensor
    bits: Tensor

    @property
    def length(self) -> int:
        return self.soft.data.shape[-1]


@dataclass
class MaskSequence:
    """Soft mask in (0, 1), its base^k-weighted form, and effective lengths."""

    soft_mask: Tensor
    weighted: Tensor
    base: float

    @property
    def length(self) -> int:
        return self.soft_mask.data.shape[-1]

    def eff_lengths(self) -> np.ndarray:
        """Per sample, the position of the last alive (>0.5) mask bit."""
        hard = self.soft_mask.data > 0.5
        if hard.ndim == 1:
            hard = hard[None, :]
        idx = np.arange(1, hard.shape[1] + 1)
        return np.where(hard.any(axis=1), (hard * idx).max(axis=1), 0)


def _base_powers(length: int, base: float) -> np.ndarray:
    # running product, positions k = 1..L; L is capped at 24 upstream
    return np.cumprod(np.full(length, float(base)))


def code_head(features, params: ParamStore, schedule: TrainSchedule) -> BinaryCode:
    """Soft code tanh(a * mlp(features)); bits are (soft+1)/2."""
    if schedule.a <= 0:
        raise ValueError("code head needs aging parameter a > 0")
    h = mlp_apply(params, as_tensor(features))
    soft = ad.tanh(ad.mul(h, schedule.a))
    bits = ad.mul(ad.add(soft, 1.0), 0.5)
    return BinaryCode(soft=soft, bits=bits)


def mask_head(features, params: ParamStore, schedule: TrainSchedule) -> MaskSequence:
    """Soft mask (tanh(h + 1/(a+1)) + 1)/2, weighted by base^k."""
    h = mlp_apply(params, as_tensor(features))
    shift = 1.0 / (schedule.a + 1.0)
    soft_mask = ad.mul(ad.add(ad.tanh(ad.add(h, shift)), 1.0), 0.5)
    powers = _base_powers(soft_mask.data.shape[-1], schedule.base)
    return MaskSequence(soft_mask=soft_mask, weighted=ad.mul(soft_mask, powers),
                        base=schedule.base)


def positional_value(code: BinaryCode, mask: MaskSequence, base: float) -> Tensor:
    """Numeral value sum_k mask_k * bits_k / base^k (per sample)."""
    if not (1.0 <= base <= 2.0):
        raise ValueError(f"positional base must lie in [1, 2], got {base}")
    length = code.length
    if mask.length != length:
        raise ValueError(f"code length {length} != mask length {mask.length}")
    inv = 1.0 / _base_powers(length, base)
    prod = ad.mul(ad.mul(code.bits, mask.soft_mask), inv)
    axis = None if prod.data.ndim == 1 else 1
    return ad.tsum(prod, axis=axis)


def truncate(code: BinaryCode, mask: MaskSequence) -> Tensor:
    """Hadamard product bits * soft_mask."""
    if code.length != mask.length:
        raise ValueError(f"code length {code.length} != mask length {mask.length}")
    return ad.mul(code.bits, mask.soft_mask)


def code_embedding(code: BinaryCode, mask: MaskSequence, base: float,
                   mode: str = "vector") -> Tensor:
    """Truncated code as contrastive input.

    "vector" keeps per-position values bits_k*mask_k/base^k; "scalar"
    collapses to the positional numeral (one column).
    """
    if mode == "vector":
        inv = 1.0 / _base_powers(code.length, base)
        return ad.mul(truncate(code, mask), inv)
    if mode == "scalar":
        v = positional_value(code, mask, base)
        if v.data.ndim == 0:
            raise ValueError("scalar code embedding needs a batch of codes")
        return _as_column(v)
    raise ValueError(f"unknown code embedding mode {mode!r}")


def _as_column(v: Tensor) -> Tensor:
    out = Tensor(v.data[:, None], parents=(v,))
    out._bwd = lambda g: (g[:, 0],)
    return out


def categorizer(truncated, params: ParamStore) -> Tensor:
    """Known-class logits from the truncated code."""
    return mlp_apply(params, as_tensor(truncated))


def harden(code: BinaryCode, mask: MaskSequence):
    """Hard bit strings: bit 1 iff soft > 0, cut at the first mask <= 0.5."""
    soft = code.soft.data
    m = mask.soft_mask.data
    single = soft.ndim == 1
    soft2 = soft[None, :] if single else soft
    m2 = m[None, :] if single else m
    out = []
    for srow, mrow in zip(soft2, m2):
        bits = []
        for s, mv in zip(srow, mrow):
            if mv <= 0.5:
                break
            bits.append("1" if s > 0 else "0")
        out.append("".join(bits))
    return out[0] if single else out
