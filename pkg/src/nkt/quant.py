"""Mu-law companding and uniform tokenization with an exact inverse.

Pipeline: standardize each channel, clip to +/- clip, divide by the
per-channel max-abs of the clipped values, compand with the mu-law
curve, then bin [-1, 1] uniformly into Q tokens. Dequantization walks
the same steps backwards from bin centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MultichannelSeries, NormParams, apply_norm, standardize
from .errors import DomainError, TokenError

__all__ = ["QuantizedSeries", "mulaw", "quantize", "dequantize", "dequantize_tokens"]


@dataclass(frozen=True)
class QuantizedSeries:
    """C x T token indices in [0, Q) plus the parameters to invert them."""

    tokens: np.ndarray
    q: int
    mu: float
    norm: NormParams
    fs: float

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise TokenError(f"tokens must be 2-D (C, T), got ndim={tokens.ndim}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.q):
            raise TokenError(f"tokens must lie in [0, {self.q})")
        tokens = tokens.copy()
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @property
    def channels(self) -> int:
        return self.tokens.shape[0]

    @property
    def timesteps(self) -> int:
        return self.tokens.shape[1]


def mulaw(x, mu: float = 255.0, inverse: bool = False):
    """Mu-law companding curve and its exact analytic inverse.

    Forward maps (-1, 1) onto itself with sign(x) ln(1 + mu |x|) / ln(1 + mu);
    inverse is sign(y) ((1 + mu)^|y| - 1) / mu. Both are odd functions.

    Raises
    ------
    DomainError
        If any input magnitude exceeds 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and np.max(np.abs(x)) > 1.0 + 1e-12:
        raise DomainError(f"mu-law input magnitude {np.max(np.abs(x))} exceeds 1")
    if inverse:
        return np.sign(x) * ((1.0 + mu) ** np.abs(x) - 1.0) / mu
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def quantize(
    series: MultichannelSeries,
    q: int = 256,
    mu: float = 255.0,
    clip: float = 4.0,
    norm: NormParams | None = None,
) -> QuantizedSeries:
    """Tokenize a continuous series into Q mu-law bins per channel.

    Values exactly on a bin boundary take the upper bin; the value 1.0
    clamps to token Q - 1. Pass norm (with mean, std, and optionally
    maxabs) to reuse parameters fitted elsewhere, e.g. to tokenize
    held-out data with training-set statistics.
    """
    if norm is None:
        std_series, norm = standardize(series)
    else:
        std_series = apply_norm(series, norm)
    clipped = np.clip(std_series.data, -clip, clip)
    if norm.maxabs is not None:
        maxabs = norm.maxabs
    else:
        maxabs = np.max(np.abs(clipped), axis=1)
        maxabs = np.where(maxabs > 0, maxabs, 1.0)
    y = mulaw(np.clip(clipped / maxabs[:, None], -1.0, 1.0), mu)
    tokens = np.floor((y + 1.0) / 2.0 * q).astype(np.int64)
    np.clip(tokens, 0, q - 1, out=tokens)
    full_norm = NormParams(norm.mean, norm.std, maxabs, clip)
    return QuantizedSeries(tokens, q, mu, full_norm, series.fs)


def dequantize_tokens(tokens, q: int, mu: float, norm: NormParams) -> np.ndarray:
    """Map token indices back to signal values via bin centers.

    Accepts any token array shaped (C, ...) and returns float64 values
    in the original signal domain.
    """
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= q):
        raise TokenError(f"tokens must lie in [0, {q})")
    y = (tokens + 0.5) / q * 2.0 - 1.0
    x = mulaw(y, mu, inverse=True)
    scale = norm.maxabs if norm.maxabs is not None else np.ones(tokens.shape[0])
    shape = (-1,) + (1,) * (tokens.ndim - 1)
    x = x * scale.reshape(shape)
    return x * norm.std.reshape(shape) + norm.mean.reshape(shape)


def dequantize(qs: QuantizedSeries) -> MultichannelSeries:
    """Invert quantize up to bin-center rounding."""
    values = dequantize_tokens(qs.tokens, qs.q, qs.mu, qs.norm)
    return MultichannelSeries(values, qs.fs)
