"""Autoregressive sequence models built on dilated convolutions: a
continuous next-step forecaster, a quantized token forecaster with
gated units and embedding conditioning, sampling strategies, recursive
generation, and Bayes-rule condition decoding."""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass

import numpy as np

from . import nnet as nn
from .core import MultichannelSeries, NormParams, load_array, save_array
from .errors import (
    ConditionError,
    ConfigError,
    DivergenceError,
    FormatError,
    InterfaceError,
    NormalizationError,
    NumericsError,
    RangeError,
    ShapeError,
    TokenError,
)
from .quant import QuantizedSeries, dequantize_tokens

__all__ = [
    "SimpleWavenetModel",
    "QuantizedWavenetModel",
    "SamplingStrategy",
    "train_simple_wavenet",
    "train_quantized_wavenet",
    "recursive_forecast",
    "sampling_distribution",
    "sample_next",
    "generate",
    "predict_distribution",
    "BayesDecodeResult",
    "bayes_decode",
    "save_forecaster",
    "load_forecaster",
]

LOG_FLOOR = -745.0


# ---------------------------------------------------------------------------
# continuous model


class SimpleWavenetModel:
    """Continuous next-step forecaster.

    A 1x1 projection takes C channels to width 2C, L kernel-2 layers
    with doubling dilation and asinh activations follow, and a final
    1x1 projection returns to C channels. The receptive field is 2^L
    samples; a window of exactly that length yields one prediction.
    """

    def __init__(self, channels: int, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise RangeError(f"need at least one dilated layer, got {layers}")
        self.channels = channels
        self.layer_count = layers
        self.receptive_field = 2**layers
        self.width = 2 * channels
        self.fs = 0.0
        self.innovation_std = 0.0
        self.metrics: list[dict] = []
        w = self.width
        self.in_proj = (
            nn.Parameter(nn.glorot_uniform(rng, (w, channels, 1), channels, w), name="w_in"),
            nn.Parameter(np.zeros(w), name="b_in"),
        )
        self.conv = []
        for i in range(layers):
            self.conv.append((
                nn.Parameter(nn.glorot_uniform(rng, (w, w, 2), 2 * w, w), name=f"w_conv{i}"),
                nn.Parameter(np.zeros(w), name=f"b_conv{i}"),
            ))
        self.out_proj = (
            nn.Parameter(nn.glorot_uniform(rng, (channels, w, 1), w, channels), name="w_out"),
            nn.Parameter(np.zeros(channels), name="b_out"),
        )

    def parameters(self) -> list[nn.Parameter]:
        params = [*self.in_proj]
        for w, b in self.conv:
            params.extend([w, b])
        params.extend(self.out_proj)
        return params

    def forward(self, x) -> nn.Tensor:
        """Differentiable forward pass on (N, C, T) values.

        Output is (N, C, T - R + 1); position j predicts the input at
        index j + R.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (N, {self.channels}, T) input, got {x.shape}")
        if x.shape[2] < self.receptive_field:
            raise ShapeError(
                f"input length {x.shape[2]} shorter than receptive field "
                f"{self.receptive_field}"
            )
        h = nn.bias_add(nn.conv1d(nn.constant(x), self.in_proj[0]), self.in_proj[1])
        for i, (w, b) in enumerate(self.conv):
            h = nn.asinh(nn.bias_add(nn.conv1d(h, w, dilation=2**i), b))
        return nn.bias_add(nn.conv1d(h, self.out_proj[0], dilation=1), self.out_proj[1])

    def forward_values(self, x) -> np.ndarray:
        """Plain-numpy forward pass, bit-identical to forward(...).value."""
        x = np.asarray(x, dtype=np.float64)
        h = _conv_values(x, self.in_proj[0].value, 1) + self.in_proj[1].value[None, :, None]
        for i, (w, b) in enumerate(self.conv):
            h = np.arcsinh(_conv_values(h, w.value, 2**i) + b.value[None, :, None])
        return _conv_values(h, self.out_proj[0].value, 1) + self.out_proj[1].value[None, :, None]

    def conv_kernel(self, layer: int) -> tuple[np.ndarray, int]:
        """Weights (2C, 2C, 2) and dilation of one dilated layer."""
        if not 0 <= layer < self.layer_count:
            raise IndexError(f"layer must lie in [0, {self.layer_count})")
        return self.conv[layer][0].value.copy(), 2**layer

    def layer_input(self, x, layer: int) -> np.ndarray:
        """Activations feeding one dilated layer, as (N, 2C, T_in)."""
        if not 0 <= layer < self.layer_count:
            raise IndexError(f"layer must lie in [0, {self.layer_count})")
        x = np.asarray(x, dtype=np.float64)
        h = _conv_values(x, self.in_proj[0].value, 1) + self.in_proj[1].value[None, :, None]
        for i, (w, b) in enumerate(self.conv[:layer]):
            h = np.arcsinh(_conv_values(h, w.value, 2**i) + b.value[None, :, None])
        return h


def _conv_values(x: np.ndarray, w: np.ndarray, dilation: int) -> np.ndarray:
    """Numpy twin of the tape conv1d, same tap order for bit equality."""
    k = w.shape[2]
    t_out = x.shape[2] - (k - 1) * dilation
    if t_out < 1:
        raise ShapeError(
            f"conv: length {x.shape[2]} too short for kernel {k} at dilation {dilation}"
        )
    out = np.zeros((x.shape[0], w.shape[0], t_out))
    for tap in range(k):
        seg = x[:, :, tap * dilation : tap * dilation + t_out]
        out += np.einsum("oi,nit->not", w[:, :, tap], seg, optimize=True)
    return out


def train_simple_wavenet(
    series: MultichannelSeries,
    layers: int = 9,
    lr: float = 1e-3,
    epochs: int = 200,
    seed: int = 0,
    val_fraction: float = 0.2,
    early_stop: bool = True,
    patience: int = 5,
) -> SimpleWavenetModel:
    """Fit the continuous forecaster by next-step mean squared error.

    The last val_fraction of the series is held out; validation MSE is
    tracked each epoch and, with early_stop, training halts after
    `patience` epochs without improvement and the best parameters are
    restored. The square root of the best validation MSE is stored as
    the model's innovation_std for noise-injected generation.

    Raises
    ------
    NumericsError
        If the loss or a gradient stops being finite.
    """
    x = series.data
    rng = np.random.default_rng(seed)
    model = SimpleWavenetModel(series.channels, layers, rng)
    model.fs = series.fs
    r = model.receptive_field
    t_split = int(series.timesteps * (1.0 - val_fraction))
    if t_split <= r or series.timesteps - t_split < 1:
        raise ShapeError(
            f"series of {series.timesteps} samples too short for receptive field {r} "
            f"plus validation split"
        )
    train_x = x[None, :, :t_split]
    train_targets = x[:, r:t_split][None]
    val_x = x[None, :, t_split - r :]
    val_targets = x[:, t_split:][None]

    params = model.parameters()
    adam = nn.Adam(params, lr=lr)
    best_val, since_best, snapshot = np.inf, 0, [p.value.copy() for p in params]
    for epoch_i in range(epochs):
        out = model.forward(train_x)
        pred = nn.crop(out, 2, 0, train_targets.shape[2])
        loss = nn.mse(pred, train_targets)
        if not np.isfinite(loss.value):
            raise NumericsError(f"training loss diverged at epoch {epoch_i}")
        nn.backward(loss)
        adam.step()
        val_pred = model.forward_values(val_x)[:, :, : val_targets.shape[2]]
        val_mse = float(np.mean((val_pred - val_targets) ** 2))
        model.metrics.append(
            {"epoch": epoch_i, "loss": float(loss.value), "val_mse": val_mse}
        )
        if val_mse < best_val - 1e-12:
            best_val, since_best = val_mse, 0
            snapshot = [p.value.copy() for p in params]
        else:
            since_best += 1
            if early_stop and since_best >= patience:
                break
    if early_stop:
        for p, value in zip(params, snapshot):
            p.value = value
        final_val = best_val
    else:
        final_val = model.metrics[-1]["val_mse"] if model.metrics else best_val
    model.innovation_std = float(np.sqrt(final_val)) if np.isfinite(final_val) else 0.0
    return model


def recursive_forecast(model: SimpleWavenetModel, windows, steps: int) -> np.ndarray:
    """Feed predictions back as inputs for multi-step forecasts.

    windows is (N, C, R) seed context; the return value is (N, C, steps)
    of deterministic (noise-free) recursive predictions.
    """
    windows = np.asarray(windows, dtype=np.float64)
    r = model.receptive_field
    if windows.ndim != 3 or windows.shape[1:] != (model.channels, r):
        raise ShapeError(
            f"windows must be (N, {model.channels}, {r}), got {windows.shape}"
        )
    if steps < 1:
        raise RangeError(f"steps must be positive, got {steps}")
    n = windows.shape[0]
    buf = np.empty((n, model.channels, r + steps))
    buf[:, :, :r] = windows
    for g in range(steps):
        buf[:, :, r + g] = model.forward_values(buf[:, :, g : g + r])[:, :, 0]
    return buf[:, :, r:]


# ---------------------------------------------------------------------------
# sampling strategies


@dataclass(frozen=True)
class SamplingStrategy:
    """How to turn a next-token distribution into a token.

    kind is one of argmax, topk, topp, full; k and p parameterize the
    truncated variants; seed drives the stochastic ones.
    """

    kind: str
    k: int = 1
    p: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("argmax", "topk", "topp", "full"):
            raise ConfigError(f"unknown sampling kind {self.kind!r}")
        if self.kind == "topk" and self.k < 1:
            raise RangeError(f"k must be at least 1, got {self.k}")
        if self.kind == "topp" and not 0.0 < self.p <= 1.0:
            raise RangeError(f"p must lie in (0, 1], got {self.p}")


def sampling_distribution(logits, strategy: SamplingStrategy) -> np.ndarray:
    """Effective distribution a strategy samples from, over all Q tokens.

    argmax gives a one-hot at the lowest-index maximum; topk keeps the k
    most probable tokens (ties resolved toward lower indices) and
    renormalizes; topp keeps the smallest probability-sorted prefix
    whose cumulative mass reaches p, including the token that crosses
    the threshold; full returns the softmax itself.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"logits must be 1-D, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericsError("logits must be finite")
    probs = nn.softmax(logits, axis=0)
    if strategy.kind == "argmax":
        out = np.zeros_like(probs)
        out[np.argmax(probs)] = 1.0
        return out
    if strategy.kind == "full":
        return probs
    order = np.argsort(-probs, kind="stable")
    if strategy.kind == "topk":
        keep = order[: strategy.k]
    else:
        cumulative = np.cumsum(probs[order])
        cut = int(np.searchsorted(cumulative, strategy.p - 1e-12)) + 1
        keep = order[:cut]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def sample_next(logits, strategy: SamplingStrategy, rng: np.random.Generator | None = None) -> int:
    """Draw one token according to the strategy.

    Passing rng threads an existing generator through repeated calls;
    otherwise a fresh one is seeded from strategy.seed.
    """
    dist = sampling_distribution(logits, strategy)
    if strategy.kind == "argmax":
        return int(np.argmax(dist))
    if rng is None:
        rng = np.random.default_rng(strategy.seed)
    return int(rng.choice(dist.size, p=dist))


# ---------------------------------------------------------------------------
# quantized model


class QuantizedWavenetModel:
    """Token forecaster with gated dilated convolutions.

    Each channel has its own token embedding table; the conv stack is
    shared, applied with channel as the batch axis. Layers compute
    Z = tanh(W_f * H + cond) * sigmoid(W_g * H + cond) with 1x1 skip
    and residual projections; skip sums feed a two-projection head that
    emits Q-way logits per position. Condition and subject embeddings,
    when configured, are projected into both branches at every layer.
    The linear flag ablates the nonlinearity: Z is then the unsquashed
    filter branch and the head activations become identity.
    """

    def __init__(self, channels, q, embed_dim, dilations, residual_width, skip_width,
                 condition_count, condition_dim, subject_count, subject_dim, mix,
                 linear, rng):
        self.channels = channels
        self.q = q
        self.embed_dim = embed_dim
        self.dilations = tuple(int(d) for d in dilations)
        self.receptive_field = 1 + sum(self.dilations)
        self.residual_width = residual_width
        self.skip_width = skip_width
        self.condition_count = condition_count
        self.condition_dim = condition_dim if condition_count else 0
        self.subject_count = subject_count
        self.subject_dim = subject_dim if subject_count else 0
        self.mix = bool(mix)
        self.linear = bool(linear)
        self.fs = 0.0
        self.mu = 0.0
        self.norm: NormParams | None = None
        self.metrics: list[dict] = []
        self.report: dict = {}

        rw, sw = residual_width, skip_width
        self.embed_tables = nn.Parameter(
            rng.normal(0.0, 0.1, (channels, q, embed_dim)), name="embed"
        )
        self.in_proj = (
            nn.Parameter(nn.glorot_uniform(rng, (rw, embed_dim, 1), embed_dim, rw), name="w_in"),
            nn.Parameter(np.zeros(rw), name="b_in"),
        )
        cond_total = self.condition_dim + self.subject_dim
        self.cond_table = (
            nn.Parameter(rng.normal(0.0, 0.1, (condition_count, condition_dim)), name="cond")
            if condition_count
            else None
        )
        self.subject_table = (
            nn.Parameter(rng.normal(0.0, 0.1, (subject_count, subject_dim)), name="subject")
            if subject_count
            else None
        )
        self.layers = []
        for i, _ in enumerate(self.dilations):
            layer = {
                "w_f": nn.Parameter(nn.glorot_uniform(rng, (rw, rw, 2), 2 * rw, rw), name=f"w_f{i}"),
                "b_f": nn.Parameter(np.zeros(rw), name=f"b_f{i}"),
                "w_g": nn.Parameter(nn.glorot_uniform(rng, (rw, rw, 2), 2 * rw, rw), name=f"w_g{i}"),
                "b_g": nn.Parameter(np.zeros(rw), name=f"b_g{i}"),
                "w_skip": nn.Parameter(nn.glorot_uniform(rng, (sw, rw, 1), rw, sw), name=f"w_skip{i}"),
                "w_res": nn.Parameter(nn.glorot_uniform(rng, (rw, rw, 1), rw, rw), name=f"w_res{i}"),
            }
            if cond_total:
                layer["w_cf"] = nn.Parameter(
                    nn.glorot_uniform(rng, (rw, cond_total, 1), cond_total, rw), name=f"w_cf{i}"
                )
                layer["w_cg"] = nn.Parameter(
                    nn.glorot_uniform(rng, (rw, cond_total, 1), cond_total, rw), name=f"w_cg{i}"
                )
            self.layers.append(layer)
        self.mix_m = (
            nn.Parameter(np.eye(channels) + 0.01 * rng.standard_normal((channels, channels)),
                         name="mix")
            if mix
            else None
        )
        self.head = (
            nn.Parameter(nn.glorot_uniform(rng, (sw, sw, 1), sw, sw), name="w_h1"),
            nn.Parameter(np.zeros(sw), name="b_h1"),
            nn.Parameter(nn.glorot_uniform(rng, (q, sw, 1), sw, q), name="w_h2"),
            nn.Parameter(np.zeros(q), name="b_h2"),
        )

    @property
    def conditioned(self) -> bool:
        return self.condition_count > 0 or self.subject_count > 0

    def parameters(self) -> list[nn.Parameter]:
        params = [self.embed_tables, *self.in_proj]
        if self.cond_table is not None:
            params.append(self.cond_table)
        if self.subject_table is not None:
            params.append(self.subject_table)
        for layer in self.layers:
            params.extend(layer.values())
        if self.mix_m is not None:
            params.append(self.mix_m)
        params.extend(self.head)
        return params

    # -- input validation shared by both forward paths

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[0] != self.channels:
            raise ShapeError(f"tokens must be ({self.channels}, T), got {tokens.shape}")
        if tokens.shape[1] < self.receptive_field:
            raise ShapeError(
                f"need at least {self.receptive_field} samples, got {tokens.shape[1]}"
            )
        if tokens.dtype.kind not in "iu":
            raise TokenError("tokens must be integers")
        if tokens.min() < 0 or tokens.max() >= self.q:
            raise TokenError(f"tokens must lie in [0, {self.q})")
        return tokens.astype(np.int64)

    def _check_condition(self, condition_tc, length) -> np.ndarray:
        if condition_tc is None:
            return np.full(length, -1, dtype=np.int64)
        tc = np.asarray(condition_tc, dtype=np.int64)
        if tc.shape != (length,):
            raise ShapeError(
                f"condition timecourse must have length {length}, got {tc.shape}"
            )
        if tc.max(initial=-1) >= self.condition_count:
            raise ConditionError(
                f"condition index {int(tc.max())} outside [0, {self.condition_count})"
            )
        if tc.min(initial=-1) < -1:
            raise ConditionError("condition indices below -1 are not defined")
        return tc

    def _check_subject(self, subject_id) -> int:
        if self.subject_count == 0:
            return -1
        if subject_id is None:
            raise ShapeError("model has subject embeddings; pass subject_id")
        subject_id = int(subject_id)
        if not 0 <= subject_id < self.subject_count:
            raise RangeError(f"subject id must lie in [0, {self.subject_count})")
        return subject_id

    # -- differentiable forward

    def logits(self, tokens, condition_tc=None, subject_id=None) -> nn.Tensor:
        """Tape forward pass: (C, T) tokens to (C, T - R + 1, Q) logits."""
        tokens = self._check_tokens(tokens)
        t = tokens.shape[1]
        tc = self._check_condition(condition_tc, t)
        sid = self._check_subject(subject_id)

        emb = nn.channel_embedding(self.embed_tables, tokens)
        h = nn.transpose(emb, (0, 2, 1))
        h = nn.bias_add(nn.conv1d(h, self.in_proj[0]), self.in_proj[1])

        cond = None
        if self.conditioned:
            parts = []
            if self.cond_table is not None:
                rows = nn.embedding(self.cond_table, np.maximum(tc, 0))
                mask = (tc >= 0).astype(np.float64)[:, None]
                rows = nn.mul(rows, nn.constant(mask))
                parts.append(nn.transpose(rows, (1, 0)))
            if self.subject_table is not None:
                row = nn.embedding(self.subject_table, np.array([sid]))
                tiled = nn.matmul(
                    nn.reshape(row, (self.subject_dim, 1)), nn.constant(np.ones((1, t)))
                )
                parts.append(tiled)
            joined = parts[0] if len(parts) == 1 else nn.concat(parts, axis=0)
            cond = nn.reshape(joined, (1, self.condition_dim + self.subject_dim, t))

        offset = 0
        skips = []
        for layer, d in zip(self.layers, self.dilations):
            t_in = t - offset
            pre_f = nn.bias_add(nn.conv1d(h, layer["w_f"], dilation=d), layer["b_f"])
            if not self.linear:
                pre_g = nn.bias_add(nn.conv1d(h, layer["w_g"], dilation=d), layer["b_g"])
            if cond is not None:
                t_out = t_in - d
                cf = nn.crop(nn.conv1d(cond, layer["w_cf"]), 2, offset + d, offset + d + t_out)
                pre_f = nn.add(pre_f, cf)
                if not self.linear:
                    cg = nn.crop(nn.conv1d(cond, layer["w_cg"]), 2, offset + d, offset + d + t_out)
                    pre_g = nn.add(pre_g, cg)
            z = pre_f if self.linear else nn.mul(nn.tanh(pre_f), nn.sigmoid(pre_g))
            skips.append(nn.conv1d(z, layer["w_skip"]))
            h = nn.add(nn.crop(h, 2, d, t_in), nn.conv1d(z, layer["w_res"]))
            offset += d

        final_len = t - offset
        total = None
        for s in skips:
            s_len = s.value.shape[2]
            cropped = nn.crop(s, 2, s_len - final_len, s_len)
            total = cropped if total is None else nn.add(total, cropped)
        if self.mix_m is not None:
            total = nn.channel_mix(total, self.mix_m)
        act = nn.identity if self.linear else nn.relu
        head = nn.bias_add(nn.conv1d(act(total), self.head[0]), self.head[1])
        head = nn.bias_add(nn.conv1d(act(head), self.head[2]), self.head[3])
        return nn.transpose(head, (0, 2, 1))

    # -- plain numpy forward, mirroring the tape op order exactly

    def logits_values(self, tokens, condition_tc=None, subject_id=None) -> np.ndarray:
        tokens = self._check_tokens(tokens)
        t = tokens.shape[1]
        tc = self._check_condition(condition_tc, t)
        sid = self._check_subject(subject_id)

        emb = self.embed_tables.value[np.arange(self.channels)[:, None], tokens]
        h = emb.transpose(0, 2, 1)
        h = _conv_values(h, self.in_proj[0].value, 1) + self.in_proj[1].value[None, :, None]

        cond = None
        if self.conditioned:
            parts = []
            if self.cond_table is not None:
                rows = self.cond_table.value[np.maximum(tc, 0)]
                rows = rows * (tc >= 0).astype(np.float64)[:, None]
                parts.append(rows.T)
            if self.subject_table is not None:
                row = self.subject_table.value[np.array([sid])]
                parts.append(row.reshape(self.subject_dim, 1) @ np.ones((1, t)))
            joined = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
            cond = joined.reshape(1, self.condition_dim + self.subject_dim, t)

        offset = 0
        skips = []
        for layer, d in zip(self.layers, self.dilations):
            t_in = t - offset
            pre_f = _conv_values(h, layer["w_f"].value, d) + layer["b_f"].value[None, :, None]
            if not self.linear:
                pre_g = _conv_values(h, layer["w_g"].value, d) + layer["b_g"].value[None, :, None]
            if cond is not None:
                t_out = t_in - d
                cf = _conv_values(cond, layer["w_cf"].value, 1)[:, :, offset + d : offset + d + t_out]
                pre_f = pre_f + cf
                if not self.linear:
                    cg = _conv_values(cond, layer["w_cg"].value, 1)[:, :, offset + d : offset + d + t_out]
                    pre_g = pre_g + cg
            if self.linear:
                z = pre_f
            else:
                z = np.tanh(pre_f) * (1.0 / (1.0 + np.exp(-pre_g)))
            skips.append(_conv_values(z, layer["w_skip"].value, 1))
            h = h[:, :, d:t_in] + _conv_values(z, layer["w_res"].value, 1)
            offset += d

        final_len = t - offset
        total = None
        for s in skips:
            cropped = s[:, :, s.shape[2] - final_len :]
            total = cropped if total is None else total + cropped
        if self.mix_m is not None:
            total = np.tensordot(self.mix_m.value, total, axes=(1, 0))
        act = (lambda v: v) if self.linear else (lambda v: np.maximum(v, 0.0))
        head = _conv_values(act(total), self.head[0].value, 1) + self.head[1].value[None, :, None]
        head = _conv_values(act(head), self.head[2].value, 1) + self.head[3].value[None, :, None]
        return head.transpose(0, 2, 1)

    def conv_kernel(self, layer: int) -> tuple[np.ndarray, int]:
        """Filter-branch weights (R_w, R_w, 2) and dilation of one layer."""
        if not 0 <= layer < len(self.layers):
            raise IndexError(f"layer must lie in [0, {len(self.layers)})")
        return self.layers[layer]["w_f"].value.copy(), self.dilations[layer]


def train_quantized_wavenet(
    q: QuantizedSeries,
    blocks: int = 2,
    layers_per_block: int = 7,
    residual_width: int = 32,
    skip_width: int = 64,
    embed_dim: int = 64,
    condition_tc=None,
    condition_count: int | None = None,
    condition_dim: int = 16,
    subject_id: int | None = None,
    subject_count: int = 0,
    subject_dim: int = 16,
    mix: bool = False,
    linear: bool = False,
    epochs: int = 30,
    steps_per_epoch: int = 20,
    window: int = 4096,
    lr: float = 1e-3,
    seed: int = 0,
    val_fraction: float = 0.2,
    early_stop: bool = True,
    patience: int = 5,
) -> QuantizedWavenetModel:
    """Train the token forecaster by cross-entropy on random windows.

    Dilations double within each block (1, 2, ..., 2^(layers_per_block-1))
    and the pattern repeats `blocks` times; the receptive field is
    1 + blocks * (2^layers_per_block - 1). An epoch is steps_per_epoch
    minibatch windows drawn from the training segment, followed by a
    validation pass on the held-out tail. Early stopping restores the
    best validation parameters. The final report holds top-1/top-5
    token accuracy and reconstructed-signal MSE on the validation tail,
    next to a repeat-last-token baseline.

    Raises
    ------
    ConditionError
        If condition indices fall outside [0, condition_count).
    NumericsError
        If the loss or a gradient stops being finite.
    """
    tokens = q.tokens
    t_total = tokens.shape[1]
    dilations = [2**i for _ in range(blocks) for i in range(layers_per_block)]
    rf = 1 + sum(dilations)

    if condition_tc is not None:
        condition_tc = np.asarray(condition_tc, dtype=np.int64)
        if condition_tc.shape != (t_total,):
            raise ShapeError(
                f"condition timecourse must match the {t_total}-sample series, "
                f"got {condition_tc.shape}"
            )
        if condition_count is None:
            condition_count = int(condition_tc.max()) + 1 if condition_tc.max() >= 0 else 0
        if condition_tc.max(initial=-1) >= condition_count:
            raise ConditionError(
                f"condition index {int(condition_tc.max())} outside [0, {condition_count})"
            )
        if condition_tc.min(initial=-1) < -1:
            raise ConditionError("condition indices below -1 are not defined")
    else:
        condition_count = condition_count or 0

    rng = np.random.default_rng(seed)
    model = QuantizedWavenetModel(
        tokens.shape[0], q.q, embed_dim, dilations, residual_width, skip_width,
        condition_count, condition_dim, subject_count, subject_dim, mix, linear, rng,
    )
    model.fs = q.fs
    model.mu = q.mu
    model.norm = q.norm
    sid = model._check_subject(subject_id) if subject_count else None

    t_val = max(int(t_total * val_fraction), 1)
    t_train = t_total - t_val
    window = min(window, t_train)
    if window <= rf:
        raise ShapeError(
            f"training window {window} must exceed the receptive field {rf}"
        )

    val_tokens = tokens[:, t_train - rf :]
    val_tc = condition_tc[t_train - rf :] if condition_tc is not None else None

    def val_loss() -> float:
        logits = model.logits_values(val_tokens, val_tc, sid)
        logits = logits[:, : t_val, :]
        targets = tokens[:, t_train:]
        logp = logits - _logsumexp(logits)
        picked = np.take_along_axis(logp, targets[:, :, None], axis=2)[:, :, 0]
        return float(-picked.mean())

    params = model.parameters()
    adam = nn.Adam(params, lr=lr)
    best_val, since_best, snapshot = np.inf, 0, [p.value.copy() for p in params]
    for epoch_i in range(epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            s = int(rng.integers(0, t_train - window + 1))
            tok_win = tokens[:, s : s + window]
            tc_win = condition_tc[s : s + window] if condition_tc is not None else None
            logits = model.logits(tok_win, tc_win, sid)
            used = nn.crop(logits, 1, 0, window - rf)
            flat = nn.reshape(used, (model.channels * (window - rf), model.q))
            labels = tokens[:, s + rf : s + window].reshape(-1)
            loss = nn.softmax_cross_entropy(flat, labels)
            if not np.isfinite(loss.value):
                raise NumericsError(f"training loss diverged at epoch {epoch_i}")
            nn.backward(loss)
            adam.step()
            epoch_losses.append(float(loss.value))
        current_val = val_loss()
        model.metrics.append(
            {"epoch": epoch_i, "loss": float(np.mean(epoch_losses)), "val_loss": current_val}
        )
        if current_val < best_val - 1e-12:
            best_val, since_best = current_val, 0
            snapshot = [p.value.copy() for p in params]
        else:
            since_best += 1
            if early_stop and since_best >= patience:
                break
    if early_stop:
        for p, value in zip(params, snapshot):
            p.value = value

    model.report = _quantized_report(model, tokens, t_train, condition_tc, sid, q)
    return model


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=2, keepdims=True)
    return m + np.log(np.exp(logits - m).sum(axis=2, keepdims=True))


def _quantized_report(model, tokens, t_train, condition_tc, sid, q: QuantizedSeries) -> dict:
    """Validation-tail accuracy and reconstruction MSE with a repeat baseline."""
    rf = model.receptive_field
    t_val = tokens.shape[1] - t_train
    val_tokens = tokens[:, t_train - rf :]
    val_tc = condition_tc[t_train - rf :] if condition_tc is not None else None
    logits = model.logits_values(val_tokens, val_tc, sid)[:, :t_val, :]
    targets = tokens[:, t_train:]
    predicted = np.argmax(logits, axis=2)
    top5 = np.argsort(-logits, axis=2, kind="stable")[:, :, :5]
    repeat = tokens[:, t_train - 1 : -1]

    true_values = dequantize_tokens(targets, q.q, q.mu, q.norm)
    predicted_values = dequantize_tokens(predicted, q.q, q.mu, q.norm)
    repeat_values = dequantize_tokens(repeat, q.q, q.mu, q.norm)
    return {
        "top1": float(np.mean(predicted == targets)),
        "top5": float(np.mean(np.any(top5 == targets[:, :, None], axis=2))),
        "repeat_top1": float(np.mean(repeat == targets)),
        "mse": float(np.mean((predicted_values - true_values) ** 2)),
        "repeat_mse": float(np.mean((repeat_values - true_values) ** 2)),
        "val_loss": float(
            -np.take_along_axis(
                logits - _logsumexp(logits), targets[:, :, None], axis=2
            ).mean()
        ),
    }


def predict_distribution(model: QuantizedWavenetModel, tokens, condition_tc=None,
                         subject_id=None) -> np.ndarray:
    """Next-token distribution (C, Q) after the last supplied sample.

    tokens is (C, T) with T at least the receptive field; only the last
    receptive-field window informs the prediction.
    """
    tokens = model._check_tokens(tokens)
    rf = model.receptive_field
    window = tokens[:, -rf:]
    tc = None
    if condition_tc is not None:
        tc = np.asarray(condition_tc, dtype=np.int64)
        if tc.shape != (tokens.shape[1],):
            raise ShapeError(
                f"condition timecourse must have length {tokens.shape[1]}, got {tc.shape}"
            )
        tc = tc[-rf:]
    logits = model.logits_values(window, tc, subject_id)
    return nn.softmax(logits[:, -1, :], axis=1)


# ---------------------------------------------------------------------------
# generation


def generate(
    model,
    primer,
    steps: int,
    strategy: SamplingStrategy | None = None,
    condition_tc=None,
    subject_id=None,
    seed: int | None = None,
    noise_std: float | None = None,
    zero_history: bool = False,
) -> np.ndarray:
    """Recursively continue a primer.

    For a SimpleWavenetModel the return value is (C, steps) float values
    with Gaussian innovations of scale noise_std (default: the model's
    innovation_std; pass 0.0 for deterministic recursion). For a
    QuantizedWavenetModel it is (C, steps) int64 tokens drawn by the
    strategy (default top-p 0.8); condition_tc, when given, covers the
    receptive-field tail of the primer plus the generated region
    (length R + steps). zero_history replaces the primer with silence:
    zeros for values, the center token for tokens.

    Raises
    ------
    DivergenceError
        If a generated value leaves [-1e6, 1e6].
    """
    if steps < 1:
        raise RangeError(f"steps must be positive, got {steps}")
    if isinstance(model, SimpleWavenetModel):
        if strategy is not None or condition_tc is not None or subject_id is not None:
            raise ConfigError(
                "sampling strategies and conditioning only apply to quantized models"
            )
        return _generate_continuous(model, primer, steps, seed, noise_std, zero_history)
    if isinstance(model, QuantizedWavenetModel):
        if noise_std is not None:
            raise ConfigError("noise injection only applies to continuous models")
        return _generate_tokens(
            model, primer, steps, strategy, condition_tc, subject_id, seed, zero_history
        )
    raise InterfaceError(f"cannot generate from {type(model).__name__}")


def _primer_tail(primer, channels, r, zero_history, fill, dtype):
    if zero_history:
        return np.full((channels, r), fill, dtype=dtype)
    primer = np.asarray(primer)
    if primer.ndim != 2 or primer.shape[0] != channels:
        raise ShapeError(f"primer must be ({channels}, T), got {primer.shape}")
    if primer.shape[1] < r:
        raise ShapeError(
            f"primer length {primer.shape[1]} shorter than receptive field {r}; "
            f"pass zero_history=True to start from silence"
        )
    return primer[:, -r:].astype(dtype)


def _generate_continuous(model, primer, steps, seed, noise_std, zero_history):
    r = model.receptive_field
    buf = np.empty((model.channels, r + steps))
    buf[:, :r] = _primer_tail(primer, model.channels, r, zero_history, 0.0, np.float64)
    rng = np.random.default_rng(seed)
    std = model.innovation_std if noise_std is None else float(noise_std)
    for g in range(steps):
        nxt = model.forward_values(buf[None, :, g : g + r])[0, :, 0]
        if std > 0.0:
            nxt = nxt + rng.normal(0.0, std, size=model.channels)
        if np.any(np.abs(nxt) > 1e6):
            raise DivergenceError(f"generated value exceeded 1e6 at step {g}")
        buf[:, r + g] = nxt
    return buf[:, r:]


def _generate_tokens(model, primer, steps, strategy, condition_tc, subject_id, seed,
                     zero_history):
    r = model.receptive_field
    if not zero_history and np.asarray(primer).dtype.kind not in "iu":
        raise TokenError("primer tokens must be integers")
    buf = np.empty((model.channels, r + steps), dtype=np.int64)
    buf[:, :r] = _primer_tail(
        primer, model.channels, r, zero_history, model.q // 2, np.int64
    )
    if buf[:, :r].min() < 0 or buf[:, :r].max() >= model.q:
        raise TokenError(f"primer tokens must lie in [0, {model.q})")
    if strategy is None:
        strategy = SamplingStrategy("topp", p=0.8, seed=seed)
    tc = model._check_condition(condition_tc, r + steps)
    sid = model._check_subject(subject_id)
    rng = np.random.default_rng(strategy.seed if strategy.seed is not None else seed)
    for g in range(steps):
        logits = model.logits_values(buf[:, g : g + r], tc[g : g + r], sid)[:, -1, :]
        for c in range(model.channels):
            buf[c, r + g] = sample_next(logits[c], strategy, rng)
    return buf[:, r:]


# ---------------------------------------------------------------------------
# Bayes-rule condition decoding


@dataclass(frozen=True)
class BayesDecodeResult:
    """Posterior over conditions for one token trial.

    log_likelihood is the per-condition total log probability of the
    observed tokens; per_timestep, when requested, holds the running
    posterior after each predictable sample. floored flags that some
    token probability hit the log-space floor of -745.
    """

    posterior: np.ndarray
    log_likelihood: np.ndarray
    per_timestep: np.ndarray | None
    floored: bool


def bayes_decode(model: QuantizedWavenetModel, tokens, priors,
                 subject_id=None, per_timestep: bool = False) -> BayesDecodeResult:
    """Invert the conditioned forecaster into a condition classifier.

    Scores log p(tokens | condition = i) by summing the log softmax
    probability of each observed token under a constant condition i,
    then normalizes against the prior in log space.

    Raises
    ------
    InterfaceError
        If the model was trained without condition embeddings.
    NormalizationError
        If priors do not sum to 1 within 1e-8.
    """
    if model.condition_count < 1:
        raise InterfaceError("model has no condition embeddings; bayes decoding needs them")
    tokens = model._check_tokens(tokens)
    rf = model.receptive_field
    t = tokens.shape[1]
    if t < rf + 1:
        raise ShapeError(
            f"need at least {rf + 1} samples to score one prediction, got {t}"
        )
    priors = np.asarray(priors, dtype=np.float64)
    if priors.shape != (model.condition_count,):
        raise ShapeError(
            f"priors must have length {model.condition_count}, got {priors.shape}"
        )
    if np.any(priors < 0.0):
        raise RangeError("priors must be nonnegative")
    if abs(priors.sum() - 1.0) > 1e-8:
        raise NormalizationError(f"priors sum to {priors.sum():.10f}, expected 1")

    n_pred = t - rf
    targets = tokens[:, rf:]
    floored = False
    ll_t = np.empty((model.condition_count, n_pred))
    for i in range(model.condition_count):
        tc = np.full(t, i, dtype=np.int64)
        logits = model.logits_values(tokens, tc, subject_id)[:, :n_pred, :]
        logp = logits - _logsumexp(logits)
        picked = np.take_along_axis(logp, targets[:, :, None], axis=2)[:, :, 0]
        if np.any(picked < LOG_FLOOR):
            floored = True
            picked = np.maximum(picked, LOG_FLOOR)
        ll_t[i] = picked.sum(axis=0)

    with np.errstate(divide="ignore"):
        log_prior = np.log(priors)
    loglik = ll_t.sum(axis=1)
    posterior = _log_normalize(loglik + log_prior)
    running = None
    if per_timestep:
        cumulative = np.cumsum(ll_t, axis=1) + log_prior[:, None]
        running = np.apply_along_axis(_log_normalize, 0, cumulative).T
    return BayesDecodeResult(posterior, loglik, running, floored)


def _log_normalize(logw: np.ndarray) -> np.ndarray:
    m = logw.max()
    w = np.exp(logw - m)
    return w / w.sum()


# ---------------------------------------------------------------------------
# checkpoints


def save_forecaster(path, model) -> None:
    """Write a model directory: manifest.json plus one array per parameter."""
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(model, SimpleWavenetModel):
        config = {
            "type": "simple",
            "channels": model.channels,
            "layers": model.layer_count,
            "fs": model.fs,
            "innovation_std": model.innovation_std,
        }
    elif isinstance(model, QuantizedWavenetModel):
        config = {
            "type": "quantized",
            "channels": model.channels,
            "q": model.q,
            "embed_dim": model.embed_dim,
            "dilations": list(model.dilations),
            "residual_width": model.residual_width,
            "skip_width": model.skip_width,
            "condition_count": model.condition_count,
            "condition_dim": model.condition_dim,
            "subject_count": model.subject_count,
            "subject_dim": model.subject_dim,
            "mix": model.mix,
            "linear": model.linear,
            "fs": model.fs,
            "mu": model.mu,
            "norm": None
            if model.norm is None
            else {
                "mean": model.norm.mean.tolist(),
                "std": model.norm.std.tolist(),
                "maxabs": None if model.norm.maxabs is None else model.norm.maxabs.tolist(),
                "clip": model.norm.clip,
            },
        }
    else:
        raise InterfaceError(f"cannot save {type(model).__name__}")
    params = model.parameters()
    manifest = {"format": "nkt-forecaster-1", "config": config,
                "params": [p.name for p in params]}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    for i, p in enumerate(params):
        save_array(path / f"param_{i:03d}.nkt", p.value)


def load_forecaster(path):
    """Rebuild a saved model; parameter values round-trip bit-exactly."""
    path = pathlib.Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "nkt-forecaster-1":
        raise FormatError(f"not a forecaster checkpoint: {manifest.get('format')!r}")
    config = manifest["config"]
    rng = np.random.default_rng(0)
    if config["type"] == "simple":
        model = SimpleWavenetModel(config["channels"], config["layers"], rng)
        model.fs = config["fs"]
        model.innovation_std = config["innovation_std"]
    elif config["type"] == "quantized":
        model = QuantizedWavenetModel(
            config["channels"], config["q"], config["embed_dim"], config["dilations"],
            config["residual_width"], config["skip_width"], config["condition_count"],
            config["condition_dim"] or 16, config["subject_count"],
            config["subject_dim"] or 16, config["mix"], config["linear"], rng,
        )
        model.fs = config["fs"]
        model.mu = config["mu"]
        if config["norm"] is not None:
            norm = config["norm"]
            model.norm = NormParams(
                np.array(norm["mean"]), np.array(norm["std"]),
                None if norm["maxabs"] is None else np.array(norm["maxabs"]),
                norm["clip"],
            )
    else:
        raise FormatError(f"unknown forecaster type {config['type']!r}")
    params = model.parameters()
    names = [p.name for p in params]
    if names != manifest["params"]:
        raise FormatError("checkpoint parameter list does not match the architecture")
    for i, p in enumerate(params):
        value, _ = load_array(path / f"param_{i:03d}.nkt")
        if value.shape != p.value.shape:
            raise FormatError(
                f"parameter {p.name}: stored shape {value.shape} vs expected {p.value.shape}"
            )
        p.value = value
    return model
