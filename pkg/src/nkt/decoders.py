"""Trial classification: shrinkage LDA, a linear projection network,
cross-validated pipelines, pairwise evaluation, activation patterns, and
a dilated-convolution classifier with optional subject embeddings."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import nnet as nn
from .core import EpochedDataset, subset_dataset
from .errors import (
    ClassCountError,
    NormalizationError,
    NumericsError,
    RangeError,
    ShapeError,
    SingularError,
    StratifyError,
)
from .linmodels import fit_pca

__all__ = [
    "LDAModel",
    "LinearNetModel",
    "WavenetClassifierModel",
    "PipelineResult",
    "fit_lda",
    "predict_lda",
    "train_linear_net",
    "stratified_kfold",
    "lda_nn_pipeline",
    "lda_pca_pipeline",
    "pairwise_from_multiclass",
    "haufe_transform",
    "train_wavenet_classifier",
]


@dataclass(frozen=True)
class LDAModel:
    """Gaussian classifier with one shared, shrunk covariance.

    means is K x F, covariance and precision are F x F, log_priors has
    length K. shrinkage records the mixing weight actually used.
    """

    means: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    log_priors: np.ndarray
    shrinkage: float

    @property
    def class_count(self) -> int:
        return self.means.shape[0]

    @property
    def features(self) -> int:
        return self.means.shape[1]


def _ledoit_wolf_gamma(residuals: np.ndarray) -> float:
    """Shrinkage weight for the sample covariance of centered residuals.

    Balances the squared error of the sample covariance against the
    scaled identity target: gamma = min(b2, d2) / d2 with
    d2 = mean squared distance of S from its isotropic projection and
    b2 the estimated variance of S around the true covariance.
    """
    z = residuals
    n, f = z.shape
    s = z.T @ z / n
    m = np.trace(s) / f
    d2 = np.sum(s * s) / f - m * m
    if d2 <= 0.0:
        return 1.0
    norms4 = np.sum((z * z).sum(axis=1) ** 2)
    b2 = (norms4 / n**2 - np.sum(s * s) / n) / f
    b2 = min(max(b2, 0.0), d2)
    return b2 / d2


def fit_lda(features, labels, shrinkage="auto") -> LDAModel:
    """Fit linear discriminant analysis with a shrunk pooled covariance.

    Parameters
    ----------
    features : N x F array
    labels : length-N integer array with classes 0..K-1
    shrinkage : "auto" or float in [0, 1]
        Mixing weight gamma of the scaled-identity target:
        cov = (1 - gamma) * pooled + gamma * (trace/F) * I. "auto"
        estimates gamma from the data (Ledoit-Wolf).

    Raises
    ------
    ClassCountError
        If a class in 0..K-1 has no samples or N <= K.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"features must be 2-D (N, F), got ndim={x.ndim}")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match {x.shape[0]} samples")
    n, f = x.shape
    if y.min(initial=0) < 0:
        raise ClassCountError("labels must be nonnegative")
    k = int(y.max()) + 1
    counts = np.bincount(y, minlength=k)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ClassCountError(f"class {empty} has no samples")
    if n <= k:
        raise ClassCountError(f"need more samples ({n}) than classes ({k})")

    means = np.stack([x[y == c].mean(axis=0) for c in range(k)])
    residuals = x - means[y]
    pooled = residuals.T @ residuals / n

    if shrinkage == "auto":
        gamma = _ledoit_wolf_gamma(residuals)
    else:
        gamma = float(shrinkage)
        if not 0.0 <= gamma <= 1.0:
            raise RangeError(f"shrinkage must be in [0, 1], got {gamma}")
    target = np.trace(pooled) / f
    cov = (1.0 - gamma) * pooled + gamma * target * np.eye(f)
    cov = (cov + cov.T) / 2.0
    try:
        chol = scipy.linalg.cho_factor(cov)
        precision = scipy.linalg.cho_solve(chol, np.eye(f))
    except scipy.linalg.LinAlgError as exc:
        raise SingularError("shrunk covariance is not positive definite") from exc
    log_priors = np.log(counts / n)
    return LDAModel(means, cov, precision, log_priors, gamma)


def predict_lda(model: LDAModel, features) -> np.ndarray:
    """Class posteriors (N, K) under the fitted Gaussian model.

    Rows sum to 1; discriminants share the covariance so the quadratic
    term cancels and the posterior is a softmax of affine scores.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.features:
        raise ShapeError(
            f"features must be (N, {model.features}), got {x.shape}"
        )
    alpha = model.precision @ model.means.T
    const = -0.5 * np.einsum("kf,fk->k", model.means, alpha) + model.log_priors
    return nn.softmax(x @ alpha + const, axis=1)


def _lda_accuracy(train_x, train_y, test_x, test_y, shrinkage) -> float:
    model = fit_lda(train_x, train_y, shrinkage=shrinkage)
    predicted = np.argmax(predict_lda(model, test_x), axis=1)
    return float(np.mean(predicted == test_y))


class LinearNetModel:
    """All-linear network: per-timepoint projection, then an affine stack.

    The projection w_dr (C x K_dr) is applied at every timepoint, the
    result flattened and passed through affine layers with no
    nonlinearity anywhere, so the whole model is one affine map (see
    collapse). Dropout is applied before each of the three hidden
    layers at train time only.
    """

    def __init__(self, channels, timesteps, class_count, k_dr, widths, dropout_rate, rng):
        self.channels = channels
        self.timesteps = timesteps
        self.class_count = class_count
        self.k_dr = k_dr
        self.widths = tuple(widths)
        self.dropout_rate = dropout_rate
        self.metrics: list[dict] = []
        self.w_dr = nn.Parameter(
            nn.glorot_uniform(rng, (channels, k_dr), channels, k_dr), name="w_dr"
        )
        sizes = [k_dr * timesteps, *widths, class_count]
        self.layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = nn.Parameter(
                nn.glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out), name=f"w{i + 1}"
            )
            b = nn.Parameter(np.zeros(fan_out), name=f"b{i + 1}")
            self.layers.append((w, b))

    def parameters(self) -> list[nn.Parameter]:
        params = [self.w_dr]
        for w, b in self.layers:
            params.extend([w, b])
        return params

    def logits(self, trials, training=False, rng=None) -> nn.Tensor:
        trials = np.asarray(trials, dtype=np.float64)
        n, c, t = trials.shape
        if c != self.channels or t != self.timesteps:
            raise ShapeError(
                f"trials must be (N, {self.channels}, {self.timesteps}), got {trials.shape}"
            )
        rate = self.dropout_rate
        x = nn.constant(trials)
        x = nn.dropout(x, rate, rng, training)
        x = nn.reshape(nn.transpose(x, (1, 0, 2)), (c, n * t))
        proj = nn.matmul(nn.transpose(self.w_dr, (1, 0)), x)
        proj = nn.transpose(nn.reshape(proj, (self.k_dr, n, t)), (1, 0, 2))
        h = nn.reshape(proj, (n, self.k_dr * t))
        h = nn.dropout(h, rate, rng, training)
        (w1, b1), (w2, b2), (w3, b3) = self.layers
        h = nn.affine(h, w1, b1)
        h = nn.dropout(h, rate, rng, training)
        h = nn.affine(h, w2, b2)
        return nn.affine(h, w3, b3)

    def predict_proba(self, trials) -> np.ndarray:
        return nn.softmax(self.logits(trials).value, axis=1)

    def collapse(self) -> tuple[np.ndarray, np.ndarray]:
        """Compose all layers into a single affine map on flattened trials.

        Returns (matrix, bias) with matrix (C*T, K) and bias (K,) such
        that trials.reshape(N, C*T) @ matrix + bias equals the
        eval-mode logits.
        """
        (w1, b1), (w2, b2), (w3, b3) = self.layers
        matrix = np.kron(self.w_dr.value, np.eye(self.timesteps))
        matrix = matrix @ w1.value @ w2.value @ w3.value
        bias = (b1.value @ w2.value + b2.value) @ w3.value + b3.value
        return matrix, bias


def train_linear_net(
    dataset: EpochedDataset,
    k_dr: int = 80,
    widths=(1000, 300),
    dropout: float = 0.7,
    epochs: int = 2000,
    lr: float = 1e-3,
    seed: int = 0,
    validation: EpochedDataset | None = None,
    early_stop_patience: int | None = None,
) -> LinearNetModel:
    """Train the linear projection network with full-batch Adam.

    k_dr larger than the channel count is clamped with a warning.
    Early stopping is off unless both a validation set and a patience
    are given; when it triggers, the parameters revert to the best
    validation loss seen.

    Raises
    ------
    NumericsError
        If the loss or a gradient stops being finite.
    """
    if dataset.class_count < 2:
        raise ClassCountError("need at least 2 classes to train a classifier")
    c = dataset.channels
    if k_dr > c:
        warnings.warn(f"k_dr={k_dr} exceeds {c} channels; clamping to {c}")
        k_dr = c
    if k_dr < 1:
        raise RangeError(f"k_dr must be positive, got {k_dr}")
    rng = np.random.default_rng(seed)
    model = LinearNetModel(
        c, dataset.timesteps, dataset.class_count, k_dr, widths, dropout, rng
    )
    params = model.parameters()
    adam = nn.Adam(params, lr=lr)
    best_val, since_best, snapshot = np.inf, 0, None
    for epoch_i in range(epochs):
        logits = model.logits(dataset.trials, training=True, rng=rng)
        loss = nn.softmax_cross_entropy(logits, dataset.labels)
        if not np.isfinite(loss.value):
            raise NumericsError(f"training loss diverged at epoch {epoch_i}")
        nn.backward(loss)
        adam.step()
        accuracy = float(np.mean(np.argmax(logits.value, axis=1) == dataset.labels))
        record = {"epoch": epoch_i, "loss": float(loss.value), "accuracy": accuracy}
        if validation is not None:
            val_logits = model.logits(validation.trials)
            val_loss = nn.softmax_cross_entropy(val_logits, validation.labels)
            record["val_loss"] = float(val_loss.value)
            if early_stop_patience is not None:
                if record["val_loss"] < best_val - 1e-12:
                    best_val = record["val_loss"]
                    since_best = 0
                    snapshot = [p.value.copy() for p in params]
                else:
                    since_best += 1
                model.metrics.append(record)
                if since_best >= early_stop_patience:
                    for p, value in zip(params, snapshot):
                        p.value = value
                    break
                continue
        model.metrics.append(record)
    return model


def stratified_kfold(labels, folds: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic per-class k-fold partition.

    Returns a list of (train_indices, test_indices) pairs. Every trial
    appears in exactly one test fold; class proportions are preserved
    up to rounding.

    Raises
    ------
    StratifyError
        If any class has fewer trials than folds.
    """
    y = np.asarray(labels, dtype=np.int64)
    if folds < 2:
        raise RangeError(f"need at least 2 folds, got {folds}")
    rng = np.random.default_rng(seed)
    chunks_per_class = []
    for k in range(int(y.max()) + 1):
        idx = np.flatnonzero(y == k)
        if idx.size < folds:
            raise StratifyError(f"class {k} has {idx.size} trial(s), need at least {folds}")
        chunks_per_class.append(np.array_split(rng.permutation(idx), folds))
    out = []
    everything = np.arange(y.size)
    for f in range(folds):
        test = np.sort(np.concatenate([chunks[f] for chunks in chunks_per_class]))
        train = np.setdiff1d(everything, test)
        out.append((train, test))
    return out


@dataclass(frozen=True)
class PipelineResult:
    """Cross-validated decoding accuracy.

    accuracy is a scalar for full-epoch decoding or a (W,) timecourse
    for sliding windows; window_starts gives each window's first sample
    (None for full-epoch); fold_accuracies keeps the per-fold values.
    """

    accuracy: float | np.ndarray
    window_starts: np.ndarray | None
    fold_accuracies: np.ndarray


def _window_starts(timesteps: int, window) -> tuple[np.ndarray, int]:
    length, stride = int(window[0]), int(window[1])
    if length < 1 or stride < 1:
        raise RangeError(f"window length and stride must be positive, got {window}")
    if length > timesteps:
        raise ShapeError(f"window of {length} samples exceeds trial length {timesteps}")
    return np.arange(0, timesteps - length + 1, stride), length


def _windowed_lda_folds(projected, labels, fold_indices, window, shrinkage):
    """Per-fold LDA accuracies on flattened (projected) features.

    projected is (N, D, T). Returns (fold_accuracies, window_starts):
    full-epoch when window is None, else one LDA per window position.
    """
    n, d, t = projected.shape
    if window is None:
        feats = projected.reshape(n, d * t)
        accs = np.array([
            _lda_accuracy(feats[tr], labels[tr], feats[te], labels[te], shrinkage)
            for tr, te in fold_indices
        ])
        return accs, None
    starts, length = _window_starts(t, window)
    accs = np.empty((len(fold_indices), starts.size))
    for f, (tr, te) in enumerate(fold_indices):
        for w, s in enumerate(starts):
            feats = projected[:, :, s : s + length].reshape(n, d * length)
            accs[f, w] = _lda_accuracy(feats[tr], labels[tr], feats[te], labels[te], shrinkage)
    return accs, starts


def lda_nn_pipeline(
    dataset: EpochedDataset,
    window=None,
    folds: int = 5,
    seed: int = 0,
    shrinkage="auto",
    net: LinearNetModel | None = None,
    k_dr: int = 80,
    net_epochs: int = 2000,
    net_lr: float = 1e-3,
    net_dropout: float = 0.7,
    net_widths=(1000, 300),
) -> PipelineResult:
    """Cross-validated LDA on features projected by the linear network.

    Per fold, a LinearNetModel is trained on the training trials and its
    projection matrix reused for every window; passing net= skips that
    and applies one pre-trained projection everywhere. window=None
    decodes the full epoch; window=(length, stride) in samples slides an
    LDA along the trial, dropping windows that would cross the end.
    """
    fold_indices = stratified_kfold(dataset.labels, folds, seed=seed)
    seeds = np.random.SeedSequence(seed).spawn(len(fold_indices))
    per_fold = []
    starts = None
    for f, (tr, te) in enumerate(fold_indices):
        if net is None:
            fold_net = train_linear_net(
                subset_dataset(dataset, tr),
                k_dr=k_dr,
                widths=net_widths,
                dropout=net_dropout,
                epochs=net_epochs,
                lr=net_lr,
                seed=int(seeds[f].generate_state(1)[0]),
            )
        else:
            fold_net = net
        w = fold_net.w_dr.value
        projected = np.einsum("ck,nct->nkt", w, dataset.trials)
        accs, starts = _windowed_lda_folds(
            projected, dataset.labels, [(tr, te)], window, shrinkage
        )
        per_fold.append(accs[0])
    fold_accuracies = np.array(per_fold)
    accuracy = fold_accuracies.mean(axis=0)
    if window is None:
        accuracy = float(accuracy)
    return PipelineResult(accuracy, starts, fold_accuracies)


def lda_pca_pipeline(
    dataset: EpochedDataset,
    k_dr: int,
    window=None,
    folds: int = 5,
    seed: int = 0,
    shrinkage="auto",
) -> PipelineResult:
    """Cross-validated LDA on PCA-projected features.

    The unsupervised counterpart of lda_nn_pipeline: per fold, a PCA
    basis is fit on the training trials' pooled timepoints and the top
    k_dr components replace the learned projection.
    """
    if k_dr > dataset.channels:
        raise ShapeError(
            f"k_dr={k_dr} exceeds {dataset.channels} channels"
        )
    fold_indices = stratified_kfold(dataset.labels, folds, seed=seed)
    per_fold = []
    starts = None
    for tr, te in fold_indices:
        samples = dataset.trials[tr].transpose(0, 2, 1).reshape(-1, dataset.channels)
        pca = fit_pca(samples, d=k_dr)
        centered = dataset.trials - pca.mean[None, :, None]
        projected = np.einsum("cd,nct->ndt", pca.basis, centered)
        accs, starts = _windowed_lda_folds(
            projected, dataset.labels, [(tr, te)], window, shrinkage
        )
        per_fold.append(accs[0])
    fold_accuracies = np.array(per_fold)
    accuracy = fold_accuracies.mean(axis=0)
    if window is None:
        accuracy = float(accuracy)
    return PipelineResult(accuracy, starts, fold_accuracies)


def pairwise_from_multiclass(probabilities, labels) -> np.ndarray:
    """Binary accuracy for every class pair from multiclass posteriors.

    Entry (i, j) restricts to trials labeled i or j and scores the
    higher of the two posterior entries (ties go to the lower index).
    The diagonal is NaN, as is any pair with no trials.

    Raises
    ------
    NormalizationError
        If any probability row does not sum to 1 within 1e-6.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or y.shape != (probs.shape[0],):
        raise ShapeError(
            f"need (N, K) probabilities and (N,) labels, got {probs.shape} and {y.shape}"
        )
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise NormalizationError(f"probability row {bad} sums to {sums[bad]:.8f}")
    k = probs.shape[1]
    matrix = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(i + 1, k):
            mask = (y == i) | (y == j)
            if not mask.any():
                continue
            predicted = np.where(probs[mask, i] >= probs[mask, j], i, j)
            acc = float(np.mean(predicted == y[mask]))
            matrix[i, j] = matrix[j, i] = acc
    return matrix


def haufe_transform(w, data_cov, latent_cov=None) -> np.ndarray:
    """Activation patterns of a linear extraction filter.

    Computes A = data_cov @ w @ inv(latent_cov). With latent_cov=None
    the latent components are assumed uncorrelated and the unscaled
    shortcut A = data_cov @ w is returned (patterns per column correct
    up to scale).

    Raises
    ------
    SingularError
        If latent_cov is given but numerically singular.
    """
    w = np.asarray(w, dtype=np.float64)
    data_cov = np.asarray(data_cov, dtype=np.float64)
    if w.ndim != 2 or data_cov.shape != (w.shape[0], w.shape[0]):
        raise ShapeError(
            f"filter {w.shape} incompatible with data covariance {data_cov.shape}"
        )
    if latent_cov is None:
        return data_cov @ w
    latent_cov = np.asarray(latent_cov, dtype=np.float64)
    if latent_cov.shape != (w.shape[1], w.shape[1]):
        raise ShapeError(
            f"latent covariance {latent_cov.shape} incompatible with filter {w.shape}"
        )
    if np.linalg.cond(latent_cov) > 1e12:
        raise SingularError("latent covariance is singular; omit it for the shortcut")
    return data_cov @ w @ np.linalg.inv(latent_cov)


class WavenetClassifierModel:
    """Dilated-convolution trial classifier with optional subject embeddings.

    Subject embedding rows are tiled over time and concatenated to the
    input channels, so the first conv layer sees C + E channels. L
    kernel-2 layers with doubling dilation give a receptive field of
    2^L samples; the conv output is downsampled by that stride before
    the fully-connected head.
    """

    def __init__(self, channels, timesteps, class_count, layers, embed_dim,
                 subject_count, hidden, dropout_rate, rng):
        self.channels = channels
        self.timesteps = timesteps
        self.class_count = class_count
        self.layer_count = layers
        self.receptive_field = 2**layers
        self.dropout_rate = dropout_rate
        self.embed_dim = embed_dim if subject_count else 0
        self.subject_count = subject_count
        width = 2 * channels
        self.width = width
        if subject_count:
            self.embed_table = nn.Parameter(
                rng.normal(0.0, 0.1, (subject_count, embed_dim)), name="embed"
            )
        else:
            self.embed_table = None
        self.conv = []
        c_in = channels + self.embed_dim
        for i in range(layers):
            w = nn.Parameter(
                nn.glorot_uniform(rng, (width, c_in, 2), c_in * 2, width),
                name=f"w_conv{i}",
            )
            b = nn.Parameter(np.zeros(width), name=f"b_conv{i}")
            self.conv.append((w, b))
            c_in = width
        t_out = timesteps - self.receptive_field + 1
        t_ds = (t_out - 1) // self.receptive_field + 1
        self.downsampled_length = t_ds
        self.fc1 = (
            nn.Parameter(
                nn.glorot_uniform(rng, (width * t_ds, hidden), width * t_ds, hidden),
                name="w_fc1",
            ),
            nn.Parameter(np.zeros(hidden), name="b_fc1"),
        )
        self.fc2 = (
            nn.Parameter(
                nn.glorot_uniform(rng, (hidden, class_count), hidden, class_count),
                name="w_fc2",
            ),
            nn.Parameter(np.zeros(class_count), name="b_fc2"),
        )
        self.metrics: list[dict] = []

    def parameters(self) -> list[nn.Parameter]:
        params = [] if self.embed_table is None else [self.embed_table]
        for w, b in self.conv:
            params.extend([w, b])
        params.extend([*self.fc1, *self.fc2])
        return params

    def _forward(self, trials, subject_ids, training, rng, embedding_permutation,
                 capture=None):
        trials = np.asarray(trials, dtype=np.float64)
        n, c, t = trials.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        if t < self.receptive_field:
            raise ShapeError(
                f"trial length {t} shorter than receptive field {self.receptive_field}"
            )
        h = nn.constant(trials)
        if self.embed_table is not None:
            if subject_ids is None:
                raise ShapeError("model was trained with subject embeddings; pass subject_ids")
            ids = np.asarray(subject_ids, dtype=np.int64)
            if ids.shape != (n,):
                raise ShapeError(f"subject_ids must be ({n},), got {ids.shape}")
            if ids.min() < 0 or ids.max() >= self.subject_count:
                raise RangeError(f"subject ids must lie in [0, {self.subject_count})")
            if embedding_permutation is not None:
                ids = ids[np.asarray(embedding_permutation, dtype=np.int64)]
            rows = nn.embedding(self.embed_table, ids)
            tiled = nn.matmul(
                nn.reshape(rows, (n * self.embed_dim, 1)), nn.constant(np.ones((1, t)))
            )
            h = nn.concat([h, nn.reshape(tiled, (n, self.embed_dim, t))], axis=1)
        for i, (w, b) in enumerate(self.conv):
            if capture is not None:
                capture.append(h.value.copy())
            h = nn.asinh(nn.bias_add(nn.conv1d(h, w, dilation=2**i), b))
            h = nn.dropout(h, self.dropout_rate, rng, training)
        step = self.receptive_field
        columns = [
            nn.crop(h, 2, j * step, j * step + 1) for j in range(self.downsampled_length)
        ]
        h = columns[0] if len(columns) == 1 else nn.concat(columns, axis=2)
        h = nn.reshape(h, (n, self.width * self.downsampled_length))
        h = nn.asinh(nn.affine(h, *self.fc1))
        h = nn.dropout(h, self.dropout_rate, rng, training)
        return nn.affine(h, *self.fc2)

    def logits(self, trials, subject_ids=None, training=False, rng=None,
               embedding_permutation=None) -> nn.Tensor:
        return self._forward(trials, subject_ids, training, rng, embedding_permutation)

    def predict_proba(self, trials, subject_ids=None, embedding_permutation=None) -> np.ndarray:
        logits = self._forward(trials, subject_ids, False, None, embedding_permutation)
        return nn.softmax(logits.value, axis=1)

    def conv_kernel(self, layer: int) -> tuple[np.ndarray, int]:
        """Weights (C_out, C_in, 2) and dilation of one conv layer."""
        if not 0 <= layer < self.layer_count:
            raise IndexError(f"layer must lie in [0, {self.layer_count})")
        return self.conv[layer][0].value.copy(), 2**layer

    def layer_input(self, trials, layer: int, subject_ids=None) -> np.ndarray:
        """Eval-mode activations feeding one conv layer, as (N, C_in, T_in)."""
        if not 0 <= layer < self.layer_count:
            raise IndexError(f"layer must lie in [0, {self.layer_count})")
        capture: list[np.ndarray] = []
        self._forward(trials, subject_ids, False, None, None, capture=capture)
        return capture[layer]


def train_wavenet_classifier(
    dataset: EpochedDataset,
    layers: int,
    subject_ids=None,
    embed_dim: int = 10,
    dropout: float = 0.5,
    lr: float = 1e-3,
    epochs: int = 200,
    hidden: int = 64,
    seed: int = 0,
) -> WavenetClassifierModel:
    """Train the dilated-convolution classifier with full-batch Adam.

    With subject_ids (one integer per trial), an embedding table is
    learned jointly with the conv weights and its rows are concatenated
    to the input channels at every timepoint.

    Raises
    ------
    ShapeError
        If trials are shorter than the 2^layers receptive field.
    NumericsError
        If the loss or a gradient stops being finite.
    """
    if dataset.class_count < 2:
        raise ClassCountError("need at least 2 classes to train a classifier")
    if layers < 1:
        raise RangeError(f"need at least one conv layer, got {layers}")
    if dataset.timesteps < 2**layers:
        raise ShapeError(
            f"trial length {dataset.timesteps} shorter than receptive field {2**layers}"
        )
    subject_count = 0
    if subject_ids is not None:
        subject_ids = np.asarray(subject_ids, dtype=np.int64)
        if subject_ids.shape != (dataset.n_trials,):
            raise ShapeError(
                f"subject_ids must be ({dataset.n_trials},), got {subject_ids.shape}"
            )
        subject_count = int(subject_ids.max()) + 1
    rng = np.random.default_rng(seed)
    model = WavenetClassifierModel(
        dataset.channels, dataset.timesteps, dataset.class_count, layers,
        embed_dim, subject_count, hidden, dropout, rng,
    )
    adam = nn.Adam(model.parameters(), lr=lr)
    for epoch_i in range(epochs):
        logits = model.logits(
            dataset.trials, subject_ids=subject_ids, training=True, rng=rng
        )
        loss = nn.softmax_cross_entropy(logits, dataset.labels)
        if not np.isfinite(loss.value):
            raise NumericsError(f"training loss diverged at epoch {epoch_i}")
        nn.backward(loss)
        adam.step()
        accuracy = float(np.mean(np.argmax(logits.value, axis=1) == dataset.labels))
        model.metrics.append(
            {"epoch": epoch_i, "loss": float(loss.value), "accuracy": accuracy}
        )
    return model
