"""Linear baselines: PCA, whitening, autoregressive fitting, the AR
power spectral density, and recursive AR generation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EpochedDataset, MultichannelSeries
from .errors import DivergenceError, FrequencyError, RangeError, ShapeError

__all__ = [
    "PCAProjection",
    "ARModel",
    "fit_pca",
    "pca_project",
    "whiten",
    "fit_ar",
    "ar_psd",
    "ar_predict",
    "ar_generate",
]


@dataclass(frozen=True)
class PCAProjection:
    """Orthonormal basis of the leading eigenvectors of the sample covariance.

    basis columns (C x D) are ordered by descending eigenvalue; each
    column's largest-magnitude entry is made positive so the
    decomposition is deterministic. rank_deficient is set when more
    components were requested than the data's numerical rank supports.
    """

    basis: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    explained_fraction: np.ndarray
    rank_deficient: bool


@dataclass(frozen=True)
class ARModel:
    """Autoregressive model of order P.

    Univariate mode stores per-channel coefficient rows (C x P,
    lag 1 first) and per-channel innovation variances. Multivariate mode
    stores P full C x C lag matrices and an innovation covariance.
    regularized flags a ridge fallback after a singular design matrix.
    """

    order: int
    mode: str
    coeffs: np.ndarray
    noise: np.ndarray
    fs: float
    regularized: bool = False

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0] if self.mode == "univariate" else self.coeffs.shape[1]


def _as_samples(data) -> np.ndarray:
    """Accept an N x C matrix or a MultichannelSeries (transposed to T x C)."""
    if isinstance(data, MultichannelSeries):
        return data.data.T
    return np.asarray(data, dtype=np.float64)


def fit_pca(data, d: int | None = None) -> PCAProjection:
    """Eigen-decompose the sample covariance and keep the top d components.

    Parameters
    ----------
    data : N x C array or MultichannelSeries
    d : int or None
        Component count; defaults to C. ShapeError if d > C.
    """
    X = _as_samples(data)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError("need a 2-D array with at least 2 samples")
    n, c = X.shape
    if d is None:
        d = c
    if d > c:
        raise ShapeError(f"cannot keep {d} components of {c}-dimensional data")
    if d < 1:
        raise RangeError("need at least one component")
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, ddof=1).reshape(c, c)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for j in range(c):
        if eigvecs[np.argmax(np.abs(eigvecs[:, j])), j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    total = eigvals.sum()
    frac = eigvals[:d] / total if total > 0 else np.zeros(d)
    tol = max(c, n) * np.finfo(np.float64).eps * max(eigvals.max(), 0.0)
    rank = int(np.sum(eigvals > tol))
    return PCAProjection(eigvecs[:, :d], eigvals[:d], mean, frac, rank < d)


def pca_project(proj: PCAProjection, data, whiten_components: bool = False) -> np.ndarray:
    """Project N x C data (or a series) onto the PCA basis.

    With whiten_components, each score is divided by sqrt(eigenvalue);
    components whose eigenvalue is numerically zero are zeroed instead
    of amplified.
    """
    X = _as_samples(data)
    scores = (X - proj.mean) @ proj.basis
    if whiten_components:
        ev = proj.eigenvalues
        tol = 1e-12 * max(float(ev.max()), 1e-300)
        scale = np.where(ev > tol, 1.0 / np.sqrt(np.where(ev > tol, ev, 1.0)), 0.0)
        scores = scores * scale
    return scores


def whiten(data, fit_data=None):
    """Decorrelate channels with a full PCA fitted on fit_data.

    data may be an EpochedDataset (channels whitened using all trials'
    timepoints as samples) or an N x C array / series. fit_data defaults
    to data itself; pass the training portion to avoid leakage.
    Returns the same container type with all components kept.
    """
    if fit_data is None:
        fit_data = data

    def samples(obj):
        if isinstance(obj, EpochedDataset):
            return obj.trials.transpose(0, 2, 1).reshape(-1, obj.channels)
        return _as_samples(obj)

    proj = fit_pca(samples(fit_data))
    if isinstance(data, EpochedDataset):
        flat = data.trials.transpose(0, 2, 1).reshape(-1, data.channels)
        scores = pca_project(proj, flat, whiten_components=True)
        trials = scores.reshape(data.n_trials, data.timesteps, data.channels)
        return EpochedDataset(trials.transpose(0, 2, 1), data.labels, data.fs, data.class_count)
    if isinstance(data, MultichannelSeries):
        scores = pca_project(proj, data, whiten_components=True)
        return MultichannelSeries(scores.T, data.fs)
    return pca_project(proj, data, whiten_components=True)


def _lag_design(x: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of [x_{t-1}, ..., x_{t-P}] stacked channel-wise, targets x_t."""
    c, T = x.shape
    cols = [x[:, order - p : T - p] for p in range(1, order + 1)]
    design = np.concatenate(cols, axis=0)
    return design.T, x[:, order:].T


def _solve_ols(design: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, bool]:
    coef, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank == design.shape[1]:
        return coef, False
    lam = 1e-8
    gram = design.T @ design + lam * np.eye(design.shape[1])
    coef = np.linalg.solve(gram, design.T @ targets)
    return coef, True


def fit_ar(series: MultichannelSeries, order: int, mode: str = "univariate") -> ARModel:
    """Least-squares fit of an AR(order) model.

    Univariate fits each channel on its own lags; multivariate regresses
    every channel on all channels' lags jointly. A singular design
    matrix falls back to ridge (lambda = 1e-8) and sets regularized.
    """
    if order < 1:
        raise RangeError("order must be >= 1")
    x = series.data
    c, T = x.shape
    if mode == "univariate":
        if T <= 2 * order:
            raise ShapeError(f"series length {T} too short for order {order}")
        coeffs = np.empty((c, order))
        noise = np.empty(c)
        regularized = False
        for ch in range(c):
            design, targets = _lag_design(x[ch : ch + 1], order)
            coef, reg = _solve_ols(design, targets[:, 0])
            coeffs[ch] = coef
            resid = targets[:, 0] - design @ coef
            noise[ch] = float(np.mean(resid**2))
            regularized |= reg
        return ARModel(order, mode, coeffs, noise, series.fs, regularized)
    if mode == "multivariate":
        if T <= order + c * order:
            raise ShapeError(f"series length {T} too short for joint order-{order} fit")
        design, targets = _lag_design(x, order)
        coef, regularized = _solve_ols(design, targets)
        lag_mats = coef.T.reshape(c, order, c).transpose(1, 0, 2)
        resid = targets - design @ coef
        sigma = np.cov(resid, rowvar=False, ddof=0).reshape(c, c)
        return ARModel(order, mode, lag_mats, sigma, series.fs, regularized)
    raise RangeError(f"unknown mode {mode!r}")


def ar_psd(model: ARModel, freqs, fs: float | None = None) -> np.ndarray:
    """Parametric PSD matrix S(f) = H(f) Sigma H(f)^H / (2 pi) per frequency.

    H(f) = (I - sum_p A_p exp(-2 pi i f p / fs))^{-1}. A univariate model
    is treated as diagonal. Returns a complex (F, C, C) array whose
    diagonal is real and nonnegative.
    """
    fs = model.fs if fs is None else fs
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    for f in freqs:
        if f < 0 or f >= fs / 2:
            raise FrequencyError(f"frequency {f} Hz outside [0, {fs / 2})")
    c = model.channels
    out = np.empty((freqs.size, c, c), dtype=np.complex128)
    p_idx = np.arange(1, model.order + 1)
    for i, f in enumerate(freqs):
        phase = np.exp(-2j * np.pi * f * p_idx / fs)
        if model.mode == "univariate":
            a = 1.0 - model.coeffs @ phase
            h = 1.0 / a
            out[i] = np.diag(model.noise * np.abs(h) ** 2 / (2.0 * np.pi))
        else:
            A = np.eye(c, dtype=np.complex128)
            for p in range(model.order):
                A -= model.coeffs[p] * phase[p]
            H = np.linalg.inv(A)
            out[i] = H @ model.noise @ H.conj().T / (2.0 * np.pi)
    return out


def _step(model: ARModel, history: np.ndarray) -> np.ndarray:
    """One-step conditional mean from history (C, >=P), newest last."""
    P = model.order
    lags = history[:, -1 : -P - 1 : -1]
    if model.mode == "univariate":
        return np.sum(model.coeffs * lags, axis=1)
    return sum(model.coeffs[p] @ lags[:, p] for p in range(P))


def ar_predict(model: ARModel, history: np.ndarray, horizon: int) -> np.ndarray:
    """Recursive noiseless forecast of the next `horizon` samples.

    history is (C, >= order), newest sample last. Returns (C, horizon).
    """
    P = model.order
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[1] < P:
        raise ShapeError(f"history must be (C, >= {P})")
    buf = history[:, -P:].copy()
    out = np.empty((history.shape[0], horizon))
    for h in range(horizon):
        nxt = _step(model, buf)
        out[:, h] = nxt
        buf = np.concatenate([buf[:, 1:], nxt[:, None]], axis=1)
    return out


def ar_predict_batch(model: ARModel, histories: np.ndarray, horizon: int) -> np.ndarray:
    """Vectorized ar_predict over N histories: (N, C, >=P) -> (N, C, horizon)."""
    P = model.order
    histories = np.asarray(histories, dtype=np.float64)
    if histories.ndim != 3 or histories.shape[2] < P:
        raise ShapeError(f"histories must be (N, C, >= {P})")
    buf = histories[:, :, -P:].copy()
    out = np.empty((histories.shape[0], histories.shape[1], horizon))
    for h in range(horizon):
        lags = buf[:, :, ::-1]
        if model.mode == "univariate":
            nxt = np.einsum("cp,ncp->nc", model.coeffs, lags)
        else:
            nxt = sum(
                np.einsum("ij,nj->ni", model.coeffs[p], lags[:, :, p]) for p in range(P)
            )
        out[:, :, h] = nxt
        buf = np.concatenate([buf[:, :, 1:], nxt[:, :, None]], axis=2)
    return out


def ar_generate(
    model: ARModel, steps: int, seed, noise_scale: float = 1.0
) -> MultichannelSeries:
    """Generate recursively from zero history with Gaussian innovations.

    Innovations use the fitted noise parameters scaled by noise_scale.
    Aborts with DivergenceError when any magnitude exceeds 1e6.
    """
    if steps < 1:
        raise RangeError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    c, P = model.channels, model.order
    if model.mode == "univariate":
        sigma = np.sqrt(model.noise)
        draw = lambda: sigma * rng.standard_normal(c)
    else:
        chol = np.linalg.cholesky(model.noise + 1e-12 * np.eye(c))
        draw = lambda: chol @ rng.standard_normal(c)
    buf = np.zeros((c, P))
    out = np.empty((c, steps))
    for t in range(steps):
        x = _step(model, buf) + noise_scale * draw()
        if np.max(np.abs(x)) > 1e6:
            raise DivergenceError(f"generation diverged at step {t}")
        out[:, t] = x
        buf = np.concatenate([buf[:, 1:], x[:, None]], axis=1)
    return MultichannelSeries(out, model.fs)
