"""Event-switching ground-truth signal generator.

A hidden event sequence switches between K oscillator types. Each event
type k drives a damped AR(2) resonator at frequency f_k; the resonator
output is compressed with asinh and observation noise is added on top.
The generator is the oracle every forecaster and state model in this
package is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .core import MultichannelSeries
from .errors import FrequencyError, RangeError, ShapeError

__all__ = [
    "SimSpec",
    "ar2_coefficients",
    "sample_state_timecourse",
    "render",
    "simulate",
]


@dataclass(frozen=True)
class SimSpec:
    """Parameters of the event-switching generator.

    Parameters
    ----------
    frequencies : sequence of float
        Oscillator frequency per event type, Hz; each in (0, fs/2).
    transition : ndarray, shape (K, K)
        Row-stochastic matrix; row k gives the distribution of the next
        event type after an event of type k expires.
    lifetime_shape, lifetime_scale_ms : float
        Gamma parameters of event lifetimes. The scale is in
        milliseconds; sampled lifetimes are rounded half-up to whole
        samples and clamped to at least one sample.
    damping : float
        Exponential amplitude decay per sample, restarted at each event
        onset.
    ar_noise_std : sequence of float
        Innovation std per event type. An event type with std 0 emits
        nothing unless impulse_at_onset is set.
    impulse_at_onset : bool
        When set, event types with zero innovation std receive a unit
        impulse on their first sample so noiseless events still ring.
        Off by default so a fully silent spec renders exact zeros.
    obs_noise_std : float
        Std of the additive observation noise (applied after asinh).
    fs : float
        Sampling rate in Hz.
    duration : int
        Output length in samples.
    """

    frequencies: tuple
    transition: np.ndarray
    ar_noise_std: tuple
    obs_noise_std: float
    duration: int
    fs: float = 250.0
    lifetime_shape: float = 10.0
    lifetime_scale_ms: float = 10.0
    damping: float = 0.005
    impulse_at_onset: bool = False

    def __post_init__(self):
        freqs = tuple(float(f) for f in np.atleast_1d(self.frequencies))
        P = np.array(self.transition, dtype=np.float64)
        noise = tuple(float(s) for s in np.atleast_1d(self.ar_noise_std))
        K = len(freqs)
        if P.shape != (K, K):
            raise ShapeError(f"transition matrix must be {K}x{K}, got {P.shape}")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise RangeError("transition matrix rows must sum to 1")
        if np.any(P < 0):
            raise RangeError("transition probabilities must be nonnegative")
        if len(noise) != K:
            raise ShapeError(f"need {K} ar_noise_std values, got {len(noise)}")
        for f in freqs:
            if not 0 < f < self.fs / 2:
                raise FrequencyError(f"frequency {f} Hz outside (0, {self.fs / 2})")
        if any(s < 0 for s in noise) or self.obs_noise_std < 0:
            raise RangeError("noise stds must be nonnegative")
        if self.lifetime_shape <= 0 or self.lifetime_scale_ms <= 0:
            raise RangeError("gamma lifetime parameters must be positive")
        if self.duration < 0:
            raise RangeError("duration must be nonnegative")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "ar_noise_std", noise)

    @property
    def n_states(self) -> int:
        return len(self.frequencies)


def ar2_coefficients(f: float, fs: float) -> tuple[float, float]:
    """Coefficients of the marginally stable AR(2) resonator at f Hz.

    Returns (phi1, phi2) with phi1 = 2 cos(2 pi f / fs) and phi2 = -1,
    which places the poles on the unit circle at angle 2 pi f / fs.
    """
    if not 0 < f < fs / 2:
        raise FrequencyError(f"frequency {f} Hz outside (0, {fs / 2})")
    return 2.0 * np.cos(2.0 * np.pi * f / fs), -1.0


def _lifetime_samples(rng: np.random.Generator, spec: SimSpec) -> int:
    ms = rng.gamma(spec.lifetime_shape, spec.lifetime_scale_ms)
    return max(1, int(np.floor(ms * spec.fs / 1000.0 + 0.5)))


def sample_state_timecourse(spec: SimSpec, seed) -> np.ndarray:
    """Draw the latent event sequence as a length-duration int array.

    The first event type is uniform over K; every later event is drawn
    from the transition row of the event that just expired. Lifetimes
    are Gamma(shape, scale_ms) in milliseconds, rounded to samples.
    """
    rng = np.random.default_rng(seed)
    K = spec.n_states
    out = np.empty(spec.duration, dtype=np.int64)
    pos = 0
    state = int(rng.integers(K))
    while pos < spec.duration:
        life = _lifetime_samples(rng, spec)
        out[pos : pos + life] = state
        pos += life
        state = int(rng.choice(K, p=spec.transition[state]))
    return out


def render(spec: SimSpec, state_tc: np.ndarray, seed) -> MultichannelSeries:
    """Render the observed signal for a given event sequence.

    Within each event, z follows the event type's AR(2) recursion with
    innovations N(0, sigma_s^2); z and the damping clock restart at each
    event onset. The sample emitted is asinh(z * exp(-damping * t)) plus
    observation noise.
    """
    state_tc = np.asarray(state_tc, dtype=np.int64)
    if state_tc.shape != (spec.duration,):
        raise ShapeError(
            f"state timecourse length {state_tc.shape} does not match duration {spec.duration}"
        )
    rng = np.random.default_rng(seed)
    T = spec.duration
    x = np.zeros(T)
    if T:
        phi = np.array([ar2_coefficients(f, spec.fs) for f in spec.frequencies])
        bounds = np.concatenate(([0], np.flatnonzero(np.diff(state_tc)) + 1, [T]))
        for a, b in zip(bounds[:-1], bounds[1:]):
            s = state_tc[a]
            sigma = spec.ar_noise_std[s]
            if sigma > 0:
                eps = sigma * rng.standard_normal(b - a)
            else:
                eps = np.zeros(b - a)
                if spec.impulse_at_onset:
                    eps[0] = 1.0
            z = lfilter([1.0], [1.0, -phi[s, 0], -phi[s, 1]], eps)
            x[a:b] = np.arcsinh(z * np.exp(-spec.damping * np.arange(b - a)))
        if spec.obs_noise_std > 0:
            x = x + spec.obs_noise_std * rng.standard_normal(T)
    return MultichannelSeries(x[None, :], spec.fs)


def simulate(spec: SimSpec, seed) -> tuple[MultichannelSeries, np.ndarray]:
    """Sample the event sequence and render it, from one top-level seed.

    The seed is split deterministically: child 0 drives the event
    sequence, child 1 the renderer, so the returned timecourse is
    bit-identical to sample_state_timecourse(spec, child 0).
    """
    s_tc, s_render = np.random.SeedSequence(seed).spawn(2)
    state_tc = sample_state_timecourse(spec, s_tc)
    series = render(spec, state_tc, s_render)
    return series, state_tc
