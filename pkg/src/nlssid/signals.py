"""Signal containers, excitation generators, normalization and error metrics.

Convention used throughout the package: all standard deviations are the
population kind (divide by N, ``ddof=0``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Dataset",
    "Normalization",
    "MultisineSpec",
    "SweepSpec",
    "generate_multisine",
    "generate_sinesweep",
    "normalize_dataset",
    "denormalize_dataset",
    "apply_normalization",
    "denormalize_output",
    "rmse",
]


def as_2d(a, name="array"):
    """Coerce a 1-D signal to a single-channel column matrix."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass
class Normalization:
    """Per-channel affine transform: stored = (raw - offset) / scale."""

    u_offset: np.ndarray
    u_scale: np.ndarray
    y_offset: np.ndarray
    y_scale: np.ndarray

    def __post_init__(self):
        self.u_offset = np.atleast_1d(np.asarray(self.u_offset, dtype=float))
        self.u_scale = np.atleast_1d(np.asarray(self.u_scale, dtype=float))
        self.y_offset = np.atleast_1d(np.asarray(self.y_offset, dtype=float))
        self.y_scale = np.atleast_1d(np.asarray(self.y_scale, dtype=float))
        if np.any(self.u_scale == 0) or np.any(self.y_scale == 0):
            raise ValueError("normalization scales must be nonzero")


@dataclass
class Dataset:
    """Sampled input/output record: ``u`` is (N, n_u), ``y`` is (N, n_y)."""

    u: np.ndarray
    y: np.ndarray
    sample_rate: float
    normalization: Normalization | None = None

    def __post_init__(self):
        self.u = as_2d(self.u, "u")
        self.y = as_2d(self.y, "y")
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"u and y must have the same number of samples, "
                f"got {self.u.shape[0]} and {self.y.shape[0]}"
            )
        if self.u.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_samples(self):
        return self.u.shape[0]

    @property
    def n_u(self):
        return self.u.shape[1]

    @property
    def n_y(self):
        return self.y.shape[1]


@dataclass(frozen=True)
class MultisineSpec:
    """Random-phase multisine on the full integer bin grid in [f_min, f_max]."""

    n_samples: int
    sample_rate: float
    f_min: float
    f_max: float
    target_rms: float
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not 0 < self.f_min <= self.f_max:
            raise ValueError("need 0 < f_min <= f_max")
        if not self.f_max < self.sample_rate / 2:
            raise ValueError("f_max must be below the Nyquist frequency")
        if not self.target_rms > 0:
            raise ValueError("target_rms must be positive")


@dataclass(frozen=True)
class SweepSpec:
    """Linear sine sweep; ``amplitude`` is the RMS level (peak is sqrt(2)x)."""

    f_start: float
    f_end: float
    sweep_rate: float  # Hz per minute
    amplitude: float
    sample_rate: float

    def __post_init__(self):
        nyq = self.sample_rate / 2
        if not (0 < self.f_start < nyq and 0 < self.f_end < nyq):
            raise ValueError("f_start and f_end must lie in (0, Nyquist)")
        if self.f_end < self.f_start:
            raise ValueError("f_end must be >= f_start")
        if not self.sweep_rate > 0:
            raise ValueError("sweep_rate must be positive")


def generate_multisine(spec: MultisineSpec) -> np.ndarray:
    """Generate one period of a random-phase multisine.

    Every integer frequency bin between round(f_min*N/fs) and
    round(f_max*N/fs) carries a cosine of equal amplitude; phases are drawn
    i.i.d. uniform on [0, 2pi) from the seeded generator.  The result is
    scaled so its sample RMS equals ``target_rms`` exactly, and is periodic
    with period ``n_samples`` by construction.
    """
    n = spec.n_samples
    fs = spec.sample_rate
    k_min = int(round(spec.f_min * n / fs))
    k_max = int(round(spec.f_max * n / fs))
    # bin 0 would add a DC offset and bins >= N/2 cannot carry a free phase
    k_min = max(k_min, 1)
    k_max = min(k_max, (n - 1) // 2)
    if k_min > k_max:
        raise ValueError(
            f"excited bin grid is empty: rounded bins [{k_min}, {k_max}] "
            f"for band [{spec.f_min}, {spec.f_max}] Hz at N={n}, fs={fs}"
        )
    bins = np.arange(k_min, k_max + 1)
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=bins.size)

    spectrum = np.zeros(n, dtype=complex)
    spectrum[bins] = np.exp(1j * phases)
    # N * Re(ifft) == sum_k cos(2 pi k m / N + phi_k)
    u = n * np.fft.ifft(spectrum).real
    u *= spec.target_rms / np.sqrt(np.mean(u * u))
    return u


def generate_sinesweep(spec: SweepSpec, duration: float) -> np.ndarray:
    """Generate a linear sine sweep of the given duration in seconds.

    The instantaneous frequency is f_start + r*t with r = sweep_rate/60 Hz/s;
    ``duration`` must be long enough for the sweep to cover [f_start, f_end].
    """
    rate_hz_s = spec.sweep_rate / 60.0
    needed = (spec.f_end - spec.f_start) / rate_hz_s if rate_hz_s > 0 else 0.0
    if duration < needed - 1e-9:
        raise ValueError(
            f"duration {duration} s too short to cover "
            f"[{spec.f_start}, {spec.f_end}] Hz at {spec.sweep_rate} Hz/min "
            f"(needs {needed} s)"
        )
    f_final = spec.f_start + rate_hz_s * duration
    if f_final >= spec.sample_rate / 2:
        warnings.warn(
            "sweep passes the Nyquist frequency before the record ends",
            stacklevel=2,
        )
    n = int(round(duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    phase = 2.0 * np.pi * (spec.f_start * t + 0.5 * rate_hz_s * t * t)
    return spec.amplitude * np.sqrt(2.0) * np.cos(phase)


def _channel_stats(a, what):
    offset = a.mean(axis=0)
    scale = a.std(axis=0)  # population std
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise ValueError(f"{what} channel {zero[0]} has zero variance")
    return offset, scale


def normalize_dataset(d: Dataset, normalize_output: bool = False) -> Dataset:
    """Scale each input channel to zero mean and unit (population) std.

    Output channels are left untouched unless ``normalize_output`` is set,
    in which case they get the same treatment.  The applied offsets and
    scales are recorded so the transform can be inverted exactly.
    """
    if d.normalization is not None:
        raise ValueError("dataset is already normalized")
    u_off, u_scl = _channel_stats(d.u, "input")
    if normalize_output:
        y_off, y_scl = _channel_stats(d.y, "output")
    else:
        y_off = np.zeros(d.n_y)
        y_scl = np.ones(d.n_y)
    norm = Normalization(u_off, u_scl, y_off, y_scl)
    return Dataset(
        (d.u - u_off) / u_scl,
        (d.y - y_off) / y_scl,
        d.sample_rate,
        normalization=norm,
    )


def denormalize_dataset(d: Dataset) -> Dataset:
    """Invert :func:`normalize_dataset`, returning data in original units."""
    if d.normalization is None:
        raise ValueError("dataset carries no normalization record")
    n = d.normalization
    return Dataset(
        d.u * n.u_scale + n.u_offset,
        d.y * n.y_scale + n.y_offset,
        d.sample_rate,
        normalization=None,
    )


def apply_normalization(d: Dataset, norm: Normalization) -> Dataset:
    """Apply an existing transform (e.g. the training one) to a raw dataset."""
    if d.normalization is not None:
        raise ValueError("dataset is already normalized")
    return Dataset(
        (d.u - norm.u_offset) / norm.u_scale,
        (d.y - norm.y_offset) / norm.y_scale,
        d.sample_rate,
        normalization=replace(norm),
    )


def denormalize_output(y: np.ndarray, norm: Normalization) -> np.ndarray:
    """Map model output from normalized back to original units."""
    return as_2d(y, "y") * norm.y_scale + norm.y_offset


def rmse(y: np.ndarray, y_hat: np.ndarray, skip: int = 0) -> float:
    """Root mean squared error over samples with index >= ``skip``.

    For multi-channel signals the mean runs over all remaining samples and
    channels.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    n = y.shape[0]
    if not 0 <= skip < n:
        raise ValueError(f"skip={skip} must satisfy 0 <= skip < {n}")
    e = (y - y_hat)[skip:]
    return float(np.sqrt(np.mean(e * e)))
