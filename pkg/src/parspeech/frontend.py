"""Feature front end: MFCC, deltas, log-mel and Gabor spectro-temporal streams."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.fft import dct

from .errors import DimensionError, EmptyInputError

FRAME_PERIOD = 0.010
PRE_EMPHASIS = 0.97
N_MELS = 26
LOG_FLOOR = 1e-10
KINDS = ("mfcc", "logmel", "gabor", "posterior", "raw")


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    """``n_frames x dim`` features. Posterior rows must be distributions."""

    data: np.ndarray
    frame_period: float = FRAME_PERIOD
    kind: str = "raw"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[1] < 1:
            raise DimensionError(f"features must be (n_frames, dim>=1), got {data.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if not np.all(np.isfinite(data)):
            raise ValueError("features must be finite")
        if self.frame_period <= 0:
            raise ValueError("frame_period must be positive")
        if self.kind == "posterior" and data.shape[0]:
            if np.any(data < 0) or np.any(np.abs(data.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("posterior rows must be nonnegative and sum to 1")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    @property
    def duration(self):
        return self.n_frames * self.frame_period

    def __len__(self):
        return self.n_frames

    def slice(self, start, stop):
        return FeatureMatrix(self.data[start:stop], self.frame_period, self.kind)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels, sample_rate, fmin=0.0, fmax=None):
    fmax = sample_rate / 2.0 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_center_frequencies(n_mels=N_MELS, sample_rate=16000, fmin=0.0, fmax=None):
    return mel_band_edges(n_mels, sample_rate, fmin, fmax)[1:-1]


def mel_filterbank(n_mels, n_fft, sample_rate, fmin=0.0, fmax=None):
    """Triangular filters on the rfft bin frequencies, shape ``(n_mels, n_fft//2 + 1)``."""
    edges = mel_band_edges(n_mels, sample_rate, fmin, fmax)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def n_frames_for(n_samples, win_samples, hop_samples):
    if n_samples < win_samples:
        return 0
    return (n_samples - win_samples) // hop_samples + 1


def _frames(audio, window, hop):
    if not window >= hop > 0:
        raise ValueError("need window >= hop > 0")
    win = int(round(window * audio.sample_rate))
    step = int(round(hop * audio.sample_rate))
    x = audio.samples
    if x.size < win or win < 1:
        raise EmptyInputError(f"audio of {x.size} samples is shorter than one {win}-sample window")
    emphasized = np.append(x[:1], x[1:] - PRE_EMPHASIS * x[:-1])
    n = n_frames_for(x.size, win, step)
    idx = np.arange(win)[None, :] + step * np.arange(n)[:, None]
    return emphasized[idx] * np.hamming(win), win


def compute_logmel(audio, window=0.025, hop=FRAME_PERIOD, n_mels=N_MELS):
    """Log mel filterbank energies of the magnitude spectrum."""
    frames, win = _frames(audio, window, hop)
    n_fft = 1 << (win - 1).bit_length()
    spectrum = np.abs(np.fft.rfft(frames, n_fft))
    energies = spectrum @ mel_filterbank(n_mels, n_fft, audio.sample_rate).T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), hop, "logmel")


def compute_mfcc(audio, window=0.025, hop=FRAME_PERIOD, n_coeffs=13, n_mels=N_MELS):
    """MFCCs: pre-emphasis, Hamming window, magnitude spectrum, mel, log, DCT-II."""
    if n_coeffs < 1 or n_coeffs > n_mels:
        raise ValueError(f"n_coeffs must be in [1, {n_mels}]")
    logmel = compute_logmel(audio, window, hop, n_mels)
    cep = dct(logmel.data, type=2, axis=1, norm="ortho")[:, :n_coeffs]
    return FeatureMatrix(cep, hop, "mfcc")


def log_frame_energy(audio, window=0.025, hop=FRAME_PERIOD):
    """Log of the raw (unwindowed) sample energy per frame, floored like the mel energies."""
    win = int(round(window * audio.sample_rate))
    step = int(round(hop * audio.sample_rate))
    n = n_frames_for(audio.samples.size, win, step)
    if n == 0:
        raise EmptyInputError(f"audio of {audio.samples.size} samples is shorter than one {win}-sample window")
    idx = np.arange(win)[None, :] + step * np.arange(n)[:, None]
    energy = (audio.samples[idx] ** 2).sum(axis=1)
    return np.log(np.maximum(energy, LOG_FLOOR))


def _regression_delta(x, width=2):
    n = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], width, axis=0), x, np.repeat(x[-1:], width, axis=0)])
    denom = 2.0 * sum(k * k for k in range(1, width + 1))
    out = np.zeros_like(x)
    for k in range(1, width + 1):
        out += k * (padded[width + k : width + k + n] - padded[width - k : width - k + n])
    return out / denom


def append_deltas(features, order=2):
    """Append regression deltas (+-2 frames, edge replication) up to ``order``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if features.n_frames < 1:
        raise EmptyInputError("need at least one frame")
    blocks = [features.data]
    for _ in range(order):
        blocks.append(_regression_delta(blocks[-1]))
    return FeatureMatrix(np.hstack(blocks), features.frame_period, features.kind)


@dataclass(frozen=True)
class GaborFilterSpec:
    """One spectro-temporal filter. Rates: Hz in time, cycles/channel in frequency."""

    temporal_rate: float
    spectral_rate: float
    temporal_extent: int
    spectral_extent: int

    def __post_init__(self):
        for ext in (self.temporal_extent, self.spectral_extent):
            if ext < 1 or ext % 2 == 0:
                raise ValueError("filter extents must be odd and >= 1")
        if not (math.isfinite(self.temporal_rate) and math.isfinite(self.spectral_rate)):
            raise ValueError("filter rates must be finite")


def gabor_kernel(spec, frame_period=FRAME_PERIOD):
    """Gaussian envelope (sigma = extent/6 per axis) times a cosine carrier."""
    t = np.arange(spec.temporal_extent) - spec.temporal_extent // 2
    f = np.arange(spec.spectral_extent) - spec.spectral_extent // 2
    st = spec.temporal_extent / 6.0
    sf = spec.spectral_extent / 6.0
    tt, ff = np.meshgrid(t, f, indexing="ij")
    envelope = np.exp(-0.5 * (tt / st) ** 2 - 0.5 * (ff / sf) ** 2)
    carrier = np.cos(2.0 * np.pi * (spec.temporal_rate * frame_period * tt + spec.spectral_rate * ff))
    return envelope * carrier


def apply_gabor_stream(logmel, spec):
    """2-D convolution of a log-mel spectrogram with one Gabor kernel, edges replicated."""
    if logmel.kind != "logmel":
        raise ValueError(f"expected a logmel FeatureMatrix, got {logmel.kind!r}")
    if spec.temporal_extent > logmel.n_frames or spec.spectral_extent > logmel.dim:
        raise DimensionError(
            f"{spec.temporal_extent}x{spec.spectral_extent} filter exceeds "
            f"{logmel.n_frames}x{logmel.dim} spectrogram"
        )
    kernel = gabor_kernel(spec, logmel.frame_period)
    out = ndimage.convolve(logmel.data, kernel, mode="nearest")
    return FeatureMatrix(out, logmel.frame_period, "gabor")


def _odd(x):
    n = max(1, int(round(x)))
    return n if n % 2 else n + 1


def _log_bands(lo, hi, n):
    edges = np.geomspace(lo, hi, n + 1)
    return list(zip(edges[:-1], edges[1:]))


@dataclass(frozen=True)
class StreamBankSpec:
    """Division of modulation space into independent feature streams.

    Temporal divisions split ``temporal_range`` (Hz), spectral divisions split
    ``spectral_range`` (cycles/channel), joint divisions form a grid over both.
    """

    temporal_divisions: int = 16
    spectral_divisions: int = 8
    joint_divisions: int = 4
    filters_per_division: int = 1
    temporal_range: tuple = (2.0, 16.0)
    spectral_range: tuple = (1.0 / 16.0, 0.25)
    max_temporal_extent: int = 51
    max_spectral_extent: int = 17
    explicit: tuple = field(default=())

    def __post_init__(self):
        if min(self.temporal_divisions, self.spectral_divisions, self.joint_divisions) < 0:
            raise ValueError("division counts must be nonnegative")
        if self.filters_per_division < 1:
            raise ValueError("filters_per_division must be >= 1")

    @property
    def n_streams(self):
        if self.explicit:
            return len(self.explicit)
        return self.temporal_divisions + self.spectral_divisions + self.joint_divisions

    def _temporal_extent(self, rate, frame_period):
        return min(_odd(1.0 / (rate * frame_period)), self.max_temporal_extent)

    def _spectral_extent(self, rate):
        return min(_odd(1.0 / rate), self.max_spectral_extent)

    def filter_specs(self, frame_period=FRAME_PERIOD):
        """Per-stream lists of :class:`GaborFilterSpec`."""
        if self.explicit:
            return [list(group) for group in self.explicit]
        k = self.filters_per_division
        streams = []
        for lo, hi in _log_bands(*self.temporal_range, self.temporal_divisions) if self.temporal_divisions else []:
            streams.append([
                GaborFilterSpec(r, 0.0, self._temporal_extent(r, frame_period), 1)
                for r in _band_rates(lo, hi, k)
            ])
        for lo, hi in _log_bands(*self.spectral_range, self.spectral_divisions) if self.spectral_divisions else []:
            streams.append([GaborFilterSpec(0.0, r, 1, self._spectral_extent(r)) for r in _band_rates(lo, hi, k)])
        if self.joint_divisions:
            nt = max(1, int(math.floor(math.sqrt(self.joint_divisions))))
            while self.joint_divisions % nt:
                nt -= 1
            ns = self.joint_divisions // nt
            for tlo, thi in _log_bands(*self.temporal_range, nt):
                for slo, shi in _log_bands(*self.spectral_range, ns):
                    group = []
                    for rt, rs in zip(_band_rates(tlo, thi, k), _band_rates(slo, shi, k)):
                        group.append(GaborFilterSpec(
                            rt, rs, self._temporal_extent(rt, frame_period), self._spectral_extent(rs)))
                    streams.append(group)
        return streams


def _band_rates(lo, hi, k):
    # geometric centres of k equal log-width sub-bands
    edges = np.geomspace(lo, hi, k + 1)
    return [float(math.sqrt(a * b)) for a, b in zip(edges[:-1], edges[1:])]


def _stream(logmel, specs):
    outs = [apply_gabor_stream(logmel, s).data for s in specs]
    return FeatureMatrix(np.hstack(outs), logmel.frame_period, "gabor")


def build_stream_set(logmel, bank=None, workers=1):
    """One Gabor FeatureMatrix per stream; streams are computed independently."""
    bank = bank or StreamBankSpec()
    groups = bank.filter_specs(logmel.frame_period)
    if workers <= 1 or len(groups) <= 1:
        return [_stream(logmel, g) for g in groups]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda g: _stream(logmel, g), groups))
