"""Spectral transforms: STFT/ISTFT, mel filterbank, log compression, Griffin-Lim.

Frames are centered: the signal is reflect-padded by ``win_length // 2`` on
both sides and frame ``t`` is centered on original sample ``t * hop_length``,
so a signal of ``n`` samples yields ``ceil(n / hop_length)`` frames.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

CONTAINER_MAGIC = b"DSPC"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

FLOOR_DB = -100.0
REF_DB = 20.0


class DSPError(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 44100
    win_length: int = 2205
    hop_length: int = 441
    fft_size: int = 4096
    window: str = "hann"

    def __post_init__(self):
        self.validate()

    def validate(self):
        ok = (
            self.sample_rate > 0
            and self.win_length > 0
            and self.hop_length > 0
            and self.fft_size >= self.win_length
            and self.hop_length <= self.win_length
            and self.window == "hann"
        )
        if not ok:
            raise DSPError(f"invalid config: {self}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def hop_seconds(self) -> float:
        return self.hop_length / self.sample_rate

    @property
    def pad(self) -> int:
        return self.win_length // 2

    def n_frames(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.hop_length)

    def window_array(self) -> np.ndarray:
        # periodic Hann
        n = np.arange(self.win_length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.win_length)


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DSPError("audio must be mono")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _frame_matrix(padded: np.ndarray, n_frames: int, cfg: StftConfig) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.win_length)
    return view[: n_frames * cfg.hop_length : cfg.hop_length]


def stft_frames(padded: np.ndarray, cfg: StftConfig, n_frames: int | None = None) -> np.ndarray:
    """STFT of an already padded signal, no centering.

    Frame ``t`` covers ``padded[t*hop : t*hop + win_length]``.
    """
    if n_frames is None:
        n_frames = 1 + (len(padded) - cfg.win_length) // cfg.hop_length
    frames = _frame_matrix(padded, n_frames, cfg) * cfg.window_array()
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def overlap_add(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Least-squares inverse of :func:`stft_frames`.

    Weighted overlap-add normalized by the summed squared window. Returns
    ``(T - 1) * hop + win_length`` samples in the padded domain.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.n_bins:
        raise DSPError(f"expected {cfg.n_bins} bins, got shape {spec.shape}")
    n_frames = spec.shape[0]
    win = cfg.window_array()
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, : cfg.win_length] * win
    length = (n_frames - 1) * cfg.hop_length + cfg.win_length
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = win * win
    for t in range(n_frames):
        start = t * cfg.hop_length
        out[start : start + cfg.win_length] += frames[t]
        norm[start : start + cfg.win_length] += wsq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out


def stft(audio: AudioBuffer | np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Centered STFT, returns a complex ``[T, fft_size // 2 + 1]`` matrix."""
    x = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, dtype=np.float64)
    if x.size == 0:
        raise DSPError("empty input")
    cfg.validate()
    padded = np.pad(x, cfg.pad, mode="reflect") if x.size > 1 else np.pad(x, cfg.pad, mode="edge")
    return stft_frames(padded, cfg, cfg.n_frames(x.size))


def istft(
    spec: np.ndarray, cfg: StftConfig, length: int | None = None, center: bool = True
) -> AudioBuffer:
    """Inverse of :func:`stft`.

    With ``center=True`` the reflect padding is removed and ``length``
    samples are returned (default ``T * hop_length``). ``center=False`` returns
    the raw overlap-add buffer of ``(T - 1) * hop + win_length`` samples.
    """
    raw = overlap_add(spec, cfg)
    if not center:
        return AudioBuffer(raw, cfg.sample_rate)
    if length is None:
        length = np.asarray(spec).shape[0] * cfg.hop_length
    out = raw[cfg.pad : cfg.pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return AudioBuffer(out, cfg.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # [n_mels, n_bins]
    centers_hz: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def build_mel_filterbank(cfg: StftConfig, n_mels: int = 80) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the HTK mel scale."""
    if n_mels < 1 or n_mels > cfg.n_bins:
        raise DSPError(f"n_mels must be in [1, {cfg.n_bins}], got {n_mels}")
    bin_hz = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    # a filter narrower than the bin spacing still gets its nearest bin
    for m in np.flatnonzero(weights.sum(axis=1) <= 0):
        weights[m, int(np.argmin(np.abs(bin_hz - center[m, 0])))] = 1.0
    return MelFilterbank(weights=weights, centers_hz=edges[1:-1].copy())


def linear_to_mel(magnitude: np.ndarray, fbank: MelFilterbank) -> np.ndarray:
    return np.asarray(magnitude) @ fbank.weights.T


def compress_and_normalize(
    magnitude: np.ndarray, floor_db: float = FLOOR_DB, ref_db: float = REF_DB
) -> np.ndarray:
    """Log-compress magnitudes and map ``[floor_db, ref_db]`` onto ``[0, 1]``."""
    if floor_db >= ref_db:
        raise DSPError("floor_db must be below ref_db")
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if np.any(magnitude < 0):
        raise DSPError("magnitude must be non-negative")
    db = 20.0 * np.log10(np.maximum(magnitude, 1e-300))
    return (np.clip(db, floor_db, ref_db) - floor_db) / (ref_db - floor_db)


def decompress(normalized: np.ndarray, floor_db: float = FLOOR_DB, ref_db: float = REF_DB) -> np.ndarray:
    if floor_db >= ref_db:
        raise DSPError("floor_db must be below ref_db")
    db = np.asarray(normalized, dtype=np.float64) * (ref_db - floor_db) + floor_db
    return 10.0 ** (db / 20.0)


def magnitude_scale(cfg: StftConfig) -> float:
    """Scale that maps a full-scale sine's STFT peak to amplitude 0.5."""
    return 1.0 / cfg.window_array().sum()


def spectrogram_features(
    audio: AudioBuffer, cfg: StftConfig, fbank: MelFilterbank
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (mel, linear) log-magnitude targets, ``[T, n_mels]`` and ``[T, n_bins]``."""
    mag = np.abs(stft(audio, cfg)) * magnitude_scale(cfg)
    mel = compress_and_normalize(linear_to_mel(mag, fbank))
    lin = compress_and_normalize(mag)
    return mel, lin


def features_to_magnitude(linear: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Undo :func:`spectrogram_features` for the linear spectrogram."""
    return decompress(np.clip(linear, 0.0, 1.0)) / magnitude_scale(cfg)


def _spectral_error(target: np.ndarray, estimate: np.ndarray, n_fft: int) -> float:
    # Hermitian weights make this the full-spectrum (Parseval) squared error
    w = np.full(target.shape[1], 2.0)
    w[0] = 1.0
    if n_fft % 2 == 0:
        w[-1] = 1.0
    return float(np.sum(w * (target - estimate) ** 2))


def griffin_lim(
    magnitude: np.ndarray,
    cfg: StftConfig,
    iterations: int = 60,
    length: int | None = None,
    return_errors: bool = False,
):
    """Recover a waveform from a linear magnitude spectrogram (``[T, n_bins]``).

    Starts from zero phase and alternates projections between the set of
    consistent spectrograms and the set with the target magnitude. The
    iteration runs in the padded domain so each step is an exact
    least-squares projection, which makes the squared spectral error
    non-increasing.
    """
    if iterations < 1:
        raise DSPError("iterations must be >= 1")
    target = np.asarray(magnitude, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != cfg.n_bins:
        raise DSPError(f"expected {cfg.n_bins} bins, got shape {target.shape}")
    n_frames = target.shape[0]
    spec = target.astype(np.complex128)
    errors = []
    x = overlap_add(spec, cfg)
    for _ in range(iterations):
        rebuilt = stft_frames(x, cfg, n_frames)
        errors.append(_spectral_error(target, np.abs(rebuilt), cfg.fft_size))
        spec = target * np.exp(1j * np.angle(rebuilt))
        x = overlap_add(spec, cfg)
    if length is None:
        length = n_frames * cfg.hop_length
    out = x[cfg.pad : cfg.pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    audio = AudioBuffer(out, cfg.sample_rate)
    if return_errors:
        return audio, np.asarray(errors)
    return audio


def spectral_convergence(target: np.ndarray, audio: AudioBuffer, cfg: StftConfig) -> float:
    est = np.abs(stft(audio, cfg))[: target.shape[0]]
    return float(np.linalg.norm(target - est) / max(np.linalg.norm(target), 1e-300))


def save_container(path: str | Path, matrix: np.ndarray) -> None:
    """Write a 2-D matrix as ``DSPC`` header + row-major little-endian float32."""
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2:
        raise DSPError("container holds 2-D matrices only")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_container(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DSPError(f"{path}: truncated container")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != CONTAINER_MAGIC:
        raise DSPError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise DSPError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]
    if len(body) != rows * cols * 4:
        raise DSPError(f"{path}: size mismatch for {rows}x{cols}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def read_wav(path: str | Path) -> AudioBuffer:
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        raise DSPError(f"{path}: expected mono audio")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise DSPError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(samples, int(rate))


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    pcm = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    wavfile.write(path, audio.sample_rate, pcm)
