"""Acoustic front end: WAV input, framing, MFCCs, normalization, crops.

The pipeline mirrors a common speaker verification recipe: 25 ms Hamming
windows with a 10 ms shift at 16 kHz, an 80-bin mel filterbank over the
full 0..Nyquist range, log compression, DCT-II keeping 80 coefficients,
then per-utterance cepstral mean subtraction and 3 second random crops.

Feature matrices are [num_coeffs, num_frames], float64.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import DataError, DimensionError
from . import tensorio

SAMPLE_RATE = 16000
FRAME_LEN_MS = 25.0
FRAME_SHIFT_MS = 10.0
NUM_MEL_FILTERS = 80
NUM_COEFFS = 80
LOG_FLOOR = 1e-10
CROP_SECONDS = 3.0
CACHE_SUFFIX = ".tensors"


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"waveform must be mono 1-d, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise DataError("empty waveform")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: str | PathLike) -> Waveform:
    """Read a 16-bit PCM mono RIFF file.

    Anything else (other widths, multiple channels, compressed payloads)
    raises DataError.
    """
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            comp = fh.getcomptype()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except (wave.Error, EOFError, OSError) as e:
        raise DataError(f"cannot read WAV {path}: {e}") from e
    if comp != "NONE":
        raise DataError(f"{path}: compressed WAV payloads are not supported")
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def write_wav(path: str | PathLike, wav: Waveform) -> None:
    """Write 16-bit PCM mono, clipping to the valid range."""
    clipped = np.clip(wav.samples, -1.0, 32767.0 / 32768.0)
    ints = np.round(clipped * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(ints.tobytes())


def frame_count(num_samples: int, frame_len: int, frame_shift: int) -> int:
    return (num_samples - frame_len) // frame_shift + 1


def frame_signal(wav: Waveform, frame_len_ms: float = FRAME_LEN_MS,
                 frame_shift_ms: float = FRAME_SHIFT_MS) -> np.ndarray:
    """Slice a waveform into overlapping Hamming-windowed frames.

    Returns [num_frames, frame_len]. The final partial window is dropped.
    Utterances shorter than one frame raise DataError.
    """
    frame_len = int(round(wav.sample_rate * frame_len_ms / 1000.0))
    frame_shift = int(round(wav.sample_rate * frame_shift_ms / 1000.0))
    if wav.samples.size < frame_len:
        raise DataError(
            f"utterance shorter than one frame: {wav.samples.size} < {frame_len} samples"
        )
    n = frame_count(wav.samples.size, frame_len, frame_shift)
    idx = np.arange(frame_len)[None, :] + frame_shift * np.arange(n)[:, None]
    return wav.samples[idx] * np.hamming(frame_len)[None, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over 0..Nyquist, evaluated at FFT bin centers.

    Returns [num_filters, nfft // 2 + 1].
    """
    nyquist = sample_rate / 2.0
    mel_edges = np.linspace(0.0, hz_to_mel(nyquist), num_filters + 2)
    hz_edges = mel_to_hz(mel_edges)
    bin_freqs = np.arange(nfft // 2 + 1) * (sample_rate / nfft)
    bank = np.zeros((num_filters, bin_freqs.size))
    for i in range(num_filters):
        lo, center, hi = hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def mfcc(frames: np.ndarray, sample_rate: int = SAMPLE_RATE,
         num_filters: int = NUM_MEL_FILTERS, num_coeffs: int = NUM_COEFFS) -> np.ndarray:
    """Mel-frequency cepstra from windowed frames.

    Args:
        frames: [num_frames, frame_len] windowed signal frames.
        sample_rate: sampling rate in Hz.
        num_filters: mel filterbank size.
        num_coeffs: DCT-II coefficients kept per frame.

    Returns:
        [num_coeffs, num_frames] coefficient matrix.
    """
    if frames.ndim != 2:
        raise DimensionError(f"frames must be [num_frames, frame_len], got {frames.shape}")
    frame_len = frames.shape[1]
    nfft = 1
    while nfft < frame_len:
        nfft *= 2
    spectrum = np.fft.rfft(frames, n=nfft, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / nfft
    bank = mel_filterbank(num_filters, nfft, sample_rate)
    energies = power @ bank.T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = scipy.fft.dct(logmel, type=2, norm="ortho", axis=1)[:, :num_coeffs]
    return coeffs.T.copy()


def mfcc_from_waveform(wav: Waveform) -> np.ndarray:
    return mfcc(frame_signal(wav), wav.sample_rate)


def cepstral_mean_subtract(coeffs: np.ndarray) -> np.ndarray:
    """Remove the per-coefficient mean over time. Idempotent up to rounding."""
    if coeffs.ndim != 2:
        raise DimensionError(f"coefficients must be [C, T], got {coeffs.shape}")
    return coeffs - coeffs.mean(axis=1, keepdims=True)


def crop_to_frames(coeffs: np.ndarray, num_frames: int,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Contiguous random crop of num_frames columns.

    Shorter inputs are wrap-padded (column t reads input column t mod T),
    so the crop content is always a contiguous mod-T slice of the source.
    """
    if coeffs.ndim != 2:
        raise DimensionError(f"coefficients must be [C, T], got {coeffs.shape}")
    if num_frames <= 0:
        raise DimensionError(f"crop length must be positive, got {num_frames}")
    t = coeffs.shape[1]
    if t == 0:
        raise DataError("cannot crop an empty feature matrix")
    if t < num_frames:
        return coeffs[:, np.arange(num_frames) % t]
    if t == num_frames:
        return coeffs.copy()
    rng = np.random.default_rng() if rng is None else rng
    start = int(rng.integers(0, t - num_frames + 1))
    return coeffs[:, start : start + num_frames].copy()


def random_crop(coeffs: np.ndarray, seconds: float = CROP_SECONDS,
                rng: np.random.Generator | None = None,
                frame_shift_ms: float = FRAME_SHIFT_MS) -> np.ndarray:
    num_frames = int(round(seconds * 1000.0 / frame_shift_ms))
    return crop_to_frames(coeffs, num_frames, rng)


class FeatureCache:
    """Directory of per-utterance coefficient matrices in container files."""

    def __init__(self, root: str | PathLike):
        self.root = Path(root)

    def path_for(self, utt_id: str) -> Path:
        clean = utt_id.strip()
        if not clean or clean.startswith(("/", "\\")) or ".." in Path(clean).parts:
            raise DataError(f"unsafe utterance id {utt_id!r}")
        return self.root / (clean + CACHE_SUFFIX)

    def has(self, utt_id: str) -> bool:
        return self.path_for(utt_id).exists()

    def save(self, utt_id: str, coeffs: np.ndarray) -> Path:
        path = self.path_for(utt_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensorio.save_tensors(path, {"mfcc": np.asarray(coeffs, dtype=np.float64)})
        return path

    def load(self, utt_id: str) -> np.ndarray:
        path = self.path_for(utt_id)
        if not path.exists():
            raise DataError(f"no cached features for utterance {utt_id!r} under {self.root}")
        tensors = tensorio.load_tensors(path)
        if "mfcc" not in tensors:
            raise DataError(f"{path}: missing 'mfcc' entry")
        return tensors["mfcc"]
