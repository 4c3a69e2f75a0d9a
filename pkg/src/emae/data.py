"""Signal dataset container and the synthetic benchmark generator.

Container layout (all little-endian):
  magic "EEGD" | version u32 | N u64 | C u32 | T u32 |
  samples: N*C*T float64, sample-major then (channel, time) row-major |
  labels: N pairs of float64 (x mm, y mm).

The synthetic generator plants gaze structure a model can actually learn:
pink-like noise on every channel plus label-dependent sinusoids on a chosen
subset of channels, so the (x, y) label is decodable in principle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import ContractError, DatasetFormatError

DATASET_MAGIC = b"EEGD"
DATASET_VERSION = 1
HEADER_SIZE = 4 + 4 + 8 + 4 + 4  # magic, version, N, C, T

# Synthesis constants: microvolt-scale signals, distinct resolvable tones.
SIGNAL_AMPLITUDE_UV = 20.0
NOISE_RMS_UV = 10.0
BASE_CYCLES = 4
CYCLES_STEP = 2
AMPLITUDE_FLOOR = 0.25  # keeps signal channels alive at coordinate 0


@dataclass
class SignalDataset:
    """N samples of (C, T) float64 signals with (x, y) mm labels."""

    samples: np.ndarray
    labels: np.ndarray
    source: str = "memory"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.samples.ndim != 3:
            raise ContractError(f"samples must be (N, C, T), got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0], 2):
            raise ContractError(
                f"labels must be ({self.samples.shape[0]}, 2), got {self.labels.shape}"
            )
        if self.n < 1:
            raise ContractError("dataset must contain at least one sample")
        if not np.all(np.isfinite(self.labels)):
            raise ContractError("labels must be finite")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def time_len(self) -> int:
        return self.samples.shape[2]

    def subset(self, indices: np.ndarray, tag: str) -> "SignalDataset":
        return SignalDataset(
            self.samples[indices].copy(),
            self.labels[indices].copy(),
            source=f"{self.source}[{tag}]",
        )


def save_dataset(dataset: SignalDataset, path) -> None:
    buf = bytearray()
    buf += DATASET_MAGIC
    buf += struct.pack("<I", DATASET_VERSION)
    buf += struct.pack("<Q", dataset.n)
    buf += struct.pack("<I", dataset.channels)
    buf += struct.pack("<I", dataset.time_len)
    buf += dataset.samples.astype("<f8", copy=False).tobytes()
    buf += dataset.labels.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


def load_dataset(path) -> SignalDataset:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_SIZE:
        raise DatasetFormatError(len(blob), f"file shorter than {HEADER_SIZE}-byte header")
    if blob[:4] != DATASET_MAGIC:
        raise DatasetFormatError(0, f"bad magic {blob[:4]!r}, expected {DATASET_MAGIC!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != DATASET_VERSION:
        raise DatasetFormatError(4, f"unsupported version {version}")
    n = struct.unpack("<Q", blob[8:16])[0]
    c = struct.unpack("<I", blob[16:20])[0]
    t = struct.unpack("<I", blob[20:24])[0]
    if n < 1:
        raise DatasetFormatError(8, "header declares zero samples")
    if c < 1 or t < 1:
        raise DatasetFormatError(16, f"header declares empty matrix dims {c}x{t}")

    samples_bytes = n * c * t * 8
    labels_off = HEADER_SIZE + samples_bytes
    expected = labels_off + n * 16
    if len(blob) != expected:
        raise DatasetFormatError(
            min(len(blob), expected), f"file is {len(blob)} bytes, format requires {expected}"
        )
    samples = np.frombuffer(blob, dtype="<f8", count=n * c * t, offset=HEADER_SIZE)
    labels = np.frombuffer(blob, dtype="<f8", count=n * 2, offset=labels_off)
    finite = np.isfinite(labels)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise DatasetFormatError(labels_off + bad * 8, "non-finite label value")
    return SignalDataset(
        samples.astype(np.float64).reshape(n, c, t),
        labels.astype(np.float64).reshape(n, 2),
        source=str(path),
    )


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for a synthetic gaze dataset with planted structure."""

    n: int = 2000
    channels: int = 128
    time_len: int = 500
    noise_scale: float = 1.0
    signal_channels: tuple[int, ...] = ()
    label_bounds: tuple[float, float] = (400.0, 300.0)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.channels < 1 or self.time_len < 2:
            raise ContractError("synthetic dataset dims must be positive")
        if self.noise_scale < 0:
            raise ContractError("noise_scale must be non-negative")
        if self.label_bounds[0] <= 0 or self.label_bounds[1] <= 0:
            raise ContractError("label bounds must be positive")
        chans = self.resolved_signal_channels()
        if any(ch < 0 or ch >= self.channels for ch in chans):
            raise ContractError(f"signal channels {chans} fall outside [0, {self.channels})")
        if len(set(chans)) != len(chans):
            raise ContractError("signal channels must be unique")

    def resolved_signal_channels(self) -> tuple[int, ...]:
        if self.signal_channels:
            return self.signal_channels
        return tuple(range(min(4, self.channels)))


def _pink_noise(gen: np.random.Generator, shape: tuple[int, int, int]) -> np.ndarray:
    """Unit-RMS 1/f-shaped noise along the last (time) axis."""
    white = gen.standard_normal(shape)
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.arange(spectrum.shape[-1], dtype=np.float64)
    weight = np.zeros_like(freqs)
    weight[1:] = 1.0 / np.sqrt(freqs[1:])
    shaped = np.fft.irfft(spectrum * weight, n=shape[-1], axis=-1)
    rms = np.sqrt(np.mean(shaped**2, axis=-1, keepdims=True))
    return shaped / rms


def synth_generate(config: SynthConfig) -> SignalDataset:
    """Deterministically synthesize a dataset from `config`.

    Labels are uniform in [0, x_max] x [0, y_max]. Even-indexed signal
    channels carry a tone whose amplitude is linear in x/x_max with phase
    set by y/y_max; odd-indexed channels swap the roles. All channels get
    pink-like noise scaled by noise_scale.
    """
    gen = rng.generator(config.seed, rng.STREAM_SYNTH)
    x_max, y_max = config.label_bounds
    labels = gen.uniform(0.0, 1.0, size=(config.n, 2)) * np.array([x_max, y_max])
    u = labels[:, 0] / x_max
    v = labels[:, 1] / y_max

    samples = np.zeros((config.n, config.channels, config.time_len))
    if config.noise_scale > 0:
        samples += config.noise_scale * NOISE_RMS_UV * _pink_noise(
            gen, (config.n, config.channels, config.time_len)
        )

    t = np.arange(config.time_len) / config.time_len
    for j, ch in enumerate(config.resolved_signal_channels()):
        coord, other = (u, v) if j % 2 == 0 else (v, u)
        cycles = BASE_CYCLES + CYCLES_STEP * j
        amplitude = SIGNAL_AMPLITUDE_UV * (AMPLITUDE_FLOOR + coord)
        phase = 2.0 * np.pi * other
        samples[:, ch, :] += amplitude[:, None] * np.sin(
            2.0 * np.pi * cycles * t[None, :] + phase[:, None]
        )

    return SignalDataset(samples, labels, source=f"synth(seed={config.seed})")


def uniform_centroid_rmse(bounds: tuple[float, float]) -> float:
    """RMSE of the centroid predictor on labels uniform in [0,x]x[0,y].

    Closed form: sqrt((x^2 + y^2) / 12) -- the naive baseline any trained
    model has to beat.
    """
    x, y = bounds
    return float(np.sqrt((x * x + y * y) / 12.0))
