"""Spectrogram-family features and their time-difference maps.

A 2 s window at 16 kHz yields 132 STFT frames (30 ms Hann window, 15 ms
hop, 512-point FFT); each base plane is cropped to 128 x 128.  Planes are
stored frequency-major, ``data[f, t]``, so that height is frequency and
width is time, as in the assembled ``C x 128 x 128`` tensors.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio_io import MODEL_RATE, AudioClip
from .errors import DegenerateStatsError, ShapeError, SpecError

PLANE_SIZE = 128
DB_FLOOR_POWER = 1e-10
BASE_KINDS = ("SP", "MS", "MFCC")
DERIVED_KINDS = ("V", "A")

# X, X-V, X-V-A for each base, plus the multi-base combinations.
VALID_SPECS = tuple(
    [b for b in BASE_KINDS]
    + [f"{b}-V" for b in BASE_KINDS]
    + [f"{b}-V-A" for b in BASE_KINDS]
    + ["SP-MS", "SP-MFCC", "MS-MFCC", "SP-MS-MFCC"]
)

FILE_MAGIC = b"SFLW"
FILE_VERSION = 1


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 512
    window_length: int = 480
    hop_length: int = 240
    window_function: str = "hann"

    def __post_init__(self):
        if self.window_length > self.n_fft:
            raise ValueError("window_length must not exceed n_fft")
        if self.hop_length < 1:
            raise ValueError("hop_length must be >= 1")
        if self.window_function not in ("hann", "hamming", "rect"):
            raise ValueError(f"unknown window function {self.window_function!r}")

    def window(self) -> np.ndarray:
        n = self.window_length
        if self.window_function == "rect":
            return np.ones(n)
        # periodic tapers, as used for STFT analysis
        k = np.arange(n)
        a0 = 0.5 if self.window_function == "hann" else 0.54
        return a0 - (1.0 - a0) * np.cos(2.0 * np.pi * k / n)


@dataclass(frozen=True, eq=False)
class FeaturePlane:
    """One ``H x W`` feature map (rows: frequency or coefficient, columns: frames)."""

    kind: str
    data: np.ndarray
    base: str | None = None

    def __post_init__(self):
        if self.kind not in BASE_KINDS + DERIVED_KINDS:
            raise SpecError(f"unknown plane kind {self.kind!r}")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError("feature plane must be 2-D")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def units(self) -> str:
        if self.kind in ("SP", "MS"):
            return "dB"
        if self.kind == "MFCC":
            return "coefficient"
        return "per-frame difference"


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    planes: tuple[FeaturePlane, ...]
    spec: str
    channel_stats: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        if len(self.planes) != len(self.spec.split("-")):
            raise SpecError(f"spec {self.spec!r} does not match {len(self.planes)} planes")
        shapes = {p.shape for p in self.planes}
        if len(shapes) != 1:
            raise ShapeError(f"planes disagree in shape: {sorted(shapes)}")

    @property
    def channels(self) -> int:
        return len(self.planes)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels,) + self.planes[0].shape

    def to_array(self, dtype=np.float32) -> np.ndarray:
        return np.stack([p.data for p in self.planes]).astype(dtype)

    @classmethod
    def from_array(cls, arr: np.ndarray, spec: str) -> "FeatureTensor":
        kinds = _plane_kinds(spec)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != len(kinds):
            raise ShapeError(f"array shape {arr.shape} does not fit spec {spec!r}")
        planes = [FeaturePlane(k, arr[i], base=b) for i, (k, b) in enumerate(kinds)]
        return cls(tuple(planes), spec)


# --------------------------------------------------------------------------
# base features
# --------------------------------------------------------------------------

def frame_count(n_samples: int, params: StftParams = StftParams()) -> int:
    if n_samples < params.window_length:
        return 0
    return (n_samples - params.window_length) // params.hop_length + 1


def power_spectrum(clip: AudioClip, params: StftParams = StftParams()) -> np.ndarray:
    """Frame-wise power spectrum, shape ``(n_fft // 2 + 1, frames)``, no cropping."""
    x = clip.samples
    n_frames = frame_count(len(x), params)
    if n_frames < 1:
        raise ShapeError(
            f"clip of {len(x)} samples is shorter than one {params.window_length}-sample frame"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, params.window_length)[:: params.hop_length]
    frames = frames[:n_frames] * params.window()
    spec = np.fft.rfft(frames, n=params.n_fft, axis=1)
    return (spec.real**2 + spec.imag**2).T


def to_db(power: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(power, DB_FLOOR_POWER))


def _check_rate(clip: AudioClip) -> None:
    if clip.sample_rate != MODEL_RATE:
        raise ShapeError(f"features expect {MODEL_RATE} Hz input, got {clip.sample_rate} Hz")


def _crop(plane: np.ndarray) -> np.ndarray:
    if plane.shape[1] < PLANE_SIZE:
        raise ShapeError(f"only {plane.shape[1]} frames available, need {PLANE_SIZE}")
    return plane[:PLANE_SIZE, :PLANE_SIZE]


def spectrogram(clip: AudioClip, params: StftParams = StftParams()) -> FeaturePlane:
    """Power spectrogram in dB, lowest 128 bins (0 to ~4 kHz) by first 128 frames."""
    _check_rate(clip)
    return FeaturePlane("SP", _crop(to_db(power_spectrum(clip, params))))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Each triangle (unit peak) is integrated against the piecewise-linear
    interpolation of the FFT bins and divided by the bin spacing.  For bands
    wider than a bin this matches sampling the triangle at the bin centres;
    bands narrower than a bin (the lowest ones at 512 points / 16 kHz) still
    receive their share of energy instead of coming out empty.
    """
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    n_bins = n_fft // 2 + 1
    df = sample_rate / n_fft
    fine = np.linspace(0.0, sample_rate / 2.0, (n_bins - 1) * 64 + 1)
    step = fine[1] - fine[0]
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    tri = np.maximum(0.0, np.minimum((fine - lo) / (mid - lo), (hi - fine) / (hi - mid)))
    hat = np.maximum(0.0, 1.0 - np.abs(fine[None, :] / df - np.arange(n_bins)[:, None]))
    # trapezoid weights on the fine grid
    quad = np.full(fine.shape, step)
    quad[[0, -1]] *= 0.5
    fb = (tri * quad) @ hat.T / df
    fb.flags.writeable = False
    return fb


def _log_mel(clip: AudioClip, params: StftParams, n_mels: int) -> np.ndarray:
    _check_rate(clip)
    fb = mel_filterbank(n_mels, params.n_fft, clip.sample_rate)
    return to_db(fb @ power_spectrum(clip, params))


def mel_spectrogram(clip: AudioClip, params: StftParams = StftParams(), n_mels: int = PLANE_SIZE) -> FeaturePlane:
    return FeaturePlane("MS", _crop(_log_mel(clip, params, n_mels)))


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``k`` is coefficient ``k``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def mfcc(clip: AudioClip, params: StftParams = StftParams(), n_coeffs: int = PLANE_SIZE) -> FeaturePlane:
    """All DCT-II coefficients of the 128-band log-mel spectrum."""
    logmel = _log_mel(clip, params, PLANE_SIZE)
    coeffs = dct_matrix(PLANE_SIZE) @ logmel
    return FeaturePlane("MFCC", _crop(coeffs[:n_coeffs]))


# --------------------------------------------------------------------------
# time-difference maps
# --------------------------------------------------------------------------

def time_difference(x: np.ndarray) -> np.ndarray:
    """Forward / central / backward difference along the last (time) axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ShapeError("need at least two frames for a time difference")
    out = np.empty_like(x)
    out[..., 0] = x[..., 1] - x[..., 0]
    out[..., 1:-1] = (x[..., 2:] - x[..., :-2]) / 2.0
    out[..., -1] = x[..., -1] - x[..., -2]
    return out


def velocity_map(base: FeaturePlane) -> FeaturePlane:
    return FeaturePlane("V", time_difference(base.data), base=base.kind)


def acceleration_map(base: FeaturePlane) -> FeaturePlane:
    """Difference stencil applied twice; ``base`` is the underlying X plane."""
    if base.kind == "V":
        return FeaturePlane("A", time_difference(base.data), base=base.base)
    return FeaturePlane("A", time_difference(time_difference(base.data)), base=base.kind)


# --------------------------------------------------------------------------
# assembly and normalization
# --------------------------------------------------------------------------

_BASE_FUNCS = {"SP": spectrogram, "MS": mel_spectrogram, "MFCC": mfcc}


def _plane_kinds(spec: str) -> list[tuple[str, str | None]]:
    if spec not in VALID_SPECS:
        raise SpecError(f"unknown feature spec {spec!r}; expected one of {', '.join(VALID_SPECS)}")
    tokens = spec.split("-")
    if tokens[-1] in DERIVED_KINDS:
        base = tokens[0]
        return [(base, None)] + [(t, base) for t in tokens[1:]]
    return [(t, None) for t in tokens]


def spec_channels(spec: str) -> int:
    return len(_plane_kinds(spec))


def assemble(clip: AudioClip, spec: str, params: StftParams = StftParams()) -> FeatureTensor:
    """Stack the planes named by ``spec`` (e.g. ``"MFCC-V-A"``) into a tensor."""
    kinds = _plane_kinds(spec)
    planes: list[FeaturePlane] = []
    cache: dict[str, FeaturePlane] = {}
    for kind, base in kinds:
        if base is None:
            cache[kind] = _BASE_FUNCS[kind](clip, params)
            planes.append(cache[kind])
        elif kind == "V":
            cache["V"] = velocity_map(cache[base])
            planes.append(cache["V"])
        else:
            planes.append(acceleration_map(cache["V"]))
    return FeatureTensor(tuple(planes), spec)


@dataclass
class ChannelStats:
    """Per-channel population mean/std; ``degenerate`` marks channels with std 0."""

    mean: np.ndarray
    std: np.ndarray
    count: int = 0
    degenerate: tuple[bool, ...] = field(default=())

    def as_pairs(self) -> list[tuple[float, float]]:
        return [(float(m), float(s)) for m, s in zip(self.mean, self.std)]


class _Welford:
    """Mergeable running (count, mean, M2) per channel."""

    def __init__(self, channels: int):
        self.n = 0
        self.mean = np.zeros(channels)
        self.m2 = np.zeros(channels)

    def add_block(self, block: np.ndarray) -> None:
        # block: channels x values
        nb = block.shape[1]
        if nb == 0:
            return
        mb = block.mean(axis=1)
        m2b = ((block - mb[:, None]) ** 2).sum(axis=1)
        self.merge(nb, mb, m2b)

    def merge(self, nb, mb, m2b) -> None:
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2b + delta**2 * (self.n * nb / n)
        self.n = n


def compute_channel_stats(batch: Iterable[FeatureTensor]) -> ChannelStats:
    """Single-pass per-channel mean and population std over a batch."""
    acc = None
    for t in batch:
        arr = t.to_array(np.float64)
        if acc is None:
            acc = _Welford(arr.shape[0])
        elif arr.shape[0] != acc.mean.shape[0]:
            raise ShapeError("tensors in a batch must share the channel count")
        acc.add_block(arr.reshape(arr.shape[0], -1))
    if acc is None:
        raise ValueError("cannot compute statistics of an empty batch")
    std = np.sqrt(acc.m2 / acc.n)
    return ChannelStats(acc.mean, std, acc.n, tuple(bool(s <= 0) for s in std))


def normalize(batch: Sequence[FeatureTensor], stats) -> list[FeatureTensor]:
    """Map each channel ``x -> (x - mean_c) / std_c``.

    ``stats`` is a :class:`ChannelStats` or a sequence of ``(mean, std)`` pairs.
    """
    pairs = stats.as_pairs() if isinstance(stats, ChannelStats) else [tuple(p) for p in stats]
    for _, s in pairs:
        if not s > 0:
            raise DegenerateStatsError(f"standard deviation must be positive, got {s}")
    out = []
    for t in batch:
        if t.channels != len(pairs):
            raise ShapeError(f"stats have {len(pairs)} channels, tensor has {t.channels}")
        planes = [
            FeaturePlane(p.kind, (p.data - m) / s, base=p.base) for p, (m, s) in zip(t.planes, pairs)
        ]
        out.append(FeatureTensor(tuple(planes), t.spec, tuple(pairs)))
    return out


# --------------------------------------------------------------------------
# feature file I/O
# --------------------------------------------------------------------------

def encode_feature(tensor: FeatureTensor) -> bytes:
    c, h, w = tensor.shape
    spec = tensor.spec.encode("utf-8")
    header = FILE_MAGIC + struct.pack("<HIIII", FILE_VERSION, c, h, w, len(spec)) + spec
    return header + np.ascontiguousarray(tensor.to_array(), dtype="<f4").tobytes()


def decode_feature(blob: bytes) -> FeatureTensor:
    if blob[:4] != FILE_MAGIC:
        raise ValueError("not a feature file (bad magic)")
    version, c, h, w, n = struct.unpack_from("<HIIII", blob, 4)
    if version != FILE_VERSION:
        raise ValueError(f"unsupported feature file version {version}")
    off = 4 + struct.calcsize("<HIIII")
    spec = blob[off : off + n].decode("utf-8")
    off += n
    count = c * h * w
    if len(blob) - off != 4 * count:
        raise ValueError(f"feature payload has {len(blob) - off} bytes, expected {4 * count}")
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(c, h, w)
    return FeatureTensor.from_array(arr, spec)


def write_feature(tensor: FeatureTensor, path) -> None:
    Path(path).write_bytes(encode_feature(tensor))


def read_feature(path) -> FeatureTensor:
    return decode_feature(Path(path).read_bytes())


def feature_csv(tensor: FeatureTensor) -> str:
    """One row per (channel, row) pair: ``channel,kind,row,v0,...,v127``."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["channel", "kind", "row"] + [f"t{i}" for i in range(tensor.shape[2])])
    for ci, p in enumerate(tensor.planes):
        for r, row in enumerate(p.data):
            wr.writerow([ci, p.kind, r] + [repr(float(v)) for v in row.astype(np.float32)])
    return buf.getvalue()
