"""WAV I/O, resampling and fixed-length segmentation.

Everything here works on :class:`AudioClip`, an immutable mono signal with
its sample rate.  The WAV reader is a small RIFF parser so that the error
behaviour (malformed container vs. unsupported codec) is under our control.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, UnsupportedFormatError, WavParseError

MODEL_RATE = 16000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

RESAMPLE_METHODS = ("sinc", "linear")
# Half-width of the windowed-sinc kernel, in zero crossings of the
# anti-aliasing filter (16 taps per phase at the lower of the two rates).
SINC_HALF_ZEROS = 8
SINC_ROLLOFF = 0.9
SINC_KAISER_BETA = 6.0


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono PCM signal; ``samples`` is a read-only float64 array."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def __eq__(self, other) -> bool:
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True)
class SegmentationPolicy:
    window_seconds: float = 2.0
    overlap_fraction: float = 0.0

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1)")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_seconds * sample_rate))

    def hop_samples(self, sample_rate: int) -> int:
        return max(1, int(round(self.window_samples(sample_rate) * (1.0 - self.overlap_fraction))))


# --------------------------------------------------------------------------
# WAV reading / writing
# --------------------------------------------------------------------------

def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise WavParseError(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def _decode(body: bytes, fmt_tag: int, bits: int, channels: int) -> np.ndarray:
    width = bits // 8
    frame = width * channels
    n = len(body) // frame
    body = body[: n * frame]
    if fmt_tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            x = np.frombuffer(body, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(body, dtype="<f8").astype(np.float64)
        else:
            raise UnsupportedFormatError(f"{bits}-bit float WAV not supported")
    elif bits == 8:
        x = (np.frombuffer(body, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(body, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 24:
        raw = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif bits == 32:
        x = np.frombuffer(body, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise UnsupportedFormatError(f"{bits}-bit PCM WAV not supported")
    return x.reshape(n, channels)


def read_wav(path) -> AudioClip:
    """Read a PCM (8/16/24/32-bit) or IEEE-float WAV file as a mono clip.

    Multichannel files are downmixed by averaging the channels.
    """
    return read_wav_channels_clip(read_wav_channels(path))


def read_wav_channels(path) -> tuple[np.ndarray, int]:
    """Read a WAV file keeping channels separate: returns ``(frames x channels, rate)``."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavParseError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    body = None
    for cid, chunk in _iter_chunks(data):
        if cid == b"fmt ":
            if len(chunk) < 16:
                raise WavParseError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", chunk, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(chunk) < 40:
                    raise WavParseError(f"{path}: extensible fmt chunk too short")
                sub = struct.unpack_from("<H", chunk, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            body = chunk
    if fmt is None:
        raise WavParseError(f"{path}: missing fmt chunk")
    if body is None:
        raise WavParseError(f"{path}: missing data chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormatError(f"{path}: format tag 0x{tag:04x} not supported")
    if channels < 1 or rate < 1 or bits % 8:
        raise WavParseError(f"{path}: invalid fmt fields (channels={channels}, rate={rate}, bits={bits})")
    return _decode(body, tag, bits, channels), int(rate)


def read_wav_channels_clip(frames_rate: tuple[np.ndarray, int]) -> AudioClip:
    frames, rate = frames_rate
    if frames.shape[1] == 1:
        mono = frames[:, 0]
    else:
        mono = frames.mean(axis=1)
    return AudioClip(mono, rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as a 32-bit IEEE-float mono little-endian WAV."""
    write_wav_channels(clip.samples[:, None], clip.sample_rate, path)


def write_wav_channels(frames: np.ndarray, sample_rate: int, path) -> None:
    """Write a ``frames x channels`` array as 32-bit float WAV."""
    frames = np.asarray(frames)
    if frames.ndim == 1:
        frames = frames[:, None]
    channels = frames.shape[1]
    payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    block = 4 * channels
    fmt = struct.pack(
        "<HHIIHHH", WAVE_FORMAT_IEEE_FLOAT, channels, sample_rate, sample_rate * block, block, 32, 0
    )
    fact = struct.pack("<I", frames.shape[0])
    out = b"WAVE"
    out += b"fmt " + struct.pack("<I", len(fmt)) + fmt
    out += b"fact" + struct.pack("<I", len(fact)) + fact
    out += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        out += b"\x00"
    try:
        Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(out)) + out)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def _sinc_table(up: int, down: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-phase kernel taps for an up/down rational resampler.

    Returns ``(offsets, table)`` where ``table[phase, k]`` weighs input sample
    ``floor(m * down / up) + offsets[k]`` for output sample ``m``.
    """
    scale = min(1.0, up / down)
    fc = scale * SINC_ROLLOFF
    half = int(math.ceil(SINC_HALF_ZEROS / fc))
    offsets = np.arange(-half + 1, half + 1)
    frac = np.arange(up)[:, None] / up
    u = offsets[None, :] - frac
    # Kaiser window evaluated continuously over [-half, half]
    w = np.i0(SINC_KAISER_BETA * np.sqrt(np.clip(1.0 - (u / half) ** 2, 0.0, None))) / np.i0(SINC_KAISER_BETA)
    table = fc * np.sinc(fc * u) * w
    table /= table.sum(axis=1, keepdims=True)
    return offsets, table


def resample(clip: AudioClip, target_rate: int, method: str = "sinc") -> AudioClip:
    """Rational-ratio resampling to ``target_rate``.

    ``method="sinc"`` is a Kaiser-windowed sinc polyphase filter (cutoff at
    0.9x the lower Nyquist); ``"linear"`` is plain linear interpolation.
    Output length is ``floor(len * target / source)``.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if method not in RESAMPLE_METHODS:
        raise ValueError(f"unknown resample method {method!r}")
    src = clip.sample_rate
    if target_rate == src:
        return clip
    g = math.gcd(src, int(target_rate))
    up, down = int(target_rate) // g, src // g
    n_in = len(clip)
    n_out = (n_in * up) // down
    x = clip.samples
    if n_out == 0:
        return AudioClip(np.zeros(0), target_rate)
    m = np.arange(n_out, dtype=np.int64)
    base = (m * down) // up
    if method == "linear":
        pos = base + ((m * down) % up) / up
        return AudioClip(np.interp(pos, np.arange(n_in), x), target_rate)

    offsets, table = _sinc_table(up, down)
    pad = len(offsets)
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    out = np.empty(n_out)
    chunk = 1 << 15
    for s in range(0, n_out, chunk):
        e = min(s + chunk, n_out)
        idx = base[s:e, None] + offsets[None, :] + pad
        ph = (m[s:e] * down) % up
        out[s:e] = np.einsum("ij,ij->i", xp[idx], table[ph])
    return AudioClip(out, target_rate)


# --------------------------------------------------------------------------
# Segmentation
# --------------------------------------------------------------------------

def window_starts(n_samples: int, window: int, hop: int) -> list[int]:
    if window < 1 or hop < 1:
        raise ShapeError("window and hop must be at least one sample")
    if n_samples < window:
        return []
    return list(range(0, n_samples - window + 1, hop))


def segment(clip: AudioClip, policy: SegmentationPolicy) -> list[AudioClip]:
    """Cut ``clip`` into fixed windows; a trailing partial window is dropped."""
    w = policy.window_samples(clip.sample_rate)
    hop = policy.hop_samples(clip.sample_rate)
    return [AudioClip(clip.samples[s : s + w], clip.sample_rate) for s in window_starts(len(clip), w, hop)]
