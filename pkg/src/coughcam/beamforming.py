"""Time-domain delay-and-sum imaging over a planar pixel grid.

Coordinates are metres in the array frame: microphones lie near the z = 0
plane, the inspection plane is parallel to it at ``z = distance`` and
centred on the boresight.

The beamformer output for pixel ``p`` is ``B_p(t) = sum_n a_n s_n(t - tau_pn)``
with ``tau_pn = (|X_p| - |X_p - M_n|) / c``.  Fractional delays are realized by
interpolation, so a steered channel is a short weighted sum of integer-shifted
copies of ``s_n``.  Stacking those shifted copies for all microphones turns the
whole pixel scan into one matrix product, which is how :func:`das_beamform`
evaluates it.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, read_wav, resample
from .errors import ShapeError

SPEED_OF_SOUND = 343.0
MIN_SPREADING_DISTANCE = 0.1
INTERP_MODES = ("linear", "sinc")
SINC_HALF_TAPS = 8


@dataclass(frozen=True, eq=False)
class MicArray:
    positions: np.ndarray  # N x 3, metres

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3) or pos.shape[0] < 1:
            raise ShapeError(f"mic positions must be N x 3, got {pos.shape}")
        if pos.shape[1] == 2:
            pos = np.hstack([pos, np.zeros((pos.shape[0], 1))])
        if len(np.unique(np.round(pos, 12), axis=0)) != len(pos):
            raise ValueError("microphone positions must be distinct")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def aperture(self) -> float:
        d = self.positions[:, None, :] - self.positions[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())


def spiral_array(n_mics: int = 112, radius: float = 0.1, turns: float = 3.3) -> MicArray:
    """Planar Archimedean spiral: radius grows linearly with angle."""
    k = np.arange(1, n_mics + 1) / n_mics
    r = radius * k
    theta = 2.0 * np.pi * turns * k
    return MicArray(np.column_stack([r * np.cos(theta), r * np.sin(theta), np.zeros(n_mics)]))


def read_geometry(path) -> MicArray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                if rows:
                    raise
                continue  # header
    return MicArray(np.array(rows))


def write_geometry(array: MicArray, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        for x, y, z in array.positions:
            wr.writerow([repr(float(x)), repr(float(y)), repr(float(z))])


@dataclass(frozen=True)
class InspectionPlane:
    distance: float = 1.0
    width: float = 1.0
    height: float = 1.0
    resolution: tuple[int, int] = (32, 32)  # (pixels across, pixels down)

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("inspection plane distance must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("inspection plane size must be positive")
        nx, ny = self.resolution
        if nx < 1 or ny < 1:
            raise ValueError("resolution must be at least 1 x 1")

    @property
    def shape(self) -> tuple[int, int]:
        nx, ny = self.resolution
        return ny, nx

    def pixel_centers(self) -> np.ndarray:
        """``ny x nx x 3`` world coordinates; row 0 is the lowest y."""
        nx, ny = self.resolution
        xs = -self.width / 2 + (np.arange(nx) + 0.5) * self.width / nx
        ys = -self.height / 2 + (np.arange(ny) + 0.5) * self.height / ny
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy, np.full_like(gx, self.distance)], axis=-1)

    def pixel_of(self, position) -> tuple[int, int]:
        """``(row, col)`` of the pixel containing the projection of ``position``."""
        nx, ny = self.resolution
        x, y = float(position[0]), float(position[1])
        col = int(np.clip(math.floor((x + self.width / 2) / self.width * nx), 0, nx - 1))
        row = int(np.clip(math.floor((y + self.height / 2) / self.height * ny), 0, ny - 1))
        return row, col


@dataclass(frozen=True)
class Source:
    position: tuple[float, float, float]
    signal: AudioClip
    gain: float = 1.0

    def __post_init__(self):
        if len(self.position) != 3 or self.position[2] <= 0:
            raise ValueError(f"source must be in front of the array (z > 0), got {self.position}")


@dataclass(frozen=True)
class Scene:
    sources: tuple[Source, ...]
    noise_floor: float = 0.0
    c: float = SPEED_OF_SOUND


@dataclass(frozen=True, eq=False)
class PowerMap:
    values: np.ndarray  # ny x nx
    plane: InspectionPlane
    window: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.plane.shape:
            raise ShapeError(f"map shape {v.shape} does not match plane {self.plane.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("power map values must be finite and non-negative")
        object.__setattr__(self, "values", v)


# --------------------------------------------------------------------------
# delays and delay-and-sum
# --------------------------------------------------------------------------

def compute_delays(plane: InspectionPlane, array: MicArray, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """``ny x nx x N`` steering delays in seconds."""
    return delays_for_points(plane.pixel_centers(), array, c)


def delays_for_points(points, array: MicArray, c: float = SPEED_OF_SOUND) -> np.ndarray:
    if c <= 0:
        raise ValueError("speed of sound must be positive")
    xp = np.asarray(points, dtype=np.float64)
    rel = xp[..., None, :] - array.positions  # X_n = X_p - M_n
    return (np.linalg.norm(xp, axis=-1)[..., None] - np.linalg.norm(rel, axis=-1)) / c


def _interp_taps(shift: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets and weights so that ``x(t - shift) ~= sum_j w_j x[t - k_j]``."""
    base = np.floor(shift)
    frac = shift - base
    if mode == "linear":
        ks = np.stack([base, base + 1], axis=-1)
        ws = np.stack([1.0 - frac, frac], axis=-1)
    elif mode == "sinc":
        j = np.arange(-SINC_HALF_TAPS + 1, SINC_HALF_TAPS + 1)
        ks = base[..., None] + j
        u = j - frac[..., None]
        win = np.cos(np.pi * u / (2 * SINC_HALF_TAPS)) ** 2  # Hann over +-half taps
        ws = np.sinc(u) * win
        ws /= ws.sum(axis=-1, keepdims=True)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    return ks.astype(np.int64), ws


def fractional_delay(x: np.ndarray, shift: float, mode: str = "linear") -> np.ndarray:
    """``y[t] = x(t - shift)`` with zeros outside the recorded range."""
    ks, ws = _interp_taps(np.array(shift, dtype=np.float64), mode)
    n = len(x)
    y = np.zeros(n)
    for k, w in zip(np.atleast_1d(ks), np.atleast_1d(ws)):
        k = int(k)
        if k >= 0:
            if k < n:
                y[k:] += w * x[: n - k]
        elif -k < n:
            y[: n + k] += w * x[-k:]
    return y


def das_beamform(
    signals,
    delays,
    sample_rate: float,
    weights=None,
    interp: str = "linear",
    span: tuple[int, int] | None = None,
    block: int = 4096,
) -> np.ndarray:
    """Delay-and-sum output for every steering point.

    ``signals`` is ``N x T``; ``delays`` is ``(..., N)`` in seconds.  Returns
    ``(..., T')`` where ``T'`` covers ``span = (start, stop)`` output samples
    (the full length by default).
    """
    s = np.asarray(signals, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"signals must be N x T, got {s.shape}")
    n_mics, n_t = s.shape
    d = np.asarray(delays, dtype=np.float64)
    if d.shape[-1] != n_mics:
        raise ShapeError(f"delays are for {d.shape[-1]} mics but {n_mics} channels were given")
    lead = d.shape[:-1]
    d = d.reshape(-1, n_mics)
    a = np.ones(n_mics) if weights is None else np.asarray(weights, dtype=np.float64)
    t0, t1 = (0, n_t) if span is None else span
    if not 0 <= t0 <= t1 <= n_t:
        raise ShapeError(f"span {span} outside 0..{n_t}")

    ks, ws = _interp_taps(d * sample_rate, interp)  # P x N x J
    ws = ws * a[None, :, None]
    kmin, kmax = int(ks.min()), int(ks.max())
    n_shift = kmax - kmin + 1
    # dense pixel weight matrix over (mic, integer shift) columns
    cols = np.arange(n_mics)[None, :, None] * n_shift + (ks - kmin)
    wmat = np.zeros((d.shape[0], n_mics * n_shift))
    np.add.at(wmat, (np.arange(d.shape[0])[:, None, None], cols), ws)

    out = np.empty((d.shape[0], t1 - t0))
    off = max(kmax, 0) + 1
    padded = np.zeros((n_mics, off + n_t + max(-kmin, 0) + 1))
    padded[:, off : off + n_t] = s
    for b0 in range(t0, t1, block):
        b1 = min(b0 + block, t1)
        # stack[n * n_shift + i, t] = s_n[t - (kmin + i)]
        stack = np.empty((n_mics, n_shift, b1 - b0))
        for i in range(n_shift):
            k = kmin + i
            stack[:, i, :] = padded[:, off + b0 - k : off + b1 - k]
        out[:, b0 - t0 : b1 - t0] = wmat @ stack.reshape(n_mics * n_shift, -1)
    return out.reshape(lead + (t1 - t0,))


def power_map(series, plane: InspectionPlane, window: tuple[int, int] | None = None, sample_rate: float | None = None) -> PowerMap:
    """Per-pixel mean square of the beamformer output over ``window`` (samples)."""
    b = np.asarray(series, dtype=np.float64)
    n_t = b.shape[-1]
    i0, i1 = (0, n_t) if window is None else window
    if not 0 <= i0 < i1 <= n_t:
        raise ShapeError(f"empty or out-of-range window {window} for {n_t} samples")
    vals = np.mean(b[..., i0:i1] ** 2, axis=-1)
    secs = (i0 / sample_rate, i1 / sample_rate) if sample_rate else (float(i0), float(i1))
    return PowerMap(vals.reshape(plane.shape), plane, secs)


def beamform_power(
    signals,
    plane: InspectionPlane,
    array: MicArray,
    sample_rate: float,
    c: float = SPEED_OF_SOUND,
    window: tuple[int, int] | None = None,
    interp: str = "linear",
) -> PowerMap:
    """Scan the plane and return the power map over ``window`` (samples)."""
    s = np.asarray(signals, dtype=np.float64)
    n_t = s.shape[1]
    i0, i1 = (0, n_t) if window is None else window
    if not 0 <= i0 < i1 <= n_t:
        raise ShapeError(f"empty or out-of-range window {window} for {n_t} samples")
    delays = compute_delays(plane, array, c)
    b = das_beamform(s, delays, sample_rate, interp=interp, span=(i0, i1))
    return PowerMap(np.mean(b**2, axis=-1), plane, (i0 / sample_rate, i1 / sample_rate))


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def bandlimited_noise(n: int, sample_rate: float, f_lo: float, f_hi: float, seed: int = 0) -> np.ndarray:
    """Unit-RMS Gaussian noise with a brick-wall pass band ``[f_lo, f_hi]``."""
    rng = np.random.Generator(np.random.Philox(seed))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < f_lo) | (f > f_hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x**2))


def simulate_scene(scene: Scene, array: MicArray, duration: float, sample_rate: int, seed: int = 0, interp: str = "linear") -> np.ndarray:
    """Free-field ``N x T`` microphone signals with 1/r spreading and white noise."""
    n_t = int(round(duration * sample_rate))
    out = np.zeros((array.n_mics, n_t))
    for src in scene.sources:
        sig = src.signal
        if sig.sample_rate != sample_rate:
            sig = resample(sig, sample_rate)
        x = np.zeros(n_t)
        m = min(n_t, len(sig))
        x[:m] = sig.samples[:m]
        dist = np.linalg.norm(array.positions - np.asarray(src.position, dtype=np.float64), axis=1)
        if dist.max() / scene.c * sample_rate >= n_t:
            raise ValueError("duration is shorter than the propagation delay")
        amp = src.gain / np.maximum(dist, MIN_SPREADING_DISTANCE)
        for n in range(array.n_mics):
            out[n] += amp[n] * fractional_delay(x, dist[n] / scene.c * sample_rate, interp)
    if scene.noise_floor > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        out += scene.noise_floor * rng.standard_normal(out.shape)
    return out


def load_scene(path) -> Scene:
    """Scene JSON: ``{sources: [{position, wav_path, gain}], noise_floor, c}``."""
    path = Path(path)
    cfg = json.loads(path.read_text())
    sources = []
    for s in cfg.get("sources", []):
        wav = Path(s["wav_path"])
        if not wav.is_absolute():
            wav = path.parent / wav
        sources.append(Source(tuple(float(v) for v in s["position"]), read_wav(wav), float(s.get("gain", 1.0))))
    return Scene(tuple(sources), float(cfg.get("noise_floor", 0.0)), float(cfg.get("c", SPEED_OF_SOUND)))


# --------------------------------------------------------------------------
# peaks and output
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Peak:
    pixel: tuple[int, int]  # (row, col)
    position: tuple[float, float, float]
    power: float


def locate_peaks(pmap: PowerMap, count: int = 1, min_separation: int = 1) -> list[Peak]:
    """Greedy non-maximum suppression over a square neighbourhood."""
    if count < 1:
        raise ValueError("count must be >= 1")
    vals = pmap.values.copy()
    centers = pmap.plane.pixel_centers()
    peaks: list[Peak] = []
    while len(peaks) < count:
        idx = int(np.argmax(vals))
        r, c = divmod(idx, vals.shape[1])
        if not vals[r, c] > 0:
            break
        peaks.append(Peak((r, c), tuple(float(v) for v in centers[r, c]), float(pmap.values[r, c])))
        r0, r1 = max(0, r - min_separation), r + min_separation + 1
        c0, c1 = max(0, c - min_separation), c + min_separation + 1
        vals[r0:r1, c0:c1] = -np.inf
    return peaks


def write_map_csv(pmap: PowerMap, path) -> None:
    np.savetxt(path, pmap.values, delimiter=",", fmt="%.9g")


def write_map_pgm(pmap: PowerMap, path) -> None:
    """8-bit binary PGM, min-max scaled, top row = highest y."""
    v = pmap.values[::-1]
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = np.round(scaled * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data[m.end() : m.end() + w * h], dtype=np.uint8).reshape(h, w)


def beamwidth(array: MicArray, wavelength: float, distance: float) -> float:
    """Approximate main-lobe width on a plane at ``distance`` (metres)."""
    return wavelength / max(array.aperture, 1e-12) * distance
