"""Streaming cough detection: windowing, classification and localization.

Samples are pushed into a :class:`StreamBuffer`, which hands out a 2 s
window every 0.5 s (75 % overlap).  Each window is classified from a single
reference channel; Cough windows are then localized by scanning the
delay-and-sum power map of all microphone channels over the same window.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .audio_io import MODEL_RATE, AudioClip
from .beamforming import SPEED_OF_SOUND, InspectionPlane, MicArray, beamform_power, locate_peaks
from .cnn.networks import NetworkModel, forward
from .errors import ConfigError
from .features import assemble, normalize, spec_channels
from .metrics import COUGH, OTHERS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StreamConfig:
    window_seconds: float = 2.0
    hop_seconds: float = 0.5
    feature_spec: str = "MFCC-V-A"
    decision_threshold: float = 0.5
    localize: bool = False
    sample_rate: int = MODEL_RATE
    workers: int = 1

    def __post_init__(self):
        if self.hop_seconds <= 0 or self.hop_seconds > self.window_seconds:
            raise ConfigError("hop must be positive and no longer than the window")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ConfigError("decision threshold must be a probability")

    @property
    def overlap(self) -> float:
        return 1.0 - self.hop_seconds / self.window_seconds

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))


@dataclass(frozen=True, eq=False)
class Window:
    start: int  # sample index of the first sample
    samples: np.ndarray  # channels x window_samples


class StreamBuffer:
    """Fixed-size ring of the most recent samples, emitting overlapping windows.

    Memory is one window per channel regardless of how much audio has been
    pushed; a window is emitted each time ``hop`` new samples have arrived
    after the first full window, independent of how the input is chunked.
    """

    def __init__(self, window: int, hop: int, channels: int = 1):
        if window < 1 or hop < 1 or hop > window:
            raise ConfigError("need 1 <= hop <= window")
        self.window = window
        self.hop = hop
        self.channels = channels
        self._ring = np.zeros((channels, window))
        self._received = 0
        self._next_end = window

    @property
    def received(self) -> int:
        return self._received

    @property
    def buffered(self) -> int:
        return min(self._received, self.window)

    def _write(self, x: np.ndarray) -> None:
        n = x.shape[1]
        pos = self._received % self.window
        first = min(n, self.window - pos)
        self._ring[:, pos : pos + first] = x[:, :first]
        self._ring[:, : n - first] = x[:, first:]
        self._received += n

    def push(self, samples) -> list[Window]:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[0] != self.channels:
            raise ConfigError(f"expected {self.channels} channels, got {x.shape[0]}")
        out = []
        i = 0
        while i < x.shape[1]:
            # never write past the next emission point, so the ring still holds that window
            take = min(x.shape[1] - i, self._next_end - self._received, self.window)
            self._write(x[:, i : i + take])
            i += take
            if self._received == self._next_end:
                pos = self._received % self.window
                win = np.concatenate([self._ring[:, pos:], self._ring[:, :pos]], axis=1)
                out.append(Window(self._next_end - self.window, win))
                self._next_end += self.hop
        return out


# --------------------------------------------------------------------------
# classifiers
# --------------------------------------------------------------------------

Classifier = Callable[[AudioClip], tuple[str, float]]


@dataclass(frozen=True)
class StubClassifier:
    """Fixed answer, for exercising the pipeline without trained weights."""

    label: str = OTHERS

    def __call__(self, window: AudioClip) -> tuple[str, float]:
        return self.label, 1.0 if self.label == COUGH else 0.0

    @classmethod
    def from_name(cls, name: str) -> "StubClassifier":
        names = {"always-cough": COUGH, "always-others": OTHERS}
        if name not in names:
            raise ConfigError(f"unknown stub {name!r}; expected one of {sorted(names)}")
        return cls(names[name])


class NetworkClassifier:
    """Features, per-channel normalization and a CNN forward pass."""

    def __init__(self, model: NetworkModel, feature_spec: str | None = None, channel_stats=None, threshold: float = 0.5):
        self.model = model
        self.feature_spec = feature_spec or model.feature_spec or "MFCC-V-A"
        self.channel_stats = channel_stats if channel_stats is not None else model.channel_stats
        self.threshold = threshold
        if spec_channels(self.feature_spec) != model.in_channels:
            raise ConfigError(
                f"feature spec {self.feature_spec!r} has {spec_channels(self.feature_spec)} channels, "
                f"{model.kind} expects {model.in_channels}"
            )

    def probability(self, window: AudioClip) -> float:
        feat = assemble(window, self.feature_spec)
        if self.channel_stats is not None:
            feat = normalize([feat], self.channel_stats)[0]
        return float(forward(self.model, feat.to_array()[None]).probabilities[0, 0])

    def __call__(self, window: AudioClip) -> tuple[str, float]:
        p = self.probability(window)
        return (COUGH if p > self.threshold else OTHERS), p


def classify_window(window: AudioClip, classifier, config: StreamConfig = StreamConfig()) -> tuple[str, float, float]:
    """Classify one window; returns ``(label, cough probability, seconds taken)``."""
    if len(window) != config.window_samples:
        raise ConfigError(f"window has {len(window)} samples, expected {config.window_samples}")
    if isinstance(classifier, NetworkModel):
        classifier = NetworkClassifier(classifier, config.feature_spec, threshold=config.decision_threshold)
    t0 = time.perf_counter()
    _, conf = classifier(window)
    latency = time.perf_counter() - t0
    # strict inequality: a probability exactly at the threshold is Others
    label = COUGH if conf > config.decision_threshold else OTHERS
    return label, float(conf), latency


# --------------------------------------------------------------------------
# stream driver
# --------------------------------------------------------------------------

@dataclass
class DetectionEvent:
    window_start: float
    window_end: float
    label: str
    confidence: float
    inference_latency: float
    location: dict | None = None
    processing_time: float = 0.0

    def to_record(self) -> dict:
        return {
            "t_start": self.window_start,
            "t_end": self.window_end,
            "label": self.label,
            "confidence": self.confidence,
            "location": self.location,
            "latency_s": self.inference_latency,
        }


@dataclass
class StreamSummary:
    total_windows: int = 0
    cough_count: int = 0
    mean_latency: float = 0.0
    deadline_misses: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Localizer:
    array: MicArray
    plane: InspectionPlane
    c: float = SPEED_OF_SOUND
    interp: str = "linear"

    def __call__(self, block: np.ndarray, sample_rate: int) -> dict | None:
        pmap = beamform_power(block, self.plane, self.array, sample_rate, self.c, interp=self.interp)
        peaks = locate_peaks(pmap, 1)
        if not peaks:
            return None
        x, y, z = peaks[0].position
        return {"x": x, "y": y, "z": z, "power": peaks[0].power, "pixel": list(peaks[0].pixel)}


def _chunks(signal: np.ndarray, size: int) -> Iterable[np.ndarray]:
    for s in range(0, signal.shape[1], size):
        yield signal[:, s : s + size]


def run_stream(
    source,
    classifier,
    config: StreamConfig = StreamConfig(),
    localizer: Localizer | None = None,
    chunk_size: int = 1600,
    summary: StreamSummary | None = None,
) -> list[DetectionEvent]:
    """Run the detector over a recording.

    ``source`` is a mono :class:`AudioClip` or an ``N x T`` array of microphone
    channels at ``config.sample_rate``.  The classifier sees the channel mean;
    the localizer (required when ``config.localize``) sees all channels.
    """
    if isinstance(source, AudioClip):
        if source.sample_rate != config.sample_rate:
            raise ConfigError(f"stream expects {config.sample_rate} Hz, got {source.sample_rate} Hz")
        data = source.samples[None, :]
    else:
        data = np.asarray(source, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
    if config.localize and localizer is None:
        raise ConfigError("localization requested but no array/plane was provided")
    if config.localize and localizer.array.n_mics != data.shape[0]:
        raise ConfigError(f"array has {localizer.array.n_mics} mics but the feed has {data.shape[0]} channels")
    if isinstance(classifier, NetworkModel):
        classifier = NetworkClassifier(classifier, config.feature_spec, threshold=config.decision_threshold)

    fs = config.sample_rate
    buf = StreamBuffer(config.window_samples, config.hop_samples, data.shape[0])

    def process(win: Window) -> DetectionEvent:
        t0 = time.perf_counter()
        ref = AudioClip(win.samples.mean(axis=0), fs)
        label, conf, latency = classify_window(ref, classifier, config)
        loc = None
        if config.localize and label == COUGH:
            loc = localizer(win.samples, fs)
        return DetectionEvent(
            win.start / fs,
            (win.start + config.window_samples) / fs,
            label,
            conf,
            latency,
            loc,
            time.perf_counter() - t0,
        )

    events: list[DetectionEvent] = []
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            futures = []
            for chunk in _chunks(data, chunk_size):
                futures += [ex.submit(process, w) for w in buf.push(chunk)]
            events = [f.result() for f in futures]
    else:
        for chunk in _chunks(data, chunk_size):
            events += [process(w) for w in buf.push(chunk)]

    summary = summary if summary is not None else StreamSummary()
    summary.total_windows = len(events)
    summary.cough_count = sum(e.label == COUGH for e in events)
    summary.mean_latency = float(np.mean([e.inference_latency for e in events])) if events else 0.0
    for e in events:
        if e.processing_time >= config.hop_seconds:
            summary.deadline_misses += 1
            log.warning(
                "window ending at %.2f s took %.3f s, over the %.2f s hop", e.window_end, e.processing_time, config.hop_seconds
            )
    return events


def write_events(events: Sequence[DetectionEvent], path) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(e.to_record()) + "\n")
