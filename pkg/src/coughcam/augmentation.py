"""Background-noise mixing augmentation with per-clip reproducible randomness.

Every augmented copy draws its noise clip, mixing ratio, volume and noise
crop from its own generator, keyed by ``(seed, output index)``.  Any single
output can therefore be regenerated in isolation from its provenance, and
the result does not depend on how the work is split across workers.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio_io import AudioClip
from .errors import ShapeError
from .metrics import COUGH, OTHERS

ZERO_ENERGY_EPS = 1e-12


@dataclass(frozen=True)
class AugmentPolicy:
    mix_ratio_range: tuple[float, float] = (0.0, 0.4)
    volume_range: tuple[float, float] = (0.6, 1.0)
    cough_replications: int = 45
    others_replications: int = 9
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.mix_ratio_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"invalid mix ratio range {self.mix_ratio_range}")
        lo, hi = self.volume_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"invalid volume range {self.volume_range}")
        if self.cough_replications < 1 or self.others_replications < 1:
            raise ValueError("replication counts must be >= 1")

    def replications(self, label: str) -> int:
        return self.cough_replications if label == COUGH else self.others_replications


@dataclass(frozen=True, eq=False)
class LabeledClip:
    clip: AudioClip
    label: str
    source_id: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (COUGH, OTHERS):
            raise ValueError(f"label must be {COUGH!r} or {OTHERS!r}, got {self.label!r}")


def energy(clip: AudioClip) -> float:
    return float(np.dot(clip.samples, clip.samples))


def is_zero_energy(clip: AudioClip, eps: float = ZERO_ENERGY_EPS) -> bool:
    return energy(clip) <= eps


def mix(event: AudioClip, noise: AudioClip, r: float, v: float) -> AudioClip:
    """``v * ((1 - r) * event + r * noise)``, sample by sample."""
    if len(event) != len(noise) or event.sample_rate != noise.sample_rate:
        raise ShapeError(
            f"cannot mix {len(event)} samples @ {event.sample_rate} Hz with "
            f"{len(noise)} samples @ {noise.sample_rate} Hz"
        )
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"mixing ratio must be in [0, 1], got {r}")
    if not 0.0 < v <= 1.0:
        raise ValueError(f"volume must be in (0, 1], got {v}")
    out = v * ((1.0 - r) * event.samples + r * noise.samples)
    return AudioClip(out, event.sample_rate)


def clip_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for output clip ``index`` under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Tile a short noise clip, or take a random crop of a long one."""
    if len(noise) == 0:
        raise ShapeError("noise clip is empty")
    if len(noise) < length:
        reps = -(-length // len(noise))
        return np.tile(noise, reps)[:length], 0
    start = int(rng.integers(0, len(noise) - length + 1))
    return noise[start : start + length], start


def match_peak(noise: np.ndarray, event: np.ndarray) -> np.ndarray:
    """Scale noise to the event's peak level (unit peak for a silent event)."""
    target = float(np.max(np.abs(event))) if len(event) else 0.0
    if target == 0.0:
        target = 1.0
    peak = float(np.max(np.abs(noise)))
    return noise * (target / peak) if peak > 0 else noise


def augment_one(event: LabeledClip, noises: Sequence[AudioClip], noise_ids: Sequence[str], policy: AugmentPolicy, index: int) -> LabeledClip:
    rng = clip_rng(policy.seed, index)
    k = int(rng.integers(0, len(noises)))
    r = float(rng.uniform(*policy.mix_ratio_range))
    v = float(rng.uniform(*policy.volume_range))
    noise = noises[k]
    if noise.sample_rate != event.clip.sample_rate:
        raise ShapeError(f"noise {noise_ids[k]} is {noise.sample_rate} Hz, event is {event.clip.sample_rate} Hz")
    seg, offset = fit_noise(noise.samples, len(event.clip), rng)
    seg = match_peak(seg, event.clip.samples)
    out = mix(event.clip, AudioClip(seg, noise.sample_rate), r, v)
    prov = {
        "source_id": event.source_id,
        "noise_id": noise_ids[k],
        "r": r,
        "v": v,
        "seed": policy.seed,
        "index": index,
        "noise_offset": offset,
    }
    return LabeledClip(out, event.label, event.source_id, prov)


def augment_dataset(
    events: Sequence[LabeledClip],
    noises: Sequence[AudioClip],
    policy: AugmentPolicy = AugmentPolicy(),
    noise_ids: Sequence[str] | None = None,
    workers: int = 1,
) -> list[LabeledClip]:
    """Replicate each event with random background noise.

    Cough clips yield ``policy.cough_replications`` copies, Others clips
    ``policy.others_replications``.  Zero-energy noise clips are dropped
    from the pool first.
    """
    if noise_ids is None:
        noise_ids = [f"noise{i}" for i in range(len(noises))]
    pool = [(n, nid) for n, nid in zip(noises, noise_ids) if not is_zero_energy(n)]
    if not events:
        return []
    if not pool:
        raise ValueError("no usable background noise: every noise clip is empty or zero-energy")
    kept, kept_ids = [p[0] for p in pool], [p[1] for p in pool]
    jobs = []
    index = 0
    for ev in events:
        for _ in range(policy.replications(ev.label)):
            jobs.append((ev, index))
            index += 1

    def run(job):
        return augment_one(job[0], kept, kept_ids, policy, job[1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(run, jobs))
    return [run(j) for j in jobs]


def split_train_valid(data: Sequence, fraction: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then the first ``round(fraction * N)`` items are training data."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    order = np.random.Generator(np.random.Philox(int(seed))).permutation(len(data))
    cut = int(round(fraction * len(data)))
    items = list(data)
    return [items[i] for i in order[:cut]], [items[i] for i in order[cut:]]


def manifest_record(item: LabeledClip, output_path) -> dict:
    p = item.provenance
    return {
        "source_id": item.source_id,
        "label": item.label,
        "noise_id": p.get("noise_id"),
        "r": p.get("r"),
        "v": p.get("v"),
        "seed": p.get("seed"),
        "index": p.get("index"),
        "output_path": str(output_path),
    }


def write_manifest(records: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
