"""Cough detection camera toolkit.

Difference-map acoustic features, from-scratch CNN inference for three
binary cough classifiers, noise-mixing augmentation, delay-and-sum
beamforming over a simulated microphone array, a streaming detector and
the usual classification metrics.
"""

__version__ = "0.1.0"

from .audio_io import AudioClip, read_wav, resample, write_wav  # noqa: E402
from .errors import CoughCamError  # noqa: E402

__all__ = ["AudioClip", "CoughCamError", "__version__", "read_wav", "resample", "write_wav"]
