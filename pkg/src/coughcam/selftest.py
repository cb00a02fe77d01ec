"""Hand-worked examples that every module must reproduce.

``run()`` prints one PASS/FAIL line per check and returns True only if all
of them pass.  The whole suite takes well under a second.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import metrics
from .audio_io import AudioClip
from .augmentation import mix
from .beamforming import InspectionPlane, MicArray, compute_delays
from .cnn.layers import conv2d, cross_entropy, pool2d, softmax
from .cnn.networks import build_network, forward, zero_weights
from .features import assemble, frame_count, hz_to_mel, time_difference
from .pipeline import StreamConfig, StubClassifier, run_stream


def _va_hand_case():
    x = np.array([1.0, 3.0, 6.0, 10.0])
    v = time_difference(x)
    a = time_difference(v)
    np.testing.assert_array_equal(v, [2.0, 2.5, 3.5, 4.0])
    np.testing.assert_array_equal(a, [0.5, 0.75, 0.75, 0.5])


def _metrics_rows():
    r = metrics.compute(metrics.ConfusionMatrix(tp=36, fp=4, fn=4, tn=156)).percent()
    assert r == {"accuracy": 96.0, "recall": 90.0, "precision": 90.0, "f1": 90.0}, r
    r = metrics.compute(metrics.ConfusionMatrix(tp=36, fp=28, fn=4, tn=132)).percent()
    assert r == {"accuracy": 84.0, "recall": 90.0, "precision": 56.3, "f1": 69.2}, r


def _metrics_degenerate():
    r = metrics.compute(metrics.ConfusionMatrix(tp=0, fp=0, fn=5, tn=5))
    assert r.precision == 0.0 and r.f1 == 0.0 and r.degenerate["precision"]


def _tau_closed_form():
    plane = InspectionPlane(distance=1.0, width=1.0, height=1.0, resolution=(1, 1))
    tau = compute_delays(plane, MicArray([[0.1, 0.0, 0.0]]), 343.0)[0, 0, 0]
    assert abs(tau - (1.0 - math.sqrt(1.01)) / 343.0) < 1e-12, tau


def _conv_hand_case():
    y = conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1)
    np.testing.assert_array_equal(y[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def _maxpool_hand_case():
    x = np.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(pool2d(x, "max", 3, 2, 1)[0, 0], [[6, 8], [14, 16]])


def _softmax_and_loss():
    p = softmax(np.array([[math.log(2.0), 0.0]]))
    np.testing.assert_allclose(p, [[2 / 3, 1 / 3]], atol=1e-12)
    assert abs(cross_entropy(np.array([[0.5, 0.5]]), np.array([0])) - math.log(2.0)) < 1e-12


def _zero_weight_network():
    m = zero_weights(build_network("VNet", 3))
    probs = forward(m, np.zeros((1, 3, 128, 128), dtype=np.float32)).probabilities
    np.testing.assert_allclose(probs, [[0.5, 0.5]], atol=1e-7)


def _feature_geometry():
    assert frame_count(32000) == 132
    assert abs(float(hz_to_mel(700.0)) - 781.17) < 0.01
    t = assemble(AudioClip(np.zeros(32000), 16000), "MFCC-V-A")
    assert t.shape == (3, 128, 128), t.shape


def _mix_identity():
    e = AudioClip(np.linspace(-1, 1, 100), 16000)
    n = AudioClip(np.ones(100), 16000)
    np.testing.assert_array_equal(mix(e, n, 0.0, 1.0).samples, e.samples)
    np.testing.assert_allclose(mix(e, n, 0.2, 1.0).samples, 0.8 * e.samples + 0.2, atol=1e-15)


def _stream_cadence():
    ev = run_stream(AudioClip(np.zeros(160000), 16000), StubClassifier.from_name("always-others"), StreamConfig())
    assert len(ev) == 17
    assert [e.window_end for e in ev] == [2.0 + 0.5 * k for k in range(17)]


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("velocity/acceleration hand case", _va_hand_case),
    ("metrics pilot rows", _metrics_rows),
    ("metrics degenerate precision", _metrics_degenerate),
    ("steering delay closed form", _tau_closed_form),
    ("conv2d all-ones hand case", _conv_hand_case),
    ("max pool 3x3/2 pad 1 hand case", _maxpool_hand_case),
    ("softmax and cross-entropy", _softmax_and_loss),
    ("zero-weight network gives 0.5/0.5", _zero_weight_network),
    ("feature geometry", _feature_geometry),
    ("mixing identity and 0.2 blend", _mix_identity),
    ("stream cadence, 17 windows in 10 s", _stream_cadence),
]


def run(out=print) -> bool:
    ok = True
    for name, check in CHECKS:
        try:
            check()
        except Exception as exc:  # report every failure, keep going
            ok = False
            out(f"FAIL  {name}: {type(exc).__name__}: {exc}")
        else:
            out(f"PASS  {name}")
    return ok
