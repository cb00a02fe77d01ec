import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coughcam.audio_io import AudioClip
from coughcam.beamforming import simulate_scene
from coughcam.cnn import build_network, init_weights, zero_weights
from coughcam.errors import ConfigError
from coughcam.pipeline import (
    Localizer,
    NetworkClassifier,
    StreamBuffer,
    StreamConfig,
    StreamSummary,
    StubClassifier,
    classify_window,
    run_stream,
    write_events,
)
from scenes import ARRAY, FS, PLANE, pixel_scene

TEN_SECONDS = AudioClip(np.zeros(10 * FS), FS)


def test_config_arithmetic():
    c = StreamConfig()
    assert (c.window_samples, c.hop_samples, c.overlap) == (32000, 8000, 0.75)
    with pytest.raises(ConfigError):
        StreamConfig(hop_seconds=3.0)
    with pytest.raises(ConfigError):
        StreamConfig(decision_threshold=1.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3000), st.integers(1, 400), st.integers(1, 200), st.integers(1, 500))
def test_buffer_windows_match_slicing(n, window, hop, chunk):
    hop = min(hop, window)
    x = np.random.default_rng(n).standard_normal(n)
    buf = StreamBuffer(window, hop)
    got = []
    for s in range(0, n, chunk):
        got += buf.push(x[s : s + chunk])
        assert buf.buffered <= window
    starts = [s for s in range(0, n, hop) if s + window <= n]
    assert [w.start for w in got] == starts
    for w in got:
        np.testing.assert_array_equal(w.samples[0], x[w.start : w.start + window])


def test_buffer_multichannel_and_errors():
    buf = StreamBuffer(4, 2, channels=3)
    (w,) = buf.push(np.arange(12.0).reshape(3, 4))
    np.testing.assert_array_equal(w.samples, np.arange(12.0).reshape(3, 4))
    with pytest.raises(ConfigError):
        buf.push(np.zeros((2, 4)))
    with pytest.raises(ConfigError):
        StreamBuffer(4, 5)


@pytest.mark.parametrize("chunk", [1, 160, 1600, 32000, 160000])
def test_seventeen_windows_regardless_of_chunking(chunk):
    ev = run_stream(TEN_SECONDS, StubClassifier.from_name("always-others"), chunk_size=chunk)
    assert len(ev) == 17
    assert [e.window_end for e in ev] == [2.0 + 0.5 * k for k in range(17)]
    assert [e.window_start for e in ev] == [0.5 * k for k in range(17)]
    assert {e.label for e in ev} == {"Others"}


def test_stubs():
    ev = run_stream(TEN_SECONDS, StubClassifier.from_name("always-cough"))
    assert all(e.label == "Cough" and e.confidence == 1.0 for e in ev)
    with pytest.raises(ConfigError):
        StubClassifier.from_name("sometimes")


def test_short_and_empty_input():
    assert run_stream(AudioClip(np.zeros(31999), FS), StubClassifier()) == []
    assert run_stream(np.zeros((1, 0)), StubClassifier()) == []
    assert len(run_stream(AudioClip(np.zeros(32000), FS), StubClassifier())) == 1


def test_zero_model_sits_on_the_threshold():
    m = zero_weights(build_network("GNet"))
    summary = StreamSummary()
    ev = run_stream(TEN_SECONDS, m, summary=summary)
    assert len(ev) == 17
    # p = 0.5 exactly, and the decision is strict, so every window is Others
    assert all(e.label == "Others" and abs(e.confidence - 0.5) < 1e-7 for e in ev)
    assert summary.total_windows == 17 and summary.cough_count == 0
    assert all(e.processing_time < 0.5 for e in ev)


def test_classify_window_threshold_and_latency():
    clip = AudioClip(np.zeros(32000), FS)
    label, conf, latency = classify_window(clip, StubClassifier.from_name("always-cough"))
    assert (label, conf) == ("Cough", 1.0) and latency >= 0
    label, _, _ = classify_window(clip, lambda w: ("Cough", 0.5))
    assert label == "Others"
    label, _, _ = classify_window(clip, lambda w: ("Others", 0.8), StreamConfig(decision_threshold=0.7))
    assert label == "Cough"
    with pytest.raises(ConfigError):
        classify_window(AudioClip(np.zeros(100), FS), StubClassifier())


def test_network_classifier_checks_channels():
    m = init_weights(build_network("VNet", 1), seed=0)
    with pytest.raises(ConfigError):
        NetworkClassifier(m, "MFCC-V-A")
    clf = NetworkClassifier(m, "MFCC")
    p = clf.probability(AudioClip(np.random.default_rng(0).standard_normal(32000) * 0.1, FS))
    assert 0.0 <= p <= 1.0


def test_threads_do_not_change_results():
    m = init_weights(build_network("RNet", 3), seed=1)
    x = AudioClip(np.random.default_rng(2).standard_normal(5 * FS) * 0.1, FS)
    a = run_stream(x, m, StreamConfig(workers=1))
    b = run_stream(x, m, StreamConfig(workers=3))
    assert [(e.window_end, e.label, e.confidence) for e in a] == [(e.window_end, e.label, e.confidence) for e in b]


def test_localization_only_for_cough_windows():
    scene = pixel_scene([(20, 8)], seconds=2.2)
    sig = simulate_scene(scene, ARRAY, 2.2, FS)
    loc = Localizer(ARRAY, PLANE)
    ev = run_stream(sig, StubClassifier.from_name("always-cough"), StreamConfig(localize=True), loc)
    assert len(ev) == 1
    r, c = ev[0].location["pixel"]
    assert abs(r - 20) <= 1 and abs(c - 8) <= 1
    ev = run_stream(sig, StubClassifier.from_name("always-others"), StreamConfig(localize=True), loc)
    assert ev[0].location is None
    with pytest.raises(ConfigError):
        run_stream(sig[:3], StubClassifier(), StreamConfig(localize=True), loc)
    with pytest.raises(ConfigError):
        run_stream(sig, StubClassifier(), StreamConfig(localize=True))


def test_events_jsonl(tmp_path):
    ev = run_stream(TEN_SECONDS, StubClassifier())
    write_events(ev, tmp_path / "e.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "e.jsonl").read_text().splitlines()]
    assert len(rows) == 17
    assert set(rows[0]) == {"t_start", "t_end", "label", "confidence", "location", "latency_s"}
