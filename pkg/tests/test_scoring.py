import math
import time

import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from foga.config import ConfigError, DataError, ModelConfig, ScoringConfig, SyntheticSpec
from foga.datapipe import load_video, synth_generate
from foga.scoring import (
    error_map,
    frame_auc,
    gaussian_smooth,
    hybrid_error,
    normalize_scores,
    plain_psnr,
    pyramid_psnr,
    pyramid_terms,
    score_video,
    summarize_auc,
)

WINDOWS = (4, 8, 16, 32)


class CopyLast(nn.Module):
    """Predicts both horizons as the last input frame."""

    def __init__(self, t=4, sigma=4, c_in=3):
        super().__init__()
        self.config = ModelConfig(t=t, sigma=sigma, c_in=c_in, image_size=64,
                                  channel_plan=(8, 16, 24, 32))

    def forward(self, x):
        last = x[:, -self.config.c_in:]
        return last, last


# ── error maps ──────────────────────────────────────────────


def test_error_map_examples():
    gt = torch.rand(3, 8, 8)
    assert torch.all(error_map(gt, gt) == 0)
    torch.testing.assert_close(error_map(gt + 0.25, gt), torch.full((8, 8), 0.0625))


@pytest.mark.parametrize("seed", range(5))
def test_error_map_matches_loop(seed):
    g = torch.Generator().manual_seed(seed)
    p, q = torch.rand(3, 7, 9, generator=g, dtype=torch.float64), torch.rand(3, 7, 9, generator=g, dtype=torch.float64)
    np.testing.assert_allclose(error_map(p, q).numpy(), oracles.error_map(p.numpy(), q.numpy()), atol=1e-7)


def test_hybrid_error():
    e_i, e_f = torch.rand(5, 5), torch.rand(5, 5)
    assert torch.equal(hybrid_error(e_i, e_f, 0.0), e_i)
    assert torch.equal(hybrid_error(e_i, e_i, 1.0), 2 * e_i)
    with pytest.raises(ConfigError):
        hybrid_error(e_i, e_f, -0.1)


# ── PSNR ────────────────────────────────────────────────────


def test_pyramid_psnr_examples():
    # only the top window is non-zero -> the four terms sum to 0.01
    err = torch.zeros(64, 64)
    err[:4, :4] = 0.01 / (1 + 1 / 4 + 1 / 16 + 1 / 64)
    assert float(pyramid_psnr(err, WINDOWS)) == pytest.approx(20.0, abs=1e-5)
    assert float(pyramid_psnr(torch.zeros(224, 224), WINDOWS)) == pytest.approx(80.0)


def test_pyramid_psnr_constant_map():
    c = 0.003
    expected = 10 * math.log10(1 / (4 * c))
    assert float(pyramid_psnr(torch.full((224, 224), c, dtype=torch.float64), WINDOWS)) == pytest.approx(expected)


@pytest.mark.parametrize("seed", range(20))
def test_pyramid_matches_loop(seed):
    rng = np.random.default_rng(seed)
    side = int(rng.choice([32, 40, 64]))
    err = rng.random((side, side)) ** 3
    got = pyramid_terms(torch.from_numpy(err), WINDOWS).numpy()
    np.testing.assert_allclose(got, oracles.pyramid_terms(err, WINDOWS), atol=1e-6)
    assert float(pyramid_psnr(torch.from_numpy(err), WINDOWS)) == pytest.approx(
        oracles.pyramid_psnr(err, WINDOWS), abs=1e-6)


def test_pyramid_exact_on_aligned_windows():
    rng = np.random.default_rng(11)
    err = rng.integers(0, 16, (32, 32)).astype(np.float64) / 16  # dyadic: exact sums
    assert list(pyramid_terms(torch.from_numpy(err), WINDOWS).numpy()) == oracles.pyramid_terms(err, WINDOWS)


def test_plain_psnr_examples():
    assert float(plain_psnr(torch.full((10, 10), 0.001, dtype=torch.float64))) == pytest.approx(30.0)
    assert float(plain_psnr(torch.zeros(10, 10))) == pytest.approx(80.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (32, 32), elements=st.floats(1e-4, 1.0)), st.floats(1.01, 10))
def test_psnr_decreases_when_error_scaled(err, s):
    e = torch.from_numpy(err)
    assert pyramid_psnr(e * s, WINDOWS) < pyramid_psnr(e, WINDOWS)
    assert plain_psnr(e * s) < plain_psnr(e)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (32, 32), elements=st.floats(0, 1)),
       arrays(np.float64, (32, 32), elements=st.floats(0, 1)), st.floats(0, 2))
def test_larger_hybrid_error_never_larger_psnr(e_i, extra, lam):
    e_i, extra = torch.from_numpy(e_i), torch.from_numpy(extra)
    base = hybrid_error(e_i, torch.zeros_like(e_i), lam)
    more = hybrid_error(e_i, extra, lam)
    assert pyramid_psnr(more, WINDOWS) <= pyramid_psnr(base, WINDOWS)


def test_plain_faster_than_pyramid():
    err = torch.rand(16, 224, 224)

    def per_call(fn, reps=30):
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn(err)
            times.append(time.perf_counter() - t0)
        return np.median(times)

    assert per_call(plain_psnr) < per_call(lambda e: pyramid_psnr(e, WINDOWS))


# ── series ──────────────────────────────────────────────────


def test_normalize_examples():
    assert list(normalize_scores([20, 25, 30])) == [0.0, 0.5, 1.0]
    assert list(normalize_scores([7, 7, 7])) == [0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        normalize_scores([])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-100, 100)),
       st.floats(0.1, 10), st.floats(-50, 50))
def test_normalize_affine_invariant(x, a, b):
    np.testing.assert_allclose(normalize_scores(a * x + b), normalize_scores(x), atol=1e-9)
    n = normalize_scores(x)
    assert n.min() >= 0 and n.max() <= 1
    if x.max() - x.min() > 1e-9:
        assert n.min() == 0.0 and n.max() == 1.0


def test_smooth_constant_unchanged():
    np.testing.assert_allclose(gaussian_smooth(np.full(30, 0.4), 3), 0.4, atol=1e-12)


def test_smooth_impulse_gives_kernel():
    sigma = 2.0
    x = np.zeros(41)
    x[20] = 1.0
    k = oracles.gaussian_kernel(sigma)
    r = len(k) // 2
    out = gaussian_smooth(x, sigma)
    np.testing.assert_allclose(out[20 - r : 21 + r], k, atol=1e-12)
    assert np.all(out[: 20 - r] == 0) and np.all(out[21 + r :] == 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-5, 5)), st.floats(0.3, 6))
def test_smooth_within_range(x, sigma):
    out = gaussian_smooth(x, sigma)
    assert len(out) == len(x)
    assert out.min() >= x.min() - 1e-9 and out.max() <= x.max() + 1e-9


def test_smooth_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        gaussian_smooth([1, 2, 3], 0)


# ── AUC ─────────────────────────────────────────────────────


def test_auc_examples():
    assert frame_auc([0.9, 0.1], [1, 0]) == 1.0
    assert frame_auc([0.1, 0.9], [1, 0]) == 0.0
    assert frame_auc([0.5, 0.5, 0.5], [1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        frame_auc([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_auc_matches_pairwise(seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 6, 40) / 5.0   # many ties
    labels = rng.integers(0, 2, 40)
    labels[:2] = [0, 1]
    assert frame_auc(scores, labels) == pytest.approx(oracles.pairwise_auc(scores, labels), abs=1e-12)


# ── full pipeline ───────────────────────────────────────────


def test_identical_frames_perfect_predictor():
    frames = torch.zeros(20, 3, 64, 64)
    s = score_video(frames, CopyLast(), ScoringConfig())
    assert np.all(s.psnr == s.psnr[0])
    assert np.all(s.normalized == 0)
    assert np.all(s.anomaly == s.anomaly[0])


def test_series_length_and_padding():
    frames = torch.rand(30, 3, 64, 64) * 2 - 1
    s = score_video(frames, CopyLast(t=4, sigma=4), ScoringConfig())
    assert len(s) == 30
    assert len(s.psnr) == 30 - 4 - 4 + 1
    assert s.first_scored == 4
    assert np.all(s.normalized[:4] == s.normalized[4])
    last = s.first_scored + len(s.psnr) - 1
    assert np.all(s.normalized[last:] == s.normalized[last])


def test_too_short_video():
    with pytest.raises(DataError):
        score_video(torch.zeros(7, 3, 64, 64), CopyLast(), ScoringConfig())


def test_teleport_peak_inside_interval():
    spec = SyntheticSpec(num_train=0, num_test=3, anomaly_types=("teleport",),
                         anomaly_length=(20, 20), seed=2)
    _, test = synth_generate(spec)
    model = CopyLast()
    for video in test:
        frames = load_video(video, 64, 3)
        s = score_video(frames, model, ScoringConfig(lam=0.06), video.video_id, video.labels)
        assert video.labels[int(np.argmax(s.anomaly))] == 1


def test_score_deterministic_bytes():
    frames = torch.rand(25, 3, 64, 64) * 2 - 1
    a = score_video(frames, CopyLast(), ScoringConfig())
    b = score_video(frames, CopyLast(), ScoringConfig())
    assert a.anomaly.tobytes() == b.anomaly.tobytes()


def test_csv_export(tmp_path):
    frames = torch.rand(12, 3, 64, 64) * 2 - 1
    labels = np.array([0] * 6 + [1] * 6)
    s = score_video(frames, CopyLast(), ScoringConfig(), "v", labels)
    path = s.to_csv(tmp_path / "v.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "frame_index,raw_psnr,normalized,anomaly_score,label"
    assert len(lines) == 13
    assert lines[1].split(",")[1] == ""          # padded prefix
    assert lines[5].split(",")[1] != ""          # first scored frame
    assert lines[-1].endswith(",1")


def test_summarize_micro_and_macro():
    frames = torch.rand(20, 3, 64, 64) * 2 - 1
    cfg = ScoringConfig()
    s1 = score_video(frames, CopyLast(), cfg, "a", np.array([0] * 10 + [1] * 10))
    s2 = score_video(frames, CopyLast(), cfg, "b", np.zeros(20, dtype=int))
    summary = summarize_auc([s1, s2])
    assert summary.per_video["b"] is None
    assert summary.macro == summary.per_video["a"]
    assert 0 <= summary.micro <= 1


def test_pyramid_window_larger_than_map():
    with pytest.raises(ConfigError):
        pyramid_psnr(torch.zeros(16, 16), WINDOWS)
