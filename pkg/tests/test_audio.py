import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from v2m.audio import (HOP, N_FFT, SAMPLE_RATE, AudioError, OnsetCurve, PeakList, RhythmKind,
                       Waveform, mel_filterbank, mel_raw, norm_resize, odf_lr, odf_lr_raw,
                       onset_envelope, pick_peaks, rhythm_representation, stft_magnitude,
                       tempo_bpms, tempogram_raw)
from v2m.synthetic import click_track

SR = SAMPLE_RATE


def sine(freq, seconds, amp=0.5):
    n = int(seconds * SR)
    return Waveform((amp * np.sin(2 * np.pi * freq * np.arange(n) / SR)).astype(np.float32))


def click_train(period_s, seconds, offset=0.25):
    times = np.arange(offset, seconds - 0.05, period_s)
    return click_track(times, seconds, bed=False), times


# -- STFT ---------------------------------------------------------------------------

def test_stft_matches_direct_dft():
    rng = np.random.default_rng(0)
    n_fft, hop = 64, 16
    x = rng.standard_normal(300).astype(np.float32)
    got = stft_magnitude(Waveform(x), n_fft, hop)
    # independent oracle: explicit DFT matrix on each hop-spaced frame
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    dft = np.exp(-2j * np.pi * k * n / n_fft)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    frames = 1 + (len(x) - n_fft) // hop
    want = np.stack([np.abs(dft @ (x[i * hop:i * hop + n_fft].astype(np.float64) * win))
                     for i in range(frames)])
    assert got.shape == (frames, n_fft // 2 + 1)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_stft_sine_peak_bin():
    spec = stft_magnitude(sine(440, 1.0))
    assert np.all(spec.argmax(axis=1) == round(440 * N_FFT / SR)) and round(440 * N_FFT / SR) == 20


def test_stft_silence_and_impulse():
    assert np.all(stft_magnitude(Waveform(np.zeros(SR // 2))) == 0)
    x = np.zeros(N_FFT)
    x[N_FFT // 2] = 1.0
    mag = stft_magnitude(Waveform(x))[0]
    np.testing.assert_allclose(mag, mag.mean(), rtol=0.1)


def test_stft_errors():
    with pytest.raises(AudioError, match="shorter"):
        stft_magnitude(Waveform(np.zeros(100)))
    with pytest.raises(AudioError, match="power of two"):
        stft_magnitude(Waveform(np.zeros(5000)), n_fft=1000)
    with pytest.raises(AudioError, match="hop"):
        stft_magnitude(Waveform(np.zeros(5000)), hop=0)


def test_waveform_rate_enforced():
    with pytest.raises(AudioError, match="44100"):
        Waveform(np.zeros(10), sample_rate=22050)


# -- mel ----------------------------------------------------------------------------

def test_mel_sine_argmax_nearest_center():
    band = mel_raw(stft_magnitude(sine(440, 1.0))).mean(axis=0).argmax()
    # oracle: HTK mel centers computed from scratch
    mel_max = 2595 * np.log10(1 + (SR / 2) / 700)
    centers = 700 * (10 ** (np.linspace(0, mel_max, 66)[1:-1] / 2595) - 1)
    assert band == np.abs(centers - 440).argmin()


def test_mel_silence_zero_noise_positive():
    silence = mel_raw(stft_magnitude(Waveform(np.zeros(SR))))
    noise = mel_raw(stft_magnitude(Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, SR))))
    assert np.all(silence == 0)
    assert noise.sum() > silence.sum()
    assert np.all(noise >= 0)


def test_mel_filterbank_errors_and_shape():
    fb = mel_filterbank(64)
    assert fb.shape == (64, N_FFT // 2 + 1)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) <= 1)
    with pytest.raises(AudioError):
        mel_filterbank(4000)
    with pytest.raises(AudioError):
        mel_raw(np.ones((3, 1025)), n_mels=8)


# -- norm_resize --------------------------------------------------------------------

def test_norm_resize_constant_gives_zeros():
    assert np.all(norm_resize(np.full((7, 5), 3.0), (3, 2)) == 0)


def test_norm_resize_identity_size():
    m = np.random.default_rng(0).random((6, 4))
    m[0, 0], m[1, 1] = 0.0, 1.0
    np.testing.assert_array_equal(norm_resize(m, (6, 4)), m)


def test_norm_resize_checkerboard_box_average():
    cb = np.indices((4, 4)).sum(axis=0) % 2
    np.testing.assert_allclose(norm_resize(cb, (2, 2)), 0.5)


def test_norm_resize_box_average_oracle():
    m = np.arange(24, dtype=float).reshape(6, 4)
    n = (m - m.min()) / (m.max() - m.min())
    want = n.reshape(3, 2, 2, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(norm_resize(m, (3, 2)), want, atol=1e-12)


def test_norm_resize_errors():
    with pytest.raises(AudioError):
        norm_resize(np.zeros((0, 3)), (2, 2))
    with pytest.raises(AudioError):
        norm_resize(np.ones((2, 2)), (0, 2))


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-100, 100)),
       st.integers(1, 8), st.integers(1, 8))
def test_norm_resize_range_and_shape(m, M, d):
    out = norm_resize(m, (M, d))
    assert out.shape == (M, d)
    assert np.all((out >= 0) & (out <= 1))


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-100, 100)), st.integers(1, 8), st.integers(1, 8))
def test_norm_resize_idempotent_when_range_is_full(m, M, d):
    once = norm_resize(m, (M, d))
    if once.min() == 0.0 and once.max() == 1.0 or once.max() == once.min() == 0.0:
        np.testing.assert_allclose(norm_resize(once, (M, d)), once, atol=1e-6)


# -- onset envelope -----------------------------------------------------------------

def test_onset_silence_zero():
    assert np.all(onset_envelope(Waveform(np.zeros(SR))).values == 0)


def test_onset_click_train_local_maxima():
    w, times = click_train(0.5, 4)
    env = onset_envelope(w)
    assert env.frame_rate == pytest.approx(SR / HOP)
    x = env.values
    for t in times:
        # first frame whose window reaches the click
        c = (t * SR - (N_FFT - 1)) / HOP
        lo, hi = int(np.floor(c)) - 1, int(np.ceil(c)) + 2
        seg = np.arange(max(lo, 1), hi)
        # the biggest value near the click is a local max of the envelope
        i = seg[np.argmax(x[seg])]
        assert x[i] >= x[i - 1] and x[i] >= x[i + 1]
        assert x[i] > 0.5 * x.max()


def test_onset_sustained_sine_decays():
    w = Waveform(np.concatenate([np.zeros(SR // 2), sine(440, 1.5).samples]).astype(np.float32))
    x = onset_envelope(w).values
    peak = x.argmax()
    assert np.all(x[peak + 5:] < 0.05 * x[peak])


def test_onset_silence_prefix_shifts_envelope():
    w, _ = click_train(0.5, 3)
    pad = 20 * HOP
    shifted = Waveform(np.concatenate([np.zeros(pad, np.float32), w.samples]))
    a, b = onset_envelope(w).values, onset_envelope(shifted).values
    assert np.all(b[:19] == 0)
    np.testing.assert_allclose(b[20:20 + len(a)][1:], a[1:len(b) - 20], rtol=1e-6, atol=1e-9)


# -- peak picking ------------------------------------------------------------------

def curve(vals, fr=1.0):
    return OnsetCurve(np.asarray(vals, dtype=float), fr)


def test_pick_peaks_single():
    p = pick_peaks(curve([0, 1, 0]), 1, 1, 0.0, 1)
    assert list(p.indices) == [1]


def test_pick_peaks_monotone():
    p = pick_peaks(curve(np.arange(10.0)), 2, 2, 0.0, 1)
    assert len(p) <= 1 and all(i == 9 for i in p.indices)


def test_pick_peaks_refractory():
    p = pick_peaks(curve([0, 0, 1, 0, 1, 0, 0, 0]), 1, 1, 0.0, 5)
    assert list(p.indices) == [2]


def test_pick_peaks_times_use_frame_rate():
    p = pick_peaks(curve([0, 0, 3, 0, 0], fr=4.0), 1, 1, 0.0, 1)
    assert p.times[0] == pytest.approx(0.5)


def brute_force_peaks(x, pre, post, delta, wait):
    out, last = [], None
    for i in range(len(x)):
        w = x[max(0, i - pre):i + post + 1]
        if x[i] == max(w) and x[i] >= np.mean(w) + delta and x[i] > min(w) and x[i] > 0:
            if last is None or i - last >= wait:
                out.append(i)
                last = i
    return out


@settings(max_examples=200)
@given(st.lists(st.integers(0, 5), min_size=0, max_size=30), st.integers(1, 4), st.integers(1, 4),
       st.sampled_from([0.0, 0.3, 1.0]), st.integers(1, 4))
def test_pick_peaks_matches_brute_force(vals, pre, post, delta, wait):
    x = np.asarray(vals, dtype=float)
    p = pick_peaks(curve(x), pre, post, delta, wait)
    assert list(p.indices) == brute_force_peaks(x, pre, post, delta, wait)
    assert np.all(np.diff(p.times) > 0) and np.all(p.strengths > 0)


# -- odf_lr -------------------------------------------------------------------------

def test_odf_lr_round_and_max_examples():
    np.testing.assert_allclose(odf_lr_raw(PeakList.from_pairs([(1.2, 0.8), (3.7, 0.5)]), 5),
                               [0, 0.8, 0, 0, 0.5])
    np.testing.assert_allclose(odf_lr_raw(PeakList.from_pairs([(2.1, 0.3), (2.4, 0.9)]), 4),
                               [0, 0, 0.9, 0])
    assert np.all(odf_lr(PeakList.from_pairs([]), 3).matrix == 0)


def brute_odf(pairs, M):
    out = [0.0] * M
    for m in range(M):
        for t, s in pairs:
            if min(max(int(np.floor(t + 0.5)), 0), M - 1) == m:
                out[m] = max(out[m], s)
    return out


@given(st.lists(st.tuples(st.floats(0, 9.49), st.floats(0.01, 5)), max_size=12), st.randoms())
def test_odf_lr_brute_force_and_permutation(pairs, rnd):
    M = 10
    want = brute_odf(pairs, M)
    np.testing.assert_allclose(odf_lr_raw(PeakList.from_pairs(pairs), M), want)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    p1 = PeakList.from_pairs(pairs)
    p2 = PeakList(np.array([t for t, _ in shuffled]), np.array([s for _, s in shuffled]),
                  np.zeros(len(shuffled), dtype=np.int64))
    np.testing.assert_array_equal(odf_lr_raw(p1, M), odf_lr_raw(p2, M))
    r = odf_lr(p1, M).matrix
    np.testing.assert_allclose(odf_lr(PeakList(np.arange(M, dtype=float), r[:, 0] + 0,
                                               np.arange(M)), M).matrix[r[:, 0] > 0],
                               r[r[:, 0] > 0], atol=1e-6)


def test_odf_lr_recovers_click_seconds():
    events = [1, 3, 4, 7]
    o = rhythm_representation(click_track(events, 9), "odf").matrix[:, 0]
    assert sorted(np.flatnonzero(o)) == events


# -- tempogram ----------------------------------------------------------------------

def tempo_argmax_bpm(w):
    tg = tempogram_raw(onset_envelope(w))
    return tempo_bpms()[tg.mean(axis=0).argmax()], tg


def test_tempogram_120_bpm():
    bpm, tg = tempo_argmax_bpm(click_train(0.5, 12)[0])
    bins = tempo_bpms()
    assert abs(np.abs(bins - bpm).argmin() - np.abs(bins - 120).argmin()) <= 1
    assert np.all(tg >= 0)


def test_tempogram_time_stretch_halves_tempo():
    b120, _ = tempo_argmax_bpm(click_train(0.5, 12)[0])
    b60, _ = tempo_argmax_bpm(click_train(1.0, 12)[0])
    bins = tempo_bpms()
    assert abs(np.abs(bins - b60).argmin() - np.abs(bins - b120 / 2).argmin()) <= 1


def test_tempogram_silence_and_short_error():
    tg = tempogram_raw(onset_envelope(Waveform(np.zeros(9 * SR))))
    assert np.all(tg == 0)
    with pytest.raises(AudioError, match="shorter"):
        tempogram_raw(onset_envelope(Waveform(np.zeros(3 * SR))))


# -- representations ----------------------------------------------------------------

@pytest.mark.parametrize("kind", list(RhythmKind))
def test_representations_shape_and_range(kind):
    w = click_track([1, 4, 6], 9)
    r = rhythm_representation(w, kind)
    assert r.matrix.shape == (9, kind.dim)
    assert np.all((r.matrix >= 0) & (r.matrix <= 1))


def test_partial_second_trimmed():
    w = Waveform(np.concatenate([click_track([2], 9).samples, np.zeros(SR // 3, np.float32)]))
    assert rhythm_representation(w, "mel").M == 9
