import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alcpd.errors import DegenerateInputError, InvalidInputError
from alcpd.spectral import (WindowKind, diss, profile_valid, scdm, scdm_profile, scm, sgd, smc,
                            spectral_uncertainty, stft, window_function)


def _direct_mag(frame):
    A = len(frame)
    t = np.arange(A)
    return np.array([abs(np.sum(frame * np.exp(-2j * np.pi * k * t / A))) for k in range(A // 2 + 1)])


def test_stft_zero_signal():
    spec = stft(np.zeros(40), 8)
    assert np.all(spec.frames == 0)


def test_stft_constant_rectangular_is_dc_only():
    spec = stft(np.ones(20), 8, window_kind="rectangular")
    np.testing.assert_allclose(spec.frames, np.tile([8, 0, 0, 0, 0], (13, 1)), atol=1e-12)


def test_stft_peak_bin_moves_with_frequency():
    t = np.arange(128)
    x = np.where(t < 64, np.sin(2 * np.pi * t / 8), np.sin(2 * np.pi * t / 16))
    spec = stft(x, 16, window_kind=WindowKind.RECTANGULAR)
    assert int(np.argmax(spec.frames[0])) == 2
    assert int(np.argmax(spec.frames[-1])) == 1


def test_stft_frame_matches_direct_dft_and_centers():
    rng = np.random.default_rng(0)
    x = rng.normal(size=30)
    spec = stft(x, 10, hop=3)
    w = window_function("hann", 10)
    np.testing.assert_allclose(spec.frames[2], _direct_mag(w * x[6:16]), atol=1e-10)
    np.testing.assert_allclose(spec.frame_centers[:3], [5.0, 8.0, 11.0])


def test_periodic_hann_values():
    np.testing.assert_allclose(window_function("hann", 4), [0.0, 0.5, 1.0, 0.5], atol=1e-15)


def test_stft_rejects_short_signal():
    with pytest.raises(InvalidInputError):
        stft(np.zeros(5), 8)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 80), A=st.integers(2, 20), hop=st.integers(1, 10))
def test_stft_frame_count(n, A, hop):
    if n < A:
        return
    spec = stft(np.arange(n, dtype=float), A, hop)
    assert spec.frames.shape == ((n - A) // hop + 1, A // 2 + 1)
    assert np.all(spec.frames >= 0)


def test_smc_examples():
    assert smc([1, 2, 3], [1, 2, 3]) == 0.0
    assert smc([1, 2, 3], [2, 2, 4]) == pytest.approx(math.sqrt(2), abs=1e-12)
    with pytest.raises(InvalidInputError):
        smc([1, 2], [1, 2, 3])


def test_scm_examples():
    x = np.array([1.0, 4.0, 2.0, 7.0])
    assert scm(x, 2 * x) == pytest.approx(1.0, abs=1e-12)
    assert scm(x, -x + 10) == pytest.approx(-1.0, abs=1e-12)
    assert scm([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-12)
    with pytest.raises(DegenerateInputError):
        scm([1, 1, 1], [1, 2, 3])


def test_sgd_examples():
    x = np.array([0.5, 2.0, -1.0])
    assert sgd(x, x + 4.2) == pytest.approx(0.0, abs=1e-12)
    assert sgd([1, 2, 3], [1, 3, 5]) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert sgd(x, x) == 0.0
    with pytest.raises(InvalidInputError):
        sgd([1.0], [2.0])


def test_diss_examples():
    x = np.array([1.0, 4.0, 2.0, 7.0])
    assert diss(x, 2 * x) == pytest.approx(0.0, abs=1e-12)
    assert diss([1, 2, 3], [3, 1, 2]) == pytest.approx(2.25, abs=1e-12)
    assert diss(x, x) == pytest.approx(0.0, abs=1e-12)


def test_scdm_examples():
    a = np.array([[1.0, 2.0, 3.0]])
    assert scdm(a, a) == pytest.approx(0.0, abs=1e-12)
    # squared bin differences 4, 1, 1
    assert smc([1, 2, 3], [3, 1, 2]) == pytest.approx(math.sqrt(6), abs=1e-12)
    assert scdm([1, 2, 3], [3, 1, 2]) == pytest.approx(math.sqrt(6) + 2.25, abs=1e-9)
    seg = np.array([[1.0, 3.0, 2.0], [2.0, 5.0, 1.0]])
    assert scdm(seg, 2 * seg) == pytest.approx(math.sqrt(np.sum(seg.mean(0) ** 2)), abs=1e-12)


def test_scdm_constant_spectra_never_raise():
    assert scdm([2, 2, 2], [2, 2, 2]) == 0.0
    # one flat: SCM treated as 0, weight 1/2
    assert scdm([1, 1, 1], [1, 2, 3]) == pytest.approx(math.sqrt(5) + math.sqrt(2) / 2, abs=1e-12)


def test_random_pair_invariants():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(2, 10))
        a, b = rng.normal(size=n), rng.normal(size=n)
        r = scm(a, b)
        assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12
        s = scdm(a, b)
        assert s >= 0.0
        assert abs(s - scdm(b, a)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=12), st.floats(0.01, 100))
def test_diss_multiplicative_invariance(x, c):
    x = np.array(x)
    if np.ptp(x) < 1e-3:
        return
    assert diss(x, c * x) == pytest.approx(0.0, abs=1e-9 * max(1.0, c * np.abs(x).max()))


def _step():
    return (np.arange(100) >= 50).astype(float)


def test_profile_constant_path_is_zero():
    np.testing.assert_allclose(scdm_profile(np.full(100, 3.0), np.arange(100), 15), 0.0, atol=1e-10)


def test_profile_peaks_at_step():
    prof = scdm_profile(_step(), np.arange(100), 15)
    assert abs(int(np.argmax(prof)) - 50) <= 2


def test_profile_boundary_flags():
    valid = profile_valid(100, np.arange(100), 15, 15)
    assert not valid[14] and valid[15] and valid[85] and not valid[86]
    prof = scdm_profile(_step(), np.arange(100), 15)
    assert np.all(prof[~valid] == 0) and np.all(prof >= 0)


def test_profile_matches_brute_force_segments():
    rng = np.random.default_rng(1)
    x = np.cumsum(rng.normal(size=60))
    A = 6
    w = window_function("hann", A)
    prof = scdm_profile(x, [20, 33], A)
    for c, got in zip([20, 33], prof):
        left = np.array([_direct_mag(w * x[c - A:c])])
        right = np.array([_direct_mag(w * x[c:c + A])])
        assert got == pytest.approx(scdm(left, right), rel=1e-9)
    long = scdm_profile(x, [30], A, segment_length=10)[0]
    left = np.array([_direct_mag(w * x[s:s + A]) for s in range(20, 25)])
    right = np.array([_direct_mag(w * x[s:s + A]) for s in range(30, 35)])
    assert long == pytest.approx(scdm(left, right), rel=1e-9)


def test_profile_sinusoid_low_contrast():
    # period 5 divides A=15, so every window sees the same spectrum
    t = np.arange(100)
    prof = scdm_profile(np.sin(2 * np.pi * t / 5), t, 15)
    assert prof.max() <= 0.05 * scdm_profile(_step(), t, 15).max()


def test_su_identical_paths_zero():
    p = np.tile(np.sin(np.arange(50) / 3.0), (4, 1))
    np.testing.assert_allclose(spectral_uncertainty(p, np.arange(50), 8), 0.0, atol=1e-20)


def test_su_two_path_hand_value():
    t = np.arange(64)
    base = np.sin(2 * np.pi * t / 8)
    paths = np.vstack([base, 3 * base])
    A, c = 16, 30
    w = window_function("hann", A)
    f1 = _direct_mag(w * base[c - 8:c + 8])
    f3 = 3 * f1
    mean = (f1 + f3) / 2
    hand = np.mean(((f1 - mean) ** 2 + (f3 - mean) ** 2) / 2)
    su = spectral_uncertainty(paths, [c], A)[0]
    assert su > 0
    assert su == pytest.approx(hand, rel=1e-10)
    assert su == pytest.approx(np.mean(f1**2), rel=1e-10)


def test_su_order_invariant():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(6, 40))
    c = np.arange(40)
    np.testing.assert_allclose(spectral_uncertainty(p, c, 10), spectral_uncertainty(p[::-1], c, 10), rtol=1e-12)


def test_su_scales_quadratically():
    rng = np.random.default_rng(3)
    mean = np.sin(np.arange(80) / 4.0)
    noise = rng.normal(size=(20, 80))
    c = np.arange(20, 60)
    eps = 1e-4
    K = spectral_uncertainty(mean + eps * noise, c, 10).max() / eps**2
    assert spectral_uncertainty(mean + eps / 2 * noise, c, 10).max() <= K * (eps / 2) ** 2 * 1.05


def test_su_needs_two_paths():
    with pytest.raises(InvalidInputError):
        spectral_uncertainty(np.zeros((1, 20)), [10], 5)


def test_profile_runtime_on_default_grid():
    rng = np.random.default_rng(4)
    paths = rng.normal(size=(50, 1000))
    start = time.perf_counter()
    scdm_profile(paths.mean(0), np.arange(1000), 15)
    spectral_uncertainty(paths, np.arange(1000), 15)
    assert time.perf_counter() - start < 5.0
