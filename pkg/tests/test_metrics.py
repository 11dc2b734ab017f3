import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikit.imaging import BasisKind, BasisSet
from spikit.metrics import (
    EvalReport,
    TimingError,
    gaussian_window,
    mse,
    omega_score,
    psnr,
    ssim,
    time_reconstruction,
    write_reports,
)
from spikit.patterns import random_basis


def naive_ssim(a, b):
    """Straight double loop over every fully-contained window."""
    w2 = np.outer(gaussian_window(), gaussian_window())
    k = w2.shape[0]
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            pa, pb = a[i : i + k, j : j + k], b[i : i + k, j : j + k]
            ma, mb = (w2 * pa).sum(), (w2 * pb).sum()
            va = (w2 * (pa - ma) ** 2).sum()
            vb = (w2 * (pb - mb) ** 2).sum()
            cv = (w2 * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.random((20, 23 - 3))
        b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-9)


def test_ssim_identity():
    x = np.random.default_rng(1).random((32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_of_negative_is_negative():
    rng = np.random.default_rng(2)
    x = (rng.random((32, 32)) > 0.5).astype(float)
    assert ssim(x, 1 - x) < 0


def test_ssim_constant_windows_scalar_formula():
    # on constant images the contrast/structure term is exactly one
    a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.7)
    c1 = 0.01**2
    assert ssim(a, b) == pytest.approx((2 * 0.2 * 0.7 + c1) / (0.2**2 + 0.7**2 + c1), rel=1e-12)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31), noise=st.floats(0, 1))
def test_ssim_symmetric_and_bounded(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    b = np.clip(a + noise * rng.standard_normal(a.shape), 0, 1)
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-14)
    assert -1 <= s <= 1


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))


def test_mse_psnr():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert mse(a, b) == pytest.approx(0.01)
    assert psnr(a, b) == pytest.approx(20.0)
    assert psnr(a, a) == float("inf")


# --- orthogonality score ------------------------------------------------------------


def test_one_hot_rows_score_zero():
    assert omega_score(BasisSet(np.eye(16)[:5], 4, BasisKind.LEARNED, (0, 1))) == 0.0


def test_random_binary_basis_score():
    # 1/sqrt(N^2) scale: mean |cos| between random sign vectors of length 4096
    score = omega_score(random_basis(256, 64, BasisKind.RANDOM_BINARY, seed=0))
    expected = (255 / 256) * np.sqrt(2 / np.pi) / 64
    assert score == pytest.approx(expected, rel=0.03)


@settings(max_examples=25)
@given(seed=st.integers(0, 2**31), exps=st.lists(st.integers(-6, 6), min_size=6, max_size=6))
def test_omega_invariant_to_rescaling_and_order(seed, exps):
    basis = random_basis(6, 5, BasisKind.RANDOM_NONBINARY, seed=seed)
    ref = omega_score(basis)
    scaled = basis.patterns * (2.0 ** np.array(exps))[:, None]
    perm = np.random.default_rng(seed).permutation(6)
    other = BasisSet(scaled[perm], 5, BasisKind.LEARNED, (scaled.min(), scaled.max()))
    assert omega_score(other) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_omega_rejects_zero_pattern():
    W = np.ones((2, 4))
    W[1] = 0
    with pytest.raises(ValueError):
        omega_score(BasisSet(W, 2, BasisKind.LEARNED, (0, 1)))


# --- timing and reports ---------------------------------------------------------------


def test_timing_no_op_is_finite_positive():
    summary = time_reconstruction(lambda _: None, [0, 1], repeats=5)
    assert len(summary.samples_ms) == 10
    assert 0 < summary.median_ms < float("inf") and summary.iqr_ms >= 0
    assert "numpy" in summary.environment


def test_timing_requires_five_repeats():
    with pytest.raises(ValueError):
        time_reconstruction(lambda _: None, [0], repeats=4)


def test_timing_failure_keeps_partial_samples():
    calls = []

    def flaky(_):
        calls.append(1)
        if len(calls) == 4:
            raise RuntimeError("boom")

    with pytest.raises(TimingError) as info:
        time_reconstruction(flaky, [0], repeats=5, warmup=1)
    assert len(info.value.partial) == 2


def test_report_validates_and_serializes(tmp_path):
    with pytest.raises(ValueError):
        EvalReport("ft", 0.5, 0.0, [1.5])
    rep = EvalReport("ft", 0.0625, 5e-4, [0.5, 0.7], omega=0.1, t_median_ms=2.0, t_iqr_ms=0.1)
    assert rep.ssim_mean == pytest.approx(0.6) and rep.ssim_std == pytest.approx(0.1)
    write_reports(tmp_path / "r.csv", [rep, EvalReport("tv-b", 1, 0)])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "method,alpha,eta,ssim_mean,ssim_std,omega,t_median_ms,t_iqr_ms"
    assert lines[1] == "ft,0.0625,0.0005,0.6,0.1,0.1,2,0.1"
    assert lines[2].endswith(",,")
