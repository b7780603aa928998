import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from dynrec.metrics import PSNR_CAP, evaluate, nmse, psnr, ssim, tenengrad
from dynrec.phantom import PhantomSpec, dynamic_phantom


@pytest.fixture(scope="module")
def frame():
    return np.abs(dynamic_phantom(PhantomSpec(64, 64, 1, "cardiac", seed=0))[0, 0])


def test_psnr_examples():
    ref = np.ones((16, 16))
    assert psnr(ref, ref) == PSNR_CAP
    x = ref.copy()
    x[3, 5] = 2.0
    assert psnr(x, ref) == pytest.approx(10 * np.log10(256), rel=1e-12)
    assert psnr(np.zeros_like(ref), ref) == pytest.approx(0.0, abs=1e-12)


def test_nmse_examples(rng):
    ref = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    assert nmse(ref, ref) == 0
    assert nmse(np.zeros_like(ref), ref) == 1
    assert nmse(2 * ref, ref) == pytest.approx(1.0, rel=1e-14)


def test_reference_and_shape_errors():
    with pytest.raises(ValueError):
        nmse(np.ones((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        psnr(np.ones((4, 4)), np.ones((4, 5)))
    with pytest.raises(ValueError):
        ssim(np.ones((5, 5)), np.ones((5, 5)))
    with pytest.raises(ValueError):
        tenengrad(np.ones((2, 8)))


@given(st.integers(0, 2**32 - 1), st.floats(-9, 0))
def test_psnr_cap_iff_tiny_nmse(seed, log_scale):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0.1, 1, (12, 12))
    x = ref + 10**log_scale * rng.standard_normal(ref.shape)
    tiny = nmse(np.abs(x), ref) < 1e-12
    assert (psnr(x, ref) == PSNR_CAP) == tiny


def test_ssim_identity(frame, rng):
    assert ssim(frame, frame) == 1.0
    noisy = rng.standard_normal((20, 20))
    assert ssim(noisy, noisy) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_shift_closed_form():
    ref = np.ones((16, 16))
    c1 = (0.01 * 1.0) ** 2
    x = ref + 3.0
    # contrast-structure term is 1 on flat frames; only luminance remains
    want = (2 * 4.0 * 1.0 + c1) / (16.0 + 1.0 + c1)
    assert ssim(x, ref) == pytest.approx(want, rel=1e-12)
    assert ssim(x, ref) < 0.5
    assert ssim(ref + 1.0, ref) == pytest.approx((4 + c1) / (5 + c1), rel=1e-12)


def test_ssim_zero_image_is_poor(frame):
    assert 0 <= ssim(np.zeros_like(frame), frame) < 0.1


def ssim_bruteforce(x, ref, win=7):
    x, ref = np.abs(x), np.abs(ref)
    L = ref.max()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h = win // 2
    vals = []
    for i in range(h, x.shape[0] - h):
        for j in range(h, x.shape[1] - h):
            a = x[i - h:i + h + 1, j - h:j + h + 1]
            b = ref[i - h:i + h + 1, j - h:j + h + 1]
            ma, mb = a.mean(), b.mean()
            cov = ((a - ma) * (b - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (a.var() + b.var() + c2)))
    return np.mean(vals)


def test_ssim_matches_bruteforce(frame, rng):
    sub = frame[16:40, 20:44]
    for x in (np.zeros_like(sub), sub + 0.1 * rng.standard_normal(sub.shape), 0.5 * sub):
        assert ssim(x, sub) == pytest.approx(ssim_bruteforce(x, sub), rel=1e-9)


def test_ssim_window_symmetries(frame, rng):
    x = frame + 0.05 * rng.standard_normal(frame.shape)
    base = ssim(x, frame)
    for op in (np.fliplr, np.flipud, np.transpose, lambda a: np.rot90(a, 2)):
        assert ssim(op(x), op(frame)) == pytest.approx(base, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_pointwise_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0, 1, (10, 10))
    x = ref + 0.1 * rng.standard_normal(ref.shape)
    perm = rng.permutation(100)
    px, pr = x.ravel()[perm].reshape(10, 10), ref.ravel()[perm].reshape(10, 10)
    assert psnr(px, pr) == pytest.approx(psnr(x, ref), rel=1e-12)
    assert nmse(px, pr) == pytest.approx(nmse(x, ref), rel=1e-12)


def test_tenengrad_constant_is_zero():
    assert tenengrad(np.full((9, 9), 3.0)) == 0


def test_tenengrad_step_edge():
    n = 10
    x = np.zeros((n, n))
    x[:, 5:] = 1.0
    # Sobel gives |Gx| = 1 + 2 + 1 = 4 on the two columns beside the edge
    gx = ndimage.sobel(x, axis=1, mode="nearest")
    assert np.all(np.abs(gx[1:-1, 4:6]) == 4)
    assert tenengrad(x) == pytest.approx(16 * 2 / (n - 2))
    assert tenengrad(5 * x) == pytest.approx(tenengrad(x))


def test_tenengrad_drops_with_blur(frame):
    assert tenengrad(ndimage.gaussian_filter(frame, 2.0)) < tenengrad(frame)


def test_evaluate_report(tmp_path, rng):
    ref = np.abs(dynamic_phantom(PhantomSpec(32, 32, 5, seed=2)))
    x = ref + 0.02 * rng.standard_normal(ref.shape)
    rep = evaluate(x, ref)
    for arr in (rep.psnr, rep.ssim, rep.nmse, rep.tenengrad):
        assert len(arr) == 5
    assert rep.psnr[2] == pytest.approx(psnr(x[0, 2], ref[0, 2]))
    s = rep.summary()
    assert s["ssim"] == pytest.approx((rep.ssim.mean(), rep.ssim.std()))
    rep.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "frame,psnr,ssim,nmse,tenengrad"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1", "2", "3", "4", "mean", "std"]
    with pytest.raises(ValueError):
        evaluate(np.zeros((2, 5, 32, 32)), np.zeros((2, 5, 32, 32)))
