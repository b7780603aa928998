import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from dynrec.phantom import PhantomSpec, phantom_frame, synth_coilmaps
from dynrec.sampling import (
    GOLDEN_ANGLE,
    BinPlan,
    MaskSpec,
    RadialAcquisition,
    RadialTrajectory,
    acquire_radial,
    bin_spokes,
    estimate_motion_signal,
    golden_angle_angles,
    make_vd_mask,
    read_trajectory_csv,
    sort_bin_to_kspace,
    write_trajectory_csv,
)
from dynrec.tensor import fft2c

# ---------------------------------------------------------------------- masks


def test_reference_mask_counts():
    spec = MaskSpec(192, 6, 4, 0.08, seed=1)
    m = make_vd_mask(spec)
    rows = m.mask[:, :, 0]
    assert np.all(rows.sum(axis=1) == 48)
    assert m.acs_rows[1] - m.acs_rows[0] == 15
    assert np.all(rows[:, m.acs_rows[0]:m.acs_rows[1]])
    # the mask is a row pattern: every column identical
    assert np.all(m.mask == m.mask[:, :, :1])


@given(
    st.integers(16, 128), st.integers(1, 6), st.floats(1.0, 12.0), st.floats(0.01, 0.2),
    st.floats(0, 6), st.booleans(), st.integers(0, 2**32),
)
def test_exact_row_budget(n_row, n_time, accel, acs, power, per_frame, seed):
    spec = MaskSpec(n_row, n_time, accel, acs, power, per_frame, seed)
    if spec.n_acs > spec.budget:
        with pytest.raises(ValueError):
            make_vd_mask(spec)
        return
    m = make_vd_mask(spec)
    assert np.all(m.mask[:, :, 0].sum(axis=1) == int(np.floor(n_row / accel)))
    assert np.all(m.mask[:, m.acs_rows[0]:m.acs_rows[1]])


def test_unit_acceleration_samples_everything():
    assert make_vd_mask(MaskSpec(32, 3, 1.0, 0.1)).mask.all()


def test_mask_determinism_and_sharing():
    spec = MaskSpec(64, 5, 4, 0.08, seed=11)
    assert np.array_equal(make_vd_mask(spec).mask, make_vd_mask(spec).mask)
    shared = make_vd_mask(MaskSpec(64, 5, 4, 0.08, per_frame=False, seed=11)).mask
    assert np.all(shared == shared[:1])
    varying = make_vd_mask(spec).mask
    assert not np.all(varying == varying[:1])


def test_density_favours_centre():
    spec = MaskSpec(128, 400, 4, 0.04, 3.0, seed=0)
    rows = make_vd_mask(spec).mask[:, :, 0].mean(axis=0)
    centre_band = rows[64 - 20:64 - 5].mean()
    edge_band = rows[:15].mean()
    assert centre_band > 3 * edge_band


def test_infeasible_mask_spec():
    with pytest.raises(ValueError, match="infeasible"):
        make_vd_mask(MaskSpec(64, 2, 8, 0.2))
    with pytest.raises(ValueError):
        make_vd_mask(MaskSpec(64, 2, 0.5, 0.1))


# -------------------------------------------------------------- golden angle


def test_golden_angle_values():
    a = golden_angle_angles(5)
    assert a[0] == 0
    assert abs(a[1] - 1.9416110387254666) < 1e-15
    assert abs(np.degrees(a[1]) - 111.24611797498107) < 1e-10
    steps = np.mod(np.diff(a), np.pi)
    np.testing.assert_allclose(steps, GOLDEN_ANGLE % np.pi, atol=1e-12)


def test_golden_angle_fibonacci_uniformity():
    a = np.sort(golden_angle_angles(233))
    gaps = np.diff(np.concatenate([a, [a[0] + np.pi]]))
    assert gaps.max() < 1.1 * np.pi / 233


def test_golden_angle_two_gap_structure():
    # three-gap theorem: a Fibonacci count leaves exactly two gap sizes in ratio phi
    phi = (1 + np.sqrt(5)) / 2
    a = np.sort(golden_angle_angles(233))
    gaps = np.diff(np.concatenate([a, [a[0] + np.pi]]))
    sizes = np.unique(np.round(gaps / gaps.min(), 9))
    np.testing.assert_allclose(sizes, [1.0, phi], atol=1e-8)
    ratio = gaps.max() / (np.pi / 233)
    assert abs(ratio - phi * (phi + 1) / (phi**2 + 1)) < 2e-3


# ---------------------------------------------------------- radial simulator


def test_centre_pixel_has_flat_spectrum():
    n = 16
    sens = synth_coilmaps(n, n, 3, 0)
    img = np.zeros((n, n))
    img[n // 2, n // 2] = 2.5
    traj = RadialTrajectory(7, 20)
    acq = acquire_radial([img] * 7, traj, sens)
    want = 2.5 * sens[:, n // 2, n // 2]
    np.testing.assert_allclose(acq.samples, np.broadcast_to(want[:, None, None], acq.samples.shape), atol=1e-12)


def test_zero_image_gives_zero_samples():
    acq = acquire_radial(lambda t: np.zeros((16, 16)), RadialTrajectory(5, 16), synth_coilmaps(16, 16, 2))
    assert not np.any(acq.samples)


def test_matches_oversampled_fft_interpolation():
    n, over = 48, 4
    img = phantom_frame(PhantomSpec(n, n, 1, "respiratory", seed=2), 0.0)
    pad = np.zeros((over * n, over * n))
    o = (over * n) // 2 - n // 2
    pad[o:o + n, o:o + n] = img
    big = fft2c(pad[None, None])[0, 0] * (over * n)  # unnormalised DFT on a 4x finer k grid
    traj = RadialTrajectory(9, n)
    acq = acquire_radial([img] * 9, traj, np.ones((1, n, n)))
    kx, ky = traj.kspace()
    rows = ky * over * n + over * n // 2
    cols = kx * over * n + over * n // 2
    coords = np.array([rows.ravel(), cols.ravel()])
    interp = ndimage.map_coordinates(big.real, coords, order=3) + 1j * ndimage.map_coordinates(big.imag, coords, order=3)
    ref = interp.reshape(acq.samples[0].shape)
    for s in range(traj.n_spokes):
        err = np.linalg.norm(acq.samples[0, s] - ref[s]) / np.linalg.norm(ref[s])
        assert err < 0.01


def test_ortho_scaling_matches_fft2c_on_grid():
    n = 16
    img = phantom_frame(PhantomSpec(n, n, 1, seed=0), 0.0)
    traj = RadialTrajectory(2, n, angles=np.array([0.0, np.pi / 2]))
    acq = acquire_radial([img] * 2, traj, np.ones((1, n, n)), ortho=True)
    k = fft2c(img[None, None])[0, 0]
    np.testing.assert_allclose(acq.samples[0, 0], k[n // 2, :], atol=1e-12)
    np.testing.assert_allclose(acq.samples[0, 1], k[:, n // 2], atol=1e-12)


def test_radial_linearity_and_determinism(rng):
    n = 16
    sens = synth_coilmaps(n, n, 2, 1)
    a, b = rng.standard_normal((n, n)), rng.standard_normal((n, n))
    traj = RadialTrajectory(4, n)
    sa = acquire_radial([a] * 4, traj, sens).samples
    sb = acquire_radial([b] * 4, traj, sens).samples
    sab = acquire_radial([2 * a - 3 * b] * 4, traj, sens).samples
    np.testing.assert_allclose(sab, 2 * sa - 3 * sb, atol=1e-10)
    n1 = acquire_radial([a] * 4, traj, sens, noise_sd=0.1, seed=3).samples
    n2 = acquire_radial([a] * 4, traj, sens, noise_sd=0.1, seed=3).samples
    assert np.array_equal(n1, n2)


def test_radial_length_mismatch():
    with pytest.raises(ValueError):
        acquire_radial([np.zeros((8, 8))] * 3, RadialTrajectory(4, 8), np.ones((1, 8, 8)))
    with pytest.raises(ValueError):
        RadialTrajectory(3, 8, timestamps=np.array([0.0, 2.0, 1.0]))


# -------------------------------------------------------------- motion signal


def _acq_from(values, n=16):
    """Acquisition of a centred Gaussian blob scaled by ``values[i]`` per spoke."""
    yy, xx = np.mgrid[:n, :n] - n // 2
    blob = np.exp(-(yy**2 + xx**2) / 8.0)
    traj = RadialTrajectory(len(values), n)
    return acquire_radial([v * blob for v in values], traj, synth_coilmaps(n, n, 2, 0))


def test_static_object_constant_signal():
    sig = estimate_motion_signal(_acq_from(np.ones(60)), 5).values
    assert np.var(sig) < 1e-10


def test_signal_peak_at_planted_period():
    n_spokes, period = 400, 40.0
    vals = 1.0 + 0.3 * np.sin(2 * np.pi * np.arange(n_spokes) / period)
    sig = estimate_motion_signal(_acq_from(vals), 5).values
    spec = np.abs(np.fft.rfft(sig - sig.mean()))
    assert np.argmax(spec) == round(n_spokes / period)


def test_unsmoothed_signal_is_centre_magnitude():
    acq = _acq_from(np.linspace(1, 2, 30))
    raw = np.sqrt(np.sum(np.abs(acq.samples[:, :, acq.trajectory.n_readout // 2]) ** 2, axis=0))
    np.testing.assert_array_equal(estimate_motion_signal(acq, 1).values, raw)


def test_moving_average_oracle():
    acq = _acq_from(np.random.default_rng(0).uniform(1, 2, 25))
    raw = estimate_motion_signal(acq, 1).values
    sm = estimate_motion_signal(acq, 5).values
    for i in range(25):
        lo, hi = max(0, i - 2), min(25, i + 3)
        assert abs(sm[i] - raw[lo:hi].mean()) < 1e-12


def test_smoothing_validation():
    acq = _acq_from(np.ones(5))
    with pytest.raises(ValueError):
        estimate_motion_signal(acq, 4)
    with pytest.raises(ValueError):
        estimate_motion_signal(acq, 7)


# ------------------------------------------------------------------- binning


def test_constant_signal_single_state():
    plan = bin_spokes(np.ones(50), 1, 12)
    assert plan.bins[0][1] == list(range(12))


def test_fixed_mode_matches_quantile_oracle():
    n = 600
    saw = 2.0 * ((np.arange(n) / 97.0) % 1.0) - 1.0
    plan = bin_spokes(saw, 6, 100, "fixed")
    # brute force: rank spokes by amplitude (ties by index) and cut into 6 groups
    order = sorted(range(n), key=lambda i: (saw[i], i))
    want = [sorted(order[k * 100:(k + 1) * 100]) for k in range(6)]
    got = [spokes for _, spokes in plan.bins]
    assert got == want
    flat = [s for b in got for s in b]
    assert len(flat) == len(set(flat)) == n


def test_sliding_283_spoke_configuration():
    sig = np.sin(2 * np.pi * np.arange(1700) / 200.0) + 0.01 * np.random.default_rng(0).standard_normal(1700)
    plan = bin_spokes(sig, 6, 283, "sliding")
    assert len(plan.bins) == 6
    assert all(len(s) == 283 for _, s in plan.bins)
    assert all(len(set(s)) == 283 for _, s in plan.bins)
    overlaps = [len(set(a[1]) & set(b[1])) for a, b in zip(plan.bins, plan.bins[1:])]
    assert any(o > 0 for o in overlaps)


@given(st.integers(0, 2**32), st.integers(1, 8), st.integers(1, 60), st.sampled_from(["fixed", "sliding"]))
def test_binning_properties(seed, n_states, window, mode):
    sig = np.random.default_rng(seed).standard_normal(300)
    if mode == "fixed" and n_states * window > 300:
        with pytest.raises(ValueError):
            bin_spokes(sig, n_states, window, mode)
        return
    plan = bin_spokes(sig, n_states, window, mode)
    assert len(plan.bins) == n_states
    for anchor, spokes in plan.bins:
        assert len(spokes) == window == len(set(spokes))
        assert spokes == sorted(spokes)
    if mode == "fixed":
        flat = [s for _, b in plan.bins for s in b]
        assert len(flat) == len(set(flat))


def test_binning_errors():
    with pytest.raises(ValueError):
        bin_spokes(np.array([]), 1, 1)
    with pytest.raises(ValueError):
        bin_spokes(np.ones(10), 2, 11)
    with pytest.raises(ValueError):
        bin_spokes(np.ones(10), 2, 3, "phase")


def test_binplan_text_roundtrip(tmp_path):
    plan = bin_spokes(np.sin(np.arange(90) / 5.0), 3, 20)
    plan.save(tmp_path / "bins.txt")
    first = (tmp_path / "bins.txt").read_text().splitlines()[0]
    assert first.startswith(f"{plan.bins[0][0]}: ")
    back = BinPlan.load(tmp_path / "bins.txt")
    assert back.bins == plan.bins and back.window_size == 20


def test_sort_bin_to_kspace():
    acq = _acq_from(np.linspace(1, 2, 283))
    same = sort_bin_to_kspace(acq, range(283))
    assert np.array_equal(same.samples, acq.samples)
    pick = np.sort(np.random.default_rng(4).choice(283, 70, replace=False))
    sub = sort_bin_to_kspace(acq, pick)
    assert sub.n_spokes == 70
    np.testing.assert_array_equal(sub.trajectory.angles, acq.trajectory.angles[pick])
    with pytest.raises(ValueError):
        sort_bin_to_kspace(acq, [])
    with pytest.raises(IndexError):
        sort_bin_to_kspace(acq, [283])


def test_trajectory_csv_roundtrip(tmp_path):
    traj = RadialTrajectory(13, 32, timestamps=np.arange(13) * 0.004)
    write_trajectory_csv(traj, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "index,angle_rad,timestamp_s"
    back = read_trajectory_csv(tmp_path / "t.csv", 32)
    np.testing.assert_array_equal(back.angles, traj.angles)
    np.testing.assert_array_equal(back.timestamps, traj.timestamps)


def test_acquisition_shape_check():
    with pytest.raises(ValueError):
        RadialAcquisition(RadialTrajectory(3, 8), np.zeros((2, 3, 7)))
