import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from headimpact.errors import InvalidStateError, ParseError
from headimpact.geometry import ImpactSetup
from headimpact.kinematics import (
    CHANNEL_LAYOUT,
    N_CHANNELS,
    N_SAMPLES,
    ChannelStats,
    FeatureTensor,
    Frame,
    KinematicSeries,
    angular_acceleration,
    build_feature_batch,
    build_features,
    filter_coefficients,
    filter_series,
    from_spherical_channels,
    integrate_orientation,
    mirror,
    mirror_series,
    normalize,
    quat_exp,
    quat_log,
    quat_mul,
    quat_conj,
    quat_rotate,
    quat_to_matrix,
    read_features_csv,
    read_kinematics_csv,
    to_global,
    to_spherical_channels,
    write_features_csv,
    write_kinematics_csv,
    zero_phase_lowpass,
)

from conftest import random_series

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
signals = arrays(np.float64, N_SAMPLES, elements=finite)


def analytic_gain(f, fc=300.0, fs=1000.0):
    # forward-backward 2nd-order Butterworth: |H|^2
    ratio = np.tan(np.pi * f / fs) / np.tan(np.pi * fc / fs)
    return 1.0 / (1.0 + ratio**4)


# -- series -----------------------------------------------------------------

def test_series_validates_shape_and_finiteness():
    with pytest.raises(ValueError):
        KinematicSeries(np.zeros((3, 144)), np.zeros((3, 144)))
    bad = np.zeros((3, N_SAMPLES))
    bad[0, 3] = np.nan
    with pytest.raises(ValueError):
        KinematicSeries(bad, np.zeros((3, N_SAMPLES)))
    with pytest.raises(ValueError):
        KinematicSeries(np.zeros((3, N_SAMPLES)), np.zeros((3, N_SAMPLES)), dt=0.002)


def test_series_is_immutable():
    s = KinematicSeries.zeros()
    with pytest.raises(ValueError):
        s.lin_acc[0, 0] = 1.0


# -- filter -----------------------------------------------------------------

def test_filter_coefficients_documented_values():
    b, a = filter_coefficients()
    np.testing.assert_allclose(b, [0.391336, 0.782672, 0.391336], atol=1e-6)
    np.testing.assert_allclose(a, [1.0, 0.369527, 0.195816], atol=1e-6)


def test_filter_rejects_bad_cutoff_and_short_input():
    with pytest.raises(ValueError):
        filter_coefficients(600.0)
    with pytest.raises(ValueError):
        zero_phase_lowpass(np.ones(5))


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_dc_gain_is_unity(c):
    out = zero_phase_lowpass(np.full(N_SAMPLES, c))
    np.testing.assert_allclose(out, c, atol=1e-9 * max(1.0, abs(c)))


@given(st.integers(10, 134), st.integers(2, 10))
def test_symmetric_pulse_peak_preserved(k, half):
    t = np.arange(N_SAMPLES)
    pulse = np.clip(1.0 - np.abs(t - k) / half, 0.0, None)
    assert np.argmax(zero_phase_lowpass(pulse)) == k


def test_ten_hz_sine_matches_analytic_response():
    t = np.arange(N_SAMPLES) * 1e-3
    out = zero_phase_lowpass(np.sin(2 * np.pi * 10 * t))
    # amplitude on interior samples, away from the edge transients
    inner = slice(20, -20)
    amp = np.max(np.abs(out[inner])) / np.max(np.abs(np.sin(2 * np.pi * 10 * t[inner])))
    assert abs(amp - analytic_gain(10.0)) < 0.01 * analytic_gain(10.0)


@pytest.mark.parametrize("f", [50.0, 150.0, 250.0])
def test_steady_state_gain_matches_analytic_response(f):
    # long record so edge effects vanish in the middle
    t = np.arange(4000) * 1e-3
    x = np.cos(2 * np.pi * f * t)
    out = zero_phase_lowpass(x)[1000:3000]
    ref = analytic_gain(f) * x[1000:3000]
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_analytic_gain_agrees_with_freqz():
    b, a = filter_coefficients()
    f = np.array([10.0, 100.0, 300.0, 450.0])
    _, h = signal.freqz(b, a, worN=f, fs=1000.0)
    np.testing.assert_allclose(np.abs(h) ** 2, analytic_gain(f), rtol=1e-9)


@given(signals)
def test_filter_commutes_with_time_reversal(x):
    np.testing.assert_allclose(zero_phase_lowpass(x[::-1]), zero_phase_lowpass(x)[::-1],
                               atol=1e-9 * max(1.0, np.abs(x).max()))


def test_filter_series_keeps_frame(rng):
    s = random_series(rng)
    f = filter_series(s)
    assert f.frame is s.frame and f.lin_acc.shape == (3, N_SAMPLES)


# -- angular acceleration -----------------------------------------------------

def test_constant_angular_velocity_has_zero_acceleration():
    s = KinematicSeries(np.zeros((3, N_SAMPLES)), np.ones((3, N_SAMPLES)) * 3.0)
    assert np.all(angular_acceleration(s) == 0.0)


def test_ramp_gives_constant_acceleration():
    t = np.arange(N_SAMPLES) * 1e-3
    w = np.zeros((3, N_SAMPLES))
    w[0] = 5 * t
    acc = angular_acceleration(KinematicSeries(np.zeros((3, N_SAMPLES)), w))
    np.testing.assert_allclose(acc[0, 1:-1], 5.0, rtol=1e-9)


def test_sine_derivative_within_truncation_bound():
    t = np.arange(N_SAMPLES) * 1e-3
    om = 2 * np.pi * 20
    w = np.zeros((3, N_SAMPLES))
    w[0] = np.sin(om * t)
    acc = angular_acceleration(KinematicSeries(np.zeros((3, N_SAMPLES)), w))[0]
    ref = om * np.cos(om * t)
    h = 1e-3
    # central: h^2/6 max|f'''|; one-sided ends: h/2 max|f''|
    assert np.max(np.abs(acc[1:-1] - ref[1:-1])) <= h**2 / 6 * om**3
    assert np.max(np.abs(acc[[0, -1]] - ref[[0, -1]])) <= h / 2 * om**2


# -- quaternions ---------------------------------------------------------------

def test_zero_rate_gives_identity():
    q = integrate_orientation(np.zeros((3, N_SAMPLES)))
    np.testing.assert_array_equal(q, np.tile([1.0, 0, 0, 0], (N_SAMPLES, 1)))


def test_constant_rate_matches_closed_form():
    n = 1001
    w = np.zeros((3, n))
    w[2] = np.pi
    q = integrate_orientation(w, 1e-3)
    target = quat_exp(np.array([0.0, 0.0, np.pi]))
    err = quat_log(quat_mul(quat_conj(target), q[-1]))
    assert np.linalg.norm(err) < 1e-4


@given(arrays(np.float64, (3, 40), elements=st.floats(-100, 100)))
def test_orientation_stays_unit(w):
    q = integrate_orientation(w)
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-9)


@given(arrays(np.float64, 3, elements=st.floats(-3, 3)), arrays(np.float64, 3, elements=st.floats(-10, 10)))
def test_quat_rotate_matches_matrix(rv, v):
    q = quat_exp(rv)
    np.testing.assert_allclose(quat_rotate(q, v), quat_to_matrix(q) @ v, atol=1e-9)


def test_to_global_identity_retags():
    s = random_series(np.random.default_rng(1))
    g = to_global(s, np.tile([1.0, 0, 0, 0], (N_SAMPLES, 1)))
    assert g.frame is Frame.GLOBAL
    np.testing.assert_array_equal(g.lin_acc, s.lin_acc)


def test_to_global_yaw_rotates_vector():
    lin = np.zeros((3, N_SAMPLES))
    lin[0] = 1.0
    q = np.tile(quat_exp(np.array([0, 0, np.pi / 2])), (N_SAMPLES, 1))
    g = to_global(KinematicSeries(lin, np.zeros((3, N_SAMPLES))), q)
    np.testing.assert_allclose(g.lin_acc[:, 0], [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(g.lin_acc, axis=0), 1.0, atol=1e-12)


def test_to_global_preserves_norms_and_rejects_global(rng):
    s = random_series(rng)
    g = to_global(s, integrate_orientation(s.ang_vel))
    for a, b in ((s.lin_acc, g.lin_acc), (s.ang_vel, g.ang_vel)):
        np.testing.assert_allclose(np.linalg.norm(a, axis=0), np.linalg.norm(b, axis=0), atol=1e-12 * 1e3)
    with pytest.raises(InvalidStateError):
        to_global(g, integrate_orientation(s.ang_vel))


# -- spherical channels -------------------------------------------------------

def test_spherical_axis_cases():
    out = to_spherical_channels(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(out[:, 0], [1, 0, 0])
    np.testing.assert_allclose(out[:, 1], [1, 0, np.pi / 2])


@given(arrays(np.float64, (3, 8), elements=st.floats(-1e3, 1e3)))
def test_spherical_roundtrip(v):
    keep = np.linalg.norm(v, axis=0) > 1e-6
    back = from_spherical_channels(to_spherical_channels(v))
    np.testing.assert_allclose(back[:, keep], v[:, keep], atol=1e-10 * max(1.0, np.abs(v).max()))


# -- features -------------------------------------------------------------------

def test_layout_has_48_unique_channels():
    assert N_CHANNELS == 48 == len(set(CHANNEL_LAYOUT))


def test_zero_series_zero_features():
    assert np.all(build_features(KinematicSeries.zeros()).data == 0.0)


def test_feature_invariants(rng):
    s = random_series(rng)
    f = build_features(s)
    assert f.data.shape == (N_SAMPLES, 48)
    idx = {name: i for i, name in enumerate(CHANNEL_LAYOUT)}
    local = f.data[:, idx["local.lin_acc.mag"]]
    glob = f.data[:, idx["global.lin_acc.mag"]]
    np.testing.assert_allclose(local, glob, atol=1e-9)
    mags = [i for n, i in idx.items() if n.endswith(".mag") or n.endswith(".rho")]
    assert np.all(f.data[:, mags] >= 0)
    np.testing.assert_array_equal(build_features(s).data, f.data)


def test_no_rotation_local_equals_global(rng):
    s = random_series(rng)
    s = KinematicSeries(s.lin_acc, np.zeros((3, N_SAMPLES)))
    f = build_features(s)
    idx = {name: i for i, name in enumerate(CHANNEL_LAYOUT)}
    for q in ("lin_acc", "ang_vel", "ang_acc"):
        for c in ("x", "y", "z", "mag"):
            np.testing.assert_array_equal(f.data[:, idx[f"local.{q}.{c}"]], f.data[:, idx[f"global.{q}.{c}"]])


def test_feature_batch_stacks(rng):
    batch = build_feature_batch([random_series(rng), random_series(rng)])
    assert batch.shape == (2, N_SAMPLES, 48)


# -- mirror ------------------------------------------------------------------

@given(st.integers(0, 2**32 - 1))
def test_mirror_is_involution_and_norm_preserving(seed):
    s = random_series(np.random.default_rng(seed))
    m = mirror_series(s)
    np.testing.assert_array_equal(mirror_series(m).lin_acc, s.lin_acc)
    np.testing.assert_array_equal(mirror_series(m).ang_vel, s.ang_vel)
    np.testing.assert_array_equal(np.linalg.norm(m.lin_acc, axis=0), np.linalg.norm(s.lin_acc, axis=0))
    np.testing.assert_array_equal(np.linalg.norm(m.ang_vel, axis=0), np.linalg.norm(s.ang_vel, axis=0))


def test_mirror_fixed_point():
    lin = np.zeros((3, N_SAMPLES))
    lin[0], lin[2] = 1.0, 2.0
    ang = np.zeros((3, N_SAMPLES))
    ang[1] = 3.0
    s = KinematicSeries(lin, ang)
    setup = ImpactSetup(0.0, 10.0, 0.0, 5.0, 5.0)
    forces = (np.ones(N_SAMPLES), np.ones(N_SAMPLES))
    ms, msetup, mforces = mirror(s, setup, forces)
    np.testing.assert_array_equal(ms.lin_acc, s.lin_acc)
    np.testing.assert_array_equal(ms.ang_vel, s.ang_vel)
    assert msetup == setup and mforces is forces


def test_mirror_signs():
    s = random_series(np.random.default_rng(3))
    m = mirror_series(s)
    np.testing.assert_array_equal(m.lin_acc[1], -s.lin_acc[1])
    np.testing.assert_array_equal(m.ang_vel[[0, 2]], -s.ang_vel[[0, 2]])
    assert ImpactSetup(30, 5, 10, 0, 4).mirrored() == ImpactSetup(-30, 5, -10, 0, 4)


# -- normalization ---------------------------------------------------------

def test_normalize_training_set_moments(rng):
    data = rng.normal(3.0, 2.0, size=(20, N_SAMPLES, 48))
    stats = ChannelStats.fit(data)
    z = normalize(data, stats).reshape(-1, 48)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-6)


def test_normalize_means_and_constant_channel(rng):
    data = rng.normal(size=(5, N_SAMPLES, 48))
    data[..., 7] = 4.0
    stats = ChannelStats.fit(data)
    assert np.all(normalize(np.broadcast_to(stats.mean, (N_SAMPLES, 48)), stats) == 0.0)
    assert np.all(normalize(data, stats)[..., 7] == 0.0)
    with pytest.raises(ValueError):
        normalize(np.zeros((N_SAMPLES, 47)), stats)
    assert ChannelStats.from_dict(stats.to_dict()).mean.tolist() == stats.mean.tolist()


# -- CSV -------------------------------------------------------------------

def test_kinematics_csv_roundtrip(tmp_path, rng):
    s = random_series(rng)
    write_kinematics_csv(s, tmp_path / "k.csv")
    back = read_kinematics_csv(tmp_path / "k.csv")
    np.testing.assert_array_equal(back.lin_acc, s.lin_acc)
    np.testing.assert_array_equal(back.ang_vel, s.ang_vel)


def test_kinematics_csv_errors(tmp_path, rng):
    write_kinematics_csv(random_series(rng), tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ParseError, match="145"):
        read_kinematics_csv(tmp_path / "short.csv")
    lines[5] = lines[5].replace(",", ",abc,", 1)
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="bad.csv"):
        read_kinematics_csv(tmp_path / "bad.csv")


def test_features_csv_roundtrip(tmp_path, rng):
    f = build_features(random_series(rng))
    write_features_csv(f, tmp_path / "f.csv")
    back = read_features_csv(tmp_path / "f.csv")
    assert isinstance(back, FeatureTensor)
    np.testing.assert_array_equal(back.data, f.data)
    assert tuple(back.channel_layout) == CHANNEL_LAYOUT
