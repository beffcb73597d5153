import numpy as np
import pytest
from scipy.stats import ks_2samp

from disac.rcs import (RcsProfile, RcsStatistics, aspect_angle, bistatic_scale,
                       emit_polar_pattern, link_statistics, network_statistics, sample_rcs)
from disac.scenario import RcsModelSpec

SW = RcsModelSpec("swerling1")
CHI = RcsModelSpec("chi_square", 4.0)


def test_bistatic_scale_examples():
    assert bistatic_scale(0.3, 0.3) == pytest.approx(1.0)
    assert bistatic_scale(0.0, np.pi) == pytest.approx(0.0, abs=1e-15)
    assert bistatic_scale(0.0, np.radians(60)) == pytest.approx(0.86603, abs=1e-5)
    # wrap-around: 350 deg apart is 10 deg apart
    assert bistatic_scale(np.radians(175), np.radians(-175)) == pytest.approx(np.cos(np.radians(5)))


def test_aspect_angle_midpoint_and_heading():
    assert aspect_angle(0.2, 0.4) == pytest.approx(0.3)
    assert aspect_angle(0.2, 0.4, heading=0.1) == pytest.approx(0.2)


def test_variance_laws():
    flat_sw = RcsProfile.flat(0.5, SW)
    _, v = link_statistics(flat_sw, 0.0, 0.0)
    assert v == pytest.approx(0.25)
    _, v = link_statistics(RcsProfile.flat(1.0, CHI), 0.0, 0.0)
    assert v == pytest.approx(0.25)
    mu, _ = link_statistics(RcsProfile.flat(1.0, CHI), 0.7, 0.7)
    assert mu == pytest.approx(1.0)


def test_network_statistics_shape():
    st = network_statistics(RcsProfile.default(), np.array([0.1, 1.2, -2.0]))
    assert st.mean.shape == (3, 3)
    assert np.allclose(st.mean, st.mean.T)


def test_zero_mean_draws(rng):
    st = RcsStatistics(np.zeros((2, 2)), np.zeros((2, 2)))
    assert np.all(sample_rcs(st, CHI, rng, 10) == 0)


def test_sample_moments(rng):
    st = RcsStatistics(np.ones((1, 1)), np.ones((1, 1)))
    b = sample_rcs(st, SW, rng, 100_000).ravel()
    assert 0.99 <= b.mean() <= 1.01 and 0.97 <= b.var() <= 1.03
    b = sample_rcs(st, CHI, rng, 100_000).ravel()
    assert 0.24 <= b.var() <= 0.26


def test_sample_count_validation(rng):
    with pytest.raises(ValueError):
        sample_rcs(RcsStatistics(np.ones((1, 1)), np.ones((1, 1))), SW, rng, 0)


def test_profile_interpolation_is_periodic():
    p = RcsProfile(np.radians([-90, 0, 90, 180]), np.array([1.0, 2.0, 3.0, 4.0]), CHI)
    assert p.mean_at(np.radians(45)) == pytest.approx(2.5)
    assert p.mean_at(np.radians(-135)) == pytest.approx(2.5)


def test_profile_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        RcsProfile(np.array([]), np.array([]), CHI)
    with pytest.raises(ValueError):
        RcsProfile(np.array([0.0]), np.array([-1.0]), CHI)


def test_polar_pattern(rng):
    prof = RcsProfile.default()
    ang, d, mu = emit_polar_pattern(prof, rng, 1.0, RcsModelSpec("chi_square", 1e6))
    assert np.max(np.abs(d - mu) / mu) < 0.01
    with pytest.raises(ValueError):
        emit_polar_pattern(prof, rng, 0.5)


def test_swerling_pattern_spreads_more(rng):
    prof = RcsProfile.flat(1.0)
    var = {}
    for m in (SW, CHI):
        draws = np.concatenate([emit_polar_pattern(prof, rng, 1.0, m)[1] for _ in range(28)])
        var[m.kind] = draws.var()
    assert var["swerling1"] > var["chi_square"]


def test_flat_profile_is_angle_independent(rng):
    prof = RcsProfile.flat(1.0)
    runs = np.array([emit_polar_pattern(prof, rng, 1.0, SW)[1] for _ in range(200)])
    front, back = runs[:, :180].ravel(), runs[:, 180:].ravel()
    assert ks_2samp(front, back).pvalue > 1e-3
