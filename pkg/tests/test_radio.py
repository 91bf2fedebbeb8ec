import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamsight.radio import (
    ArrayGeometry,
    MeasurementSchedule,
    PathParams,
    RadiationPattern,
    UePanelSet,
    beamforming_gain,
    bs_antenna,
    channel_matrix,
    default_rx_codebook,
    default_tx_codebook,
    effective_channel,
    effective_channel_tensor,
    observe,
    steering_derivatives,
    steering_vector,
    TxCodebook,
)

LAM = 299_792_458.0 / 28e9
az = st.floats(-math.pi, math.pi)
el = st.floats(0.05, math.pi - 0.05)


@settings(max_examples=100, deadline=None)
@given(az, el)
def test_steering_vector_has_unit_norm(t, p):
    a = steering_vector(ArrayGeometry.upa_xz(8, 8, LAM), t, p)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)


def test_broadside_response_is_in_phase():
    a = steering_vector(ArrayGeometry.upa_xz(4, 4, LAM), math.pi / 2, math.pi / 2)
    np.testing.assert_allclose(a, np.full(16, 0.25), atol=1e-12)


def test_steering_derivatives_match_finite_differences():
    g = ArrayGeometry.upa_xz(4, 3, LAM)
    rng = np.random.default_rng(0)
    for _ in range(20):
        t, p = rng.uniform(-3, 3), rng.uniform(0.2, 2.9)
        _, dt, dp = steering_derivatives(g, t, p)
        h = 1e-6
        np.testing.assert_allclose(dt, (steering_vector(g, t + h, p) - steering_vector(g, t - h, p)) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(dp, (steering_vector(g, t, p + h) - steering_vector(g, t, p - h)) / (2 * h), atol=1e-7)


def test_pattern_peaks_at_boresight_and_is_floored():
    pat = RadiationPattern()
    assert pat.gain_db(math.pi / 2, math.pi / 2) == pytest.approx(8.0)
    assert pat.gain_db(math.pi / 2 + math.radians(32.5), math.pi / 2) == pytest.approx(8.0 - 3.0)
    assert pat.gain_db(-math.pi / 2, math.pi / 2) == pytest.approx(8.0 - 30.0)
    assert not pat.visible(-math.pi / 2, math.pi / 2)


def test_pattern_derivatives_match_finite_differences():
    pat = RadiationPattern(boresight_az=0.3)
    for t, p in [(0.5, 1.4), (0.1, 1.7), (-0.4, 1.2)]:
        _, dt, dp = pat.amplitude_derivatives(t, p)
        h = 1e-7
        assert dt == pytest.approx((pat.amplitude(t + h, p) - pat.amplitude(t - h, p)) / (2 * h), rel=1e-6)
        assert dp == pytest.approx((pat.amplitude(t, p + h) - pat.amplitude(t, p - h)) / (2 * h), rel=1e-6)


def test_codebook_sizes_and_ordering():
    tx, rx = default_tx_codebook(), default_rx_codebook()
    assert tx.size == 64 and rx.size == 9
    a, e = tx.angles()
    assert a[tx.index(2, 5)] == pytest.approx(math.radians(60))
    assert e[tx.index(2, 5)] == pytest.approx(math.radians(120))
    np.testing.assert_allclose(rx.angles(1), rx.az + math.pi / 2)
    with pytest.raises(ValueError, match="increasing"):
        TxCodebook.from_degrees([40, 20], [90])


def test_panels_cover_all_four_edges():
    ps = UePanelSet()
    assert [round(math.degrees(ps.boresight(j))) for j in range(4)] == [90, 180, 270, 360]
    with pytest.raises(ValueError):
        ps.panel(4)


def _paths(rng, n):
    return [
        PathParams(rng.uniform(-3, 3), rng.uniform(1.0, 2.1), rng.uniform(0.5, 2.6), rng.uniform(1.0, 2.1),
                   rng.uniform(5e-9, 4e-8), complex(rng.normal(), rng.normal()) * 1e-4)
        for _ in range(n)
    ]


def test_beam_domain_tensor_equals_explicit_matrix_products():
    rng = np.random.default_rng(4)
    tx = bs_antenna(4, 4)
    rx = UePanelSet().panel(0)
    paths = _paths(rng, 3)
    tw = default_tx_codebook().weights(tx.array, subset=[3, 17, 40])
    rw = default_rx_codebook().weights(rx.array, 0)[:, :2]
    sched = MeasurementSchedule.ssb(tw, rw, 1.0, n_subcarriers=5)
    y = effective_channel_tensor(paths, tx, rx, sched)
    for n in range(5):
        h = channel_matrix(paths, tx, rx, n, sched.subcarrier_spacing)
        for mr in range(2):
            for mt in range(3):
                assert y[mr, mt, n] == pytest.approx(effective_channel(h, tw[:, mt], rw[:, mr]), rel=1e-12, abs=1e-18)
    bg = beamforming_gain(paths, tx, rx, tw[:, 1], rw[:, 0], 5, sched.subcarrier_spacing)
    assert bg == pytest.approx(np.abs(y[0, 1]).sum(), rel=1e-12)


def test_effective_channel_rejects_mismatched_beams():
    with pytest.raises(ValueError, match="do not match"):
        effective_channel(np.zeros((4, 16)), np.zeros(8), np.zeros(4))


def test_schedule_validation():
    with pytest.raises(ValueError, match="noise"):
        MeasurementSchedule.ssb(np.ones((4, 1)), np.ones((2, 1)), 0.0)
    with pytest.raises(ValueError, match="empty"):
        MeasurementSchedule.ssb(np.ones((4, 0)), np.ones((2, 1)), 1.0)


def test_observation_noise_has_requested_variance():
    tx, rx = bs_antenna(2, 2), UePanelSet().panel(0)
    sched = MeasurementSchedule.ssb(np.ones((4, 8)), np.ones((4, 8)), 0.3, n_subcarriers=500)
    y = observe([], tx, rx, sched, np.random.default_rng(1))
    assert np.mean(np.abs(y) ** 2) == pytest.approx(0.3, rel=0.02)
