import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from beamsight import crlb
from beamsight.geometry import Quaternion, hamilton_product
from beamsight.radio import MeasurementSchedule, PathParams, effective_channel_tensor, observe

from oracles import fd_channel_fim, fd_path_jacobian, random_channel_case, random_psd, random_rotation


def _normalized_gap(a, f):
    d = np.sqrt(np.abs(np.diag(f)))
    return float(np.max(np.abs(a - f) / np.maximum(np.outer(d, d), 1e-300)))


def test_channel_fim_matches_finite_differences_small_sample():
    rng = np.random.default_rng(5)
    for _ in range(10):
        case = random_channel_case(rng, max_side=4, n_sub=8)
        dense = crlb.channel_fim_dense(*case)
        assert _normalized_gap(dense, fd_channel_fim(*case)) < 1e-5


def test_channel_fim_is_symmetric_psd():
    rng = np.random.default_rng(6)
    dense = crlb.channel_fim_dense(*random_channel_case(rng))
    np.testing.assert_array_equal(dense, dense.T)
    assert np.linalg.eigvalsh(dense).min() > -1e-9 * np.abs(dense).max()


def test_block_diagonal_reports_cross_path_coupling():
    rng = np.random.default_rng(7)
    paths, tx, rx, sched = random_channel_case(rng)
    while len(paths) < 2:
        paths, tx, rx, sched = random_channel_case(rng)
    cf = crlb.fim_channel(paths, tx, rx, sched)
    dense = crlb.channel_fim_dense(paths, tx, rx, sched)
    for l, b in enumerate(cf.blocks):
        np.testing.assert_array_equal(b, dense[7 * l : 7 * l + 7, 7 * l : 7 * l + 7])
    assert 0.0 <= cf.cross_path <= 1.0 + 1e-12


def test_approximate_blocks_keep_only_grouped_entries():
    b = random_psd(np.random.default_rng(8), 7)
    a, lost = crlb.approx_block(b)
    assert a[0, 2] == 0.0 and a[0, 1] == b[0, 1] and a[4, 4] == b[4, 4] and a[5, 6] == 0.0
    assert lost > 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_efim_inverse_is_block_of_full_inverse(seed):
    rng = np.random.default_rng(seed)
    m = random_psd(rng, 7)
    s, singular = crlb.schur_complement(m, crlb.AVAILABLE)
    assert not singular
    inv = np.linalg.inv(m)[np.ix_(crlb.AVAILABLE, crlb.AVAILABLE)]
    np.testing.assert_allclose(np.linalg.inv(s), inv, rtol=1e-8, atol=1e-12 * np.abs(inv).max())


def test_pinv_quadratic_detects_vectors_outside_the_range():
    m = np.diag([2.0, 1.0, 0.0])
    assert crlb.pinv_quadratic(m, np.array([1.0, 1.0, 0.0])) == pytest.approx(1.5)
    assert crlb.pinv_quadratic(m, np.array([0.0, 0.0, 1.0])) == math.inf


def _jac_case(rng, mh, mv):
    v_0 = rng.uniform(-2, 2, size=3)
    v_l = v_0 + rng.uniform(-6, 6, size=3) if (mh or mv) else v_0
    p = v_0 + rng.uniform(1, 5, size=3) * rng.choice([-1, 1], size=3)
    dq = rng.normal(size=4)
    dq /= np.linalg.norm(dq)
    return v_l, v_0, p, random_rotation(rng), dq, random_rotation(rng)


@pytest.mark.parametrize("mh,mv", [(False, False), (True, False), (False, True)])
def test_path_jacobian_matches_finite_differences(mh, mv):
    rng = np.random.default_rng(9)
    for _ in range(100):
        v_l, v_0, p, rr, dq, rb = _jac_case(rng, mh, mv)
        jac = crlb.path_jacobian(v_l, v_0, p, rr, dq, rb, mh, mv)
        fq, fl, f0 = fd_path_jacobian(v_l, v_0, p, rr, dq, rb, mh, mv)
        for a, f in ((jac.d_dq, fq), (jac.d_vl, fl), (jac.d_v0, f0)):
            scale = np.maximum(np.abs(f).max(axis=1, keepdims=True), 1e-12)
            assert np.max(np.abs(a - f) / scale) < 1e-5


def test_null_bases_are_orthonormal_and_tangent():
    rng = np.random.default_rng(10)
    for _ in range(50):
        dq = rng.normal(size=4)
        dq /= np.linalg.norm(dq)
        u = crlb.orientation_null_basis(dq)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(u.T @ dq, 0.0, atol=1e-12)
        p = crlb.printed_null_basis(dq)
        np.testing.assert_allclose(p.T @ dq, 0.0, atol=1e-12)


def _random_spatial_fim(rng, n_sources=3, n_obs=30):
    dq = rng.normal(size=4)
    dq /= np.linalg.norm(dq)
    f = crlb.SpatialFim.zeros(dq, list(range(n_sources)))
    # each observed path couples the bias with a single source, as in sensing
    for k in range(n_obs):
        j = np.zeros((3, f.matrix.shape[0]))
        j[:, :4] = rng.normal(size=(3, 4))
        j[:, f.v_index(k % n_sources)] = rng.normal(size=(3, 3))
        f.matrix += j.T @ j
    return f


def test_constrained_crlb_is_basis_invariant():
    rng = np.random.default_rng(12)
    f = _random_spatial_fim(rng)
    ref = crlb.constrained_crlb(f)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    for u0 in (crlb.printed_null_basis(f.delta_q), crlb.orientation_null_basis(f.delta_q) @ q):
        alt = crlb.constrained_crlb(f, u0)
        assert np.linalg.norm(alt - ref) <= 1e-9 * np.linalg.norm(ref)


def test_error_quaternion_identity():
    rng = np.random.default_rng(13)
    for _ in range(200):
        a = Quaternion.from_array(rng.normal(size=4)).as_array()
        b = Quaternion.from_array(rng.normal(size=4)).as_array()
        d = hamilton_product(np.array([b[0], *-b[1:]]), a)
        assert np.sum((a - b) ** 2) == pytest.approx(2 - 2 * d[0], abs=1e-12)


def test_oeb_from_trace_clamps_with_warning():
    assert crlb.oeb_from_trace(0.0) == 0.0
    with pytest.warns(RuntimeWarning, match="outside"):
        assert crlb.oeb_from_trace(5.0) == pytest.approx(2 * math.pi)


def test_bounds_shrink_when_information_is_added():
    rng = np.random.default_rng(14)
    f = _random_spatial_fim(rng)
    extra = _random_spatial_fim(np.random.default_rng(15))
    g = f + crlb.SpatialFim(extra.matrix, f.delta_q, f.source_ids)
    for i in range(f.n_sources):
        assert crlb.peb(g, i) <= crlb.peb(f, i) + 1e-15
    assert crlb.oeb(g) <= crlb.oeb(f) + 1e-15


def test_source_with_no_information_is_unobservable():
    rng = np.random.default_rng(16)
    f = _random_spatial_fim(rng)
    s = f.v_index(2)
    f.matrix[s, :] = 0.0
    f.matrix[:, s] = 0.0
    rep = crlb.bound_report(f)
    assert list(rep.unobservable) == [False, False, True]


def test_block_aeb_equals_direct_quadratic_form():
    rng = np.random.default_rng(17)
    for _ in range(20):
        f = _random_spatial_fim(rng, n_sources=4, n_obs=40)
        for i in range(4):
            v_l, v_0, p, rr, _, rb = _jac_case(rng, i > 0, False)
            jac = crlb.path_jacobian(v_l, v_0, p, rr, f.delta_q, rb, i > 0, False)
            np.testing.assert_allclose(crlb.aeb(f, jac, i), crlb.aeb_direct(f, jac, i), rtol=1e-8)


def test_information_ellipse_extremes():
    lo, hi, t = crlb.information_ellipse(np.diag([4.0, 1.0, 1.0]))
    assert (lo, hi) == pytest.approx((0.25, 1.0))
    assert abs(math.sin(t)) == pytest.approx(1.0)


def test_ml_delay_estimator_attains_the_bound():
    """Sandwich check of the FIM scale: ML delay variance sits at the CRLB at high SNR."""
    rng = np.random.default_rng(18)
    paths, tx, rx, sched = random_channel_case(rng, max_paths=1, max_side=2, n_sub=64)
    p0 = paths[0]
    power = np.mean(np.abs(effective_channel_tensor(paths, tx, rx, sched)) ** 2)
    sched = sched.with_noise(power / 10.0 ** 2.0)
    f = crlb.channel_fim_dense(paths, tx, rx, sched)
    idx = [4, 5, 6]
    bound = np.linalg.inv(f[np.ix_(idx, idx)])[0, 0]
    sd = math.sqrt(bound)

    def template(tau):
        return effective_channel_tensor([PathParams(p0.aoa_az, p0.aoa_el, p0.aod_az, p0.aod_el, tau, 1.0)], tx, rx, sched).ravel()

    est = []
    for _ in range(300):
        y = observe(paths, tx, rx, sched, rng).ravel()

        def neg(tau):
            s = template(tau)
            return -abs(s.conj() @ y) ** 2 / np.real(s.conj() @ s)

        r = minimize_scalar(neg, bounds=(p0.toa - 8 * sd, p0.toa + 8 * sd), method="bounded", options={"xatol": sd * 1e-3})
        est.append(r.x)
    ratio = np.var(est) / bound
    assert 0.75 < ratio < 1.35
