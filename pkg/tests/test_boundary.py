import math

import numpy as np
import pytest

from retarget_guidance import boundary as bd
from retarget_guidance.errors import DegenerateCenter, DegenerateConic, DegenerateLabels, ZeroLambda


def _boundary_from_general(A, B, C, D, E, F):
    return bd.ConicBoundary.from_level1(bd.canonicalize(bd.ConicCoefficients(A, B, C, D, E, F)))


def test_featurize():
    assert np.array_equal(bd.featurize([2.0, 3.0]), [2.0, 3.0, 4.0, 9.0, 6.0])
    rows = bd.featurize(np.array([[1.0, -1.0], [0.5, 2.0]]))
    assert rows.shape == (2, 5)
    assert np.array_equal(rows[1], [0.5, 2.0, 0.25, 4.0, 1.0])


def test_general_conic_mapping():
    conic = bd.to_general_conic((np.array([2.0, -3.0, 1.0, 4.0, 5.0]), 6.0))
    assert conic.as_array().tolist() == [1.0, 5.0, 4.0, 2.0, -3.0, 6.0]
    with pytest.raises(DegenerateConic):
        bd.to_general_conic((np.array([1.0, 1.0, 0.0, 0.0, 0.0]), 1.0))


def test_circle_canonical():
    # (s1 - 2)^2 + (s2 + 1)^2 = 4
    cc = bd.canonicalize(bd.ConicCoefficients(1.0, 0.0, 1.0, -4.0, 2.0, 1.0))
    assert (cc.h, cc.k) == pytest.approx((2.0, -1.0))
    assert cc.lam == pytest.approx(-4.0)
    assert (cc.M1, cc.M2) == pytest.approx((0.25, 0.25))
    assert cc.theta == 0.0


def test_axis_aligned_ellipse():
    cc = bd.canonicalize(bd.ConicCoefficients(1 / 9, 0.0, 1 / 4, 0.0, 0.0, -1.0))
    assert (cc.M1, cc.M2) == pytest.approx((1 / 9, 1 / 4))
    assert (cc.h, cc.k, cc.theta) == pytest.approx((0.0, 0.0, 0.0))


def test_rotated_ellipse():
    th = math.radians(30.0)
    src = bd.CanonicalConic(1.0, -2.0, th, 1 / 9, 1 / 4, -1.0, 0, 0, 0)
    cc = bd.canonicalize(bd.expand_canonical(src))
    assert (cc.h, cc.k) == pytest.approx((1.0, -2.0))
    # principal axes are found up to a quarter turn, with M1 and M2 swapping accordingly
    if abs(math.cos(cc.theta - th)) > 0.5:
        assert (cc.M1, cc.M2) == pytest.approx((1 / 9, 1 / 4))
        assert math.sin(cc.theta - th) == pytest.approx(0.0, abs=1e-12)
    else:
        assert (cc.M1, cc.M2) == pytest.approx((1 / 4, 1 / 9))
        assert math.cos(cc.theta - th) == pytest.approx(0.0, abs=1e-12)


def test_degenerate_conics():
    with pytest.raises(DegenerateCenter):
        bd.canonicalize(bd.ConicCoefficients(1.0, 2.0, 1.0, 1.0, 0.0, -1.0))  # parabola
    with pytest.raises(ZeroLambda):
        bd.canonicalize(bd.ConicCoefficients(1.0, 0.0, -1.0, 0.0, 0.0, 0.0))  # crossing lines


def test_random_round_trip(rng):
    done = 0
    while done < 1000:
        A, B, C, D, E, F = rng.normal(size=6)
        conic = bd.ConicCoefficients(A, B, C, D, E, F)
        try:
            cc = bd.canonicalize(conic)
        except (DegenerateCenter, ZeroLambda):
            continue
        back = bd.expand_canonical(cc).as_array() * (-cc.lam)
        assert np.allclose(back, conic.as_array(), rtol=1e-8, atol=1e-8 * np.abs(conic.as_array()).max())
        # points on the canonical curve are on the zero set of g
        b = bd.ConicBoundary.from_level1(cc)
        if cc.M1 > 0 and cc.M2 > 0:
            phi = rng.uniform(0, 2 * np.pi, 5)
            u, w = np.cos(phi) / np.sqrt(cc.M1), np.sin(phi) / np.sqrt(cc.M2)
            c, s = math.cos(cc.theta), math.sin(cc.theta)
            pts = np.column_stack([cc.h + c * u - s * w, cc.k + s * u + c * w])
            assert np.max(np.abs(bd.eval_g(b, pts))) <= 1e-9 * max(1.0, np.abs(pts).max() ** 2 * max(cc.M1, cc.M2))
        # g has the sign of the original quadratic
        p = rng.normal(size=2) * 3
        f = conic.evaluate(*p)
        if abs(f) > 1e-6:
            assert np.sign(bd.eval_g(b, p)) == np.sign(f)
        done += 1


def test_sign_convention_inside_controllable():
    # classifier 4 - (s1-2)^2 - (s2+1)^2 is positive inside the circle
    b = _boundary_from_general(-1.0, 0.0, -1.0, 4.0, -2.0, -1.0)
    assert b.sign == -1.0
    assert b([2.0, -1.0]) == pytest.approx(1.0)
    assert b([5.0, -1.0]) < 0


def test_two_point_svm():
    Z = np.array([[1.0, 0, 0, 0, 0]] * 3 + [[-1.0, 0, 0, 0, 0]] * 3)
    d = np.array([1.0] * 3 + [-1.0] * 3)
    m = bd.fit_level1(Z, d, gamma=1e6, tol=1e-9, standardize=False)
    assert np.allclose(m.c, [1, 0, 0, 0, 0], atol=1e-8)
    assert m.b == pytest.approx(0.0, abs=1e-8)
    assert bd.level1_kkt_residual(m, Z, d) <= 1e-6


def test_xor_is_separable_with_cross_term():
    s = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]] * 2, dtype=float)
    d = np.array([1, 1, -1, -1] * 2, dtype=float)
    Z = bd.featurize(s)
    m = bd.fit_level1(Z, d, gamma=1e6, tol=1e-9, standardize=False)
    assert np.all(np.sign(m.decision(Z)) == d)
    assert np.allclose(m.c, [0, 0, 0, 0, 1], atol=1e-8)
    assert bd.level1_kkt_residual(m, Z, d) <= 1e-6


def test_level1_rejects_bad_labels():
    Z = bd.featurize(np.zeros((8, 2)))
    with pytest.raises(DegenerateLabels):
        bd.fit_level1(Z, np.ones(8), 1.0)
    with pytest.raises(DegenerateLabels):
        bd.fit_level1(Z[:4], np.array([1.0, -1.0, 1.0, -1.0]), 1.0)


def _ellipse_data(rng, n=300):
    s = rng.uniform([0, 0], [10, 6], size=(n, 2))
    inside = ((s[:, 0] - 5) / 3.5) ** 2 + ((s[:, 1] - 3) / 2.0) ** 2 < 1
    return s, np.where(inside, 1.0, -1.0)


def test_level1_kkt_on_soft_margin(rng):
    s, d = _ellipse_data(rng)
    d[:5] *= -1  # label noise forces bounded multipliers
    m = bd.fit_level1(bd.featurize(s), d, gamma=10.0, tol=1e-8)
    assert bd.level1_kkt_residual(m, bd.featurize(s), d) <= 1e-6
    assert np.all(m.slack >= 0)


def test_level2_zero_loss_keeps_level1(rng):
    s, d = _ellipse_data(rng)
    m = bd.fit_level1(bd.featurize(s), d, gamma=100.0)
    b0 = bd.ConicBoundary.from_level1(bd.canonicalize(bd.to_general_conic(m)))
    if np.all(b0(s[d < 0]) <= -0.01):
        b2 = bd.fit_level2(b0, s, d, eta=0.01)
        assert np.array_equal(b2.delta, np.zeros(3))
    b2 = bd.fit_level2(b0, s, d, eta=0.01)
    assert np.all(b2(s[d < 0]) <= -0.01 + 1e-12)
    assert b2.stats["shrinkage"] <= 0.05


def test_level2_single_negative_matches_grid_oracle():
    # unit circle, inside controllable; one uncontrollable sample at (0.9, 0)
    b0 = _boundary_from_general(-1.0, 0.0, -1.0, 0.0, 0.0, 1.0)
    s = np.array([[0.9, 0.0], [0.0, 0.0]])
    d = np.array([-1.0, 1.0])
    b2 = bd.fit_level2(b0, s, d, eta=0.01, bounds=(1.0, 1.0, 0.5), tol=1e-9)
    expect = 0.9 - math.sqrt(1.01)
    assert b2.delta[0] == pytest.approx(expect, abs=1e-6)
    assert abs(b2.delta[1]) < 1e-6
    assert b2(s[0]) <= -0.01 + 1e-9
    # dense grid oracle on (dh, dk); theta is irrelevant for a circle
    g = np.linspace(-0.3, 0.3, 1201)
    H, K = np.meshgrid(g, g, indexing="ij")
    ok = 1.0 - ((0.9 - H) ** 2 + K ** 2) <= -0.01
    best = np.min(np.hypot(H, K)[ok])
    assert np.linalg.norm(b2.delta) == pytest.approx(best, abs=g[1] - g[0])


def test_save_load(tmp_path, rng):
    s, d = _ellipse_data(rng)
    m = bd.fit_level1(bd.featurize(s), d, gamma=100.0)
    b0 = bd.ConicBoundary.from_level1(bd.canonicalize(bd.to_general_conic(m)))
    b2 = bd.fit_level2(b0, s, d)
    b2.save(tmp_path / "b.json")
    back = bd.ConicBoundary.load(tmp_path / "b.json")
    assert np.array_equal(back(s), b2(s))
    assert back.stats == b2.stats


def test_polyline_lies_on_boundary(rng):
    b = _boundary_from_general(-1.0, 0.5, -2.0, 1.0, 0.0, 3.0)
    for _, pts in bd.boundary_polyline(b, (-5, 5), (-5, 5), 200):
        assert np.max(np.abs(b(pts))) < 1e-9
    hyper = _boundary_from_general(1.0, 0.0, -1.0, 0.0, 0.0, -1.0)
    pieces = bd.boundary_polyline(hyper, (-5, 5), (-5, 5), 200)
    assert len(pieces) >= 2
    for _, pts in pieces:
        assert np.max(np.abs(hyper(pts)) / np.maximum(1.0, np.sum(pts ** 2, axis=1))) < 1e-9


def _far_centre_case(rng):
    # hyperbola whose centre lies well away from the data, as in the real boundary fit
    b0 = _conic(-1.0, 0.0, 1.0, 0.0, 0.0, 1.0)  # controllable where s2^2 - s1^2 > -1
    s = rng.uniform([5.0, 20.0], [15.0, 30.0], size=(200, 2))
    d = np.where(s[:, 1] - s[:, 0] > 12.0, 1.0, -1.0)
    return b0, s, d


def _conic(*coef):
    return bd.ConicBoundary.from_level1(bd.canonicalize(bd.ConicCoefficients(*coef)))


def test_level2_minimal_norm_certificate(rng):
    for b0, s, d in (_far_centre_case(rng), (None, *_ellipse_data(rng))):
        if b0 is None:
            m = bd.fit_level1(bd.featurize(s), d, gamma=1.0)
            b0 = bd.ConicBoundary.from_level1(bd.canonicalize(bd.to_general_conic(m)))
        b2 = bd.fit_level2(b0, s, d, eta=0.01)
        assert np.max(b2(s[d < 0])) <= -0.01 + 1e-9
        if np.any(b2.delta):
            shrunk = b2.with_delta(0.95 * b2.delta)
            assert np.max(shrunk(s[d < 0])) > -0.01


def test_level2_rotation_weight(rng):
    b0, s, d = _far_centre_case(rng)
    auto = bd.fit_level2(b0, s, d, eta=0.01)
    plain = bd.fit_level2(b0, s, d, eta=0.01, theta_weight=1.0)
    L = auto.stats["theta_weight"]
    assert L == pytest.approx(np.hypot(*(s.mean(axis=0) - [b0.canonical.h, b0.canonical.k])))
    for b in (auto, plain):
        assert np.max(b(s[d < 0])) <= -0.01 + 1e-9

    def weighted(delta):
        return np.linalg.norm(delta * [1.0, 1.0, L])

    # each fit is the smaller one under its own metric
    assert weighted(auto.delta) <= weighted(plain.delta) + 1e-6
    assert np.linalg.norm(plain.delta) <= np.linalg.norm(auto.delta) + 1e-6
