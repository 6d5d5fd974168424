import numpy as np
import pytest

from boltzwall.errors import (
    ChartMismatch,
    GrazingSingularity,
    OutsideDomain,
    ZeroVelocity,
)
from boltzwall.geometry import (
    PhasePoint,
    backward_exit,
    build_cycle,
    chart_at,
    ellipsoid,
    exit_arrays,
    exit_gradients,
    exit_jacobian,
    forward_exit,
    sample_interior,
    sample_unit_directions,
    unit_ball,
)
from boltzwall.verify import bisection_exit_oracle

BALL = unit_ball()
ELL = ellipsoid(2.0, 1.0, 1.0)


def test_convexity_constant_by_sampling():
    rng = np.random.default_rng(0)
    for dom in (BALL, ELL):
        xs = sample_interior(dom, 200, rng)
        zetas = rng.standard_normal((200, 3))
        hess = dom.hess_xi(xs)
        quad = np.einsum("mi,mij,mj->m", zetas, hess, zetas)
        assert np.all(quad >= dom.convexity_constant * np.sum(zetas**2, axis=1) - 1e-12)


def test_backward_exit_center_ray():
    rec = backward_exit(BALL, PhasePoint(np.zeros(3), np.array([2.0, 0.0, 0.0])))
    assert rec.t_b == pytest.approx(0.5, abs=1e-14)
    assert np.allclose(rec.x_b, [-1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(rec.normal_b, [-1.0, 0.0, 0.0], atol=1e-12)


def test_backward_exit_offcenter_quadratic_oracle():
    # |x - s v|^2 = 1 with x = (1/2, 0, 0), v = e2 gives s = sqrt(3)/2
    rec = backward_exit(BALL, PhasePoint(np.array([0.5, 0.0, 0.0]),
                                         np.array([0.0, 1.0, 0.0])))
    assert rec.t_b == pytest.approx(np.sqrt(0.75), abs=1e-13)
    assert np.allclose(rec.x_b, [0.5, -np.sqrt(0.75), 0.0], atol=1e-12)


@pytest.mark.parametrize("dom", [BALL, ELL], ids=["ball", "ellipsoid"])
def test_exit_matches_bisection_oracle(dom):
    rng = np.random.default_rng(7)
    xs = sample_interior(dom, 2000, rng)
    vs = sample_unit_directions(2000, rng) * rng.uniform(0.3, 3.0, (2000, 1))
    tb, xb, _, _ = exit_arrays(dom, xs, vs)
    tb_oracle = bisection_exit_oracle(dom, xs, vs)
    assert np.max(np.abs(tb - tb_oracle)) < 1e-10
    assert np.max(np.abs(dom.xi(xb))) < 1e-9


def test_exit_consistency_inside_segment():
    rng = np.random.default_rng(3)
    xs = sample_interior(BALL, 300, rng)
    vs = sample_unit_directions(300, rng)
    tb, _, _, _ = exit_arrays(BALL, xs, vs)
    for s_frac in (0.25, 0.5, 0.9):
        inside = BALL.xi(xs - (s_frac * tb)[:, None] * vs)
        assert np.all(inside < 0)


def test_forward_exit_mirrors_backward():
    p = PhasePoint(np.zeros(3), np.array([2.0, 0.0, 0.0]))
    rec = forward_exit(BALL, p)
    assert rec.t_b == pytest.approx(0.5)
    assert np.allclose(rec.x_b, [1.0, 0.0, 0.0])
    rng = np.random.default_rng(11)
    xs = sample_interior(BALL, 200, rng)
    vs = sample_unit_directions(200, rng)
    for x, v in zip(xs[:20], vs[:20]):
        fwd = forward_exit(BALL, PhasePoint(x, v))
        bwd = backward_exit(BALL, PhasePoint(x, -v))
        assert fwd.t_b == pytest.approx(bwd.t_b, rel=1e-12)


def test_chord_length_oracle():
    # t_b + t_f equals the chord length over the speed
    rng = np.random.default_rng(13)
    xs = sample_interior(BALL, 200, rng)
    vs = sample_unit_directions(200, rng) * rng.uniform(0.5, 2.0, (200, 1))
    for x, v in zip(xs, vs):
        tb = backward_exit(BALL, PhasePoint(x, v)).t_b
        tf = forward_exit(BALL, PhasePoint(x, v)).t_b
        speed = np.linalg.norm(v)
        vhat = v / speed
        d = np.linalg.norm(x - (x @ vhat) * vhat)
        chord = 2.0 * np.sqrt(max(1.0 - d**2, 0.0))
        assert (tb + tf) * speed == pytest.approx(chord, abs=1e-10)


def test_exit_errors():
    with pytest.raises(ZeroVelocity):
        backward_exit(BALL, PhasePoint(np.zeros(3), np.zeros(3)))
    with pytest.raises(OutsideDomain):
        backward_exit(BALL, PhasePoint(np.array([2.0, 0.0, 0.0]),
                                       np.array([1.0, 0.0, 0.0])))


def test_exit_gradients_center_example():
    # t_b((d,0,0), e1) = 1 + d and t_b(0, (1+e) e1) = 1/(1+e)
    gxt, gvt, _, _ = exit_gradients(BALL, PhasePoint(np.zeros(3),
                                                     np.array([1.0, 0.0, 0.0])))
    assert np.allclose(gxt, [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(gvt, [-1.0, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("dom", [BALL, ELL], ids=["ball", "ellipsoid"])
def test_exit_gradients_vs_finite_differences(dom):
    rng = np.random.default_rng(5)
    n = 200
    xs = sample_interior(dom, n, rng, max_xi=-0.05)
    vs = sample_unit_directions(n, rng) * rng.uniform(0.5, 2.0, (n, 1))
    checked = 0
    h = 1e-6
    for x, v in zip(xs, vs):
        rec = backward_exit(dom, PhasePoint(x, v))
        if abs(rec.normal_b @ v) / np.linalg.norm(v) < 0.05:
            continue
        gxt, gvt, gxx, gvx = exit_gradients(dom, PhasePoint(x, v))
        fd_xt = np.empty(3)
        fd_vt = np.empty(3)
        fd_xx = np.empty((3, 3))
        fd_vx = np.empty((3, 3))
        for c in range(3):
            e = np.zeros(3)
            e[c] = h
            rp = backward_exit(dom, PhasePoint(x + e, v))
            rm = backward_exit(dom, PhasePoint(x - e, v))
            fd_xt[c] = (rp.t_b - rm.t_b) / (2 * h)
            fd_xx[:, c] = (rp.x_b - rm.x_b) / (2 * h)
            rp = backward_exit(dom, PhasePoint(x, v + e))
            rm = backward_exit(dom, PhasePoint(x, v - e))
            fd_vt[c] = (rp.t_b - rm.t_b) / (2 * h)
            fd_vx[:, c] = (rp.x_b - rm.x_b) / (2 * h)
        scale = max(1.0, np.abs(gxt).max())
        assert np.abs(fd_xt - gxt).max() / scale < 1e-5
        assert np.abs(fd_vt - gvt).max() / max(1.0, np.abs(gvt).max()) < 1e-5
        assert np.abs(fd_xx - gxx).max() / max(1.0, np.abs(gxx).max()) < 1e-5
        assert np.abs(fd_vx - gvx).max() / max(1.0, np.abs(gvx).max()) < 1e-5
        checked += 1
    assert checked > 50


def test_gradient_grows_toward_grazing():
    x = np.array([0.9, 0.0, 0.0])
    mags = []
    for ang in (0.5, 0.2, 0.1):
        v = np.array([np.sin(ang), np.cos(ang), 0.0])
        gxt, _, _, _ = exit_gradients(BALL, PhasePoint(x, v))
        mags.append(np.linalg.norm(gxt))
    assert mags[0] < mags[1] < mags[2]


def test_gradients_raise_on_grazing():
    with pytest.raises(GrazingSingularity):
        exit_gradients(BALL, PhasePoint(np.array([1.0, 0.0, 0.0]),
                                        np.array([0.0, 1.0, 0.0])))


@pytest.mark.parametrize("dom,q", [
    (BALL, np.array([0.0, 0.0, 1.0])),
    (BALL, np.array([0.6, -0.64, 0.48]) / np.linalg.norm([0.6, -0.64, 0.48])),
    (ELL, np.array([2.0, 0.0, 0.0])),
    (ELL, np.array([0.0, 0.0, 1.0])),
], ids=["ball-pole", "ball-generic", "ell-long", "ell-short"])
def test_chart_anchor_properties(dom, q):
    ch = chart_at(dom, q)
    d = ch.d_eta(np.zeros(3))
    assert abs(d[0] @ d[1]) < 1e-12
    assert abs(d[0] @ d[2]) < 1e-12
    assert abs(d[1] @ d[2]) < 1e-12
    n = dom.normal(q)
    assert np.linalg.norm(d[2] / np.linalg.norm(d[2]) - n) < 1e-12
    T = ch.tmatrix(np.zeros(3))
    assert np.abs(T @ T.T - np.eye(3)).max() < 1e-10


def test_ball_chart_orthonormal_on_patch():
    ch = chart_at(BALL, np.array([0.0, 1.0, 0.0]))
    rng = np.random.default_rng(2)
    for _ in range(20):
        xp = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 0.0])
        T = ch.tmatrix(xp)
        assert np.abs(T @ T.T - np.eye(3)).max() < 1e-10
        g = ch.metric(xp)
        assert np.all(np.diag(g) > 0)
        # round trip through the boundary inverse
        y = ch.eta(xp)
        c = ch.coords_of(y)
        assert np.allclose(c, xp[:2], atol=1e-12)


@pytest.mark.parametrize("dom", [BALL, ELL], ids=["ball", "ellipsoid"])
def test_exit_jacobian_vs_finite_difference(dom):
    rng = np.random.default_rng(4)
    n_checked = 0
    while n_checked < 40:
        q = rng.standard_normal(3)
        q = q / np.linalg.norm(q) * np.array(dom.semi_axes)
        n = dom.normal(q)
        v = sample_unit_directions(1, rng)[0]
        if n @ v < 0:
            v = v - 2 * (n @ v) * n
        if n @ v < 0.15:
            continue
        rec = backward_exit(dom, PhasePoint(q, v))
        if abs(rec.normal_b @ v) < 0.15 or rec.t_b < 0.05:
            continue
        ch2 = chart_at(dom, rec.x_b)
        jac = exit_jacobian(dom, q, v, ch2)

        def chartmap(vv):
            r = backward_exit(dom, PhasePoint(q, vv))
            c = ch2.coords_of(r.x_b)
            return np.array([c[0], c[1], r.t_b])

        h = 1e-6
        fd = np.empty((3, 3))
        for c in range(3):
            e = np.zeros(3)
            e[c] = h
            fd[:, c] = (chartmap(v + e) - chartmap(v - e)) / (2 * h)
        assert abs(jac - abs(np.linalg.det(fd))) / jac < 1e-4
        n_checked += 1


def test_exit_jacobian_cubic_flight_structure():
    # the determinant vanishes like t_b^3 over the chart area and normal
    # component: J * sqrt(g11 g22) |n(x2).v| / t_b^3 is identically one
    q = np.array([0.0, 0.0, -1.0])
    jacs = []
    for ang in (1.0, 1.3, 1.5):
        v = np.array([np.sin(ang), 0.0, -np.cos(ang)])
        rec = backward_exit(BALL, PhasePoint(q, v))
        ch = chart_at(BALL, rec.x_b)
        g = ch.metric(np.zeros(3))
        jac = exit_jacobian(BALL, q, v, ch)
        ident = jac * np.sqrt(g[0, 0] * g[1, 1]) * abs(rec.normal_b @ v) / rec.t_b**3
        assert ident == pytest.approx(1.0, rel=1e-12)
        jacs.append(jac)
    assert jacs[0] > jacs[1] > jacs[2]
    assert jacs[2] < 0.05 * jacs[0]


def test_exit_jacobian_chart_mismatch():
    q = np.array([0.0, 0.0, -1.0])
    v = np.array([0.0, 0.0, 0.9])
    wrong = chart_at(BALL, np.array([1.0, 0.0, 0.0]), patch_radius=0.3)
    with pytest.raises(ChartMismatch):
        exit_jacobian(BALL, q, v, wrong)


def test_jacobian_injectivity_spot_check():
    # distinct outgoing velocities never produce the same (chart coords, t_b)
    rng = np.random.default_rng(21)
    q = np.array([0.0, 0.0, -1.0])
    n = BALL.normal(q)
    m = 100000
    v = sample_unit_directions(m, rng) * rng.uniform(0.3, 2.0, (m, 1))
    nv = v @ n
    v[nv < 0] -= 2 * nv[nv < 0, None] * n
    keep = (v @ n) > 1e-3
    v = v[keep]
    tb, xb, _, _ = exit_arrays(BALL, np.broadcast_to(q, v.shape), v)
    ch = chart_at(BALL, np.array([0.0, 0.0, 1.0]), patch_radius=4.0)
    c = ch.coords_of(xb)
    out = np.column_stack([c, tb])
    order = np.lexsort(out.T)
    diffs = np.abs(np.diff(out[order], axis=0)).max(axis=1)
    vdiffs = np.linalg.norm(np.diff(v[order], axis=0), axis=1)
    collisions = (diffs < 1e-9) & (vdiffs > 1e-6)
    assert not np.any(collisions)


def test_build_cycle_short_horizon_no_bounce():
    cyc = build_cycle(BALL, PhasePoint(np.zeros(3), np.array([1.0, 0.0, 0.0])),
                      t0=0.3, velocity_sampler=None, seed=0)
    assert cyc.n_bounces == 0
    assert cyc.reached_initial_time
    assert cyc.times[0] == pytest.approx(0.3 - 1.0)


def test_build_cycle_points_on_boundary():
    from boltzwall.boundary import WallTemperature, wall_flux_sampler

    tw = WallTemperature(domain=BALL)
    cyc = build_cycle(BALL, PhasePoint(np.zeros(3), np.array([0.8, 0.1, 0.0])),
                      t0=6.0, velocity_sampler=wall_flux_sampler(tw), seed=42)
    assert cyc.n_bounces >= 1
    for x in cyc.points:
        assert abs(BALL.xi(x)) < 1e-10
    for v, x in zip(cyc.velocities, cyc.points):
        assert BALL.normal(x) @ v > 0
    # remaining times decrease by the flight times
    for k in range(1, len(cyc.times)):
        assert cyc.times[k] == pytest.approx(cyc.times[k - 1] - cyc.flight_times[k - 1])


def test_build_cycle_mean_bounces_monte_carlo():
    # two independent simulations agree within three combined standard errors
    from boltzwall.boundary import WallTemperature, wall_flux_sampler

    tw = WallTemperature(domain=BALL)
    sampler = wall_flux_sampler(tw)

    def mean_bounces(seed, n=120):
        rng = np.random.default_rng(seed)
        counts = []
        for k in range(n):
            x = sample_interior(BALL, 1, rng)[0]
            v = sample_unit_directions(1, rng)[0]
            cyc = build_cycle(BALL, PhasePoint(x, v), t0=10.0,
                              velocity_sampler=sampler, seed=seed * 100003 + k)
            counts.append(cyc.n_bounces)
        return np.mean(counts), np.std(counts) / np.sqrt(n)

    m1, s1 = mean_bounces(1)
    m2, s2 = mean_bounces(2)
    assert abs(m1 - m2) < 3.0 * np.hypot(s1, s2)


def test_phase_point_classification():
    assert PhasePoint(np.zeros(3), np.array([1.0, 0, 0])).classify(BALL) == "interior"
    x = np.array([1.0, 0.0, 0.0])
    assert PhasePoint(x, np.array([1.0, 0, 0])).classify(BALL) == "outgoing"
    assert PhasePoint(x, np.array([-1.0, 0, 0])).classify(BALL) == "incoming"
    assert PhasePoint(x, np.array([0.0, 1.0, 0])).classify(BALL) == "grazing"
