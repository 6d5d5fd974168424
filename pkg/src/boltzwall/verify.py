"""Numerical verification harness for the quantitative estimates:
nonlocal-to-local weight bounds, the phase-space change of variables,
the W^{1,p} singular integral and its p < 3 dichotomy, exit-time and
normal-equivalence bounds, and the second-derivative obstruction.

Estimates stated with unspecified constants are verified as bounded
sup-ratios with refinement stability; divergence is classified by fixed
threshold rules recorded in the report header:

  * generic rule: "diverging" when last/first refinement value > 1.5;
  * W^{1,p} rule: "diverging" when the last two values differ by > 10%;
  * obstruction rule: "diverging" (log signature) when the last four
    level increments stay within 30% of their mean.

Every check is reproducible bit-for-bit under a fixed seed and thread
count; checks are independent jobs merged deterministically by lemma id.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collision import (
    KernelParams,
    gauss_legendre,
    grad_kernel,
    nu_profile,
    sphere_rule,
)
from .geometry import (
    ConvexDomain,
    PhasePoint,
    backward_exit,
    exit_arrays,
    sample_boundary,
    sample_interior,
    sample_unit_directions,
)
from .kinetic_weight import KineticWeight

DIVERGENCE_RATIO = 1.5       # generic last-over-first trigger
W1P_TAIL_RATIO = 1.10        # last-over-previous trigger for the W^{1,p} scan
OBSTRUCTION_BAND = 0.30      # increment spread for the log-divergence signature
STABILITY_DRIFT = 0.25       # allowed drift of the nonlocal sup under doubling
TRUNCATION_GAIN = 0.25       # required gain of the truncated nonlocal variants


@dataclass
class LemmaCheck:
    """Outcome of one verified estimate: refinement values, a trend
    classification under the fixed rules above, and a pass flag."""

    lemma_id: str
    sample_count: int
    levels: list
    trend: str
    passed: bool
    details: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "sample_count": int(self.sample_count),
            "levels": [float(x) for x in self.levels],
            "trend": self.trend,
            "passed": bool(self.passed),
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in np.asarray(obj).tolist()] \
            if isinstance(obj, np.ndarray) else [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def classify_last_over_first(levels) -> str:
    levels = np.asarray(levels, dtype=float)
    return "diverging" if levels[-1] / levels[0] > DIVERGENCE_RATIO else "bounded"


# ---------------------------------------------------------------------------
# independent exit oracle


def bisection_exit_oracle(domain: ConvexDomain, X: np.ndarray, V: np.ndarray,
                          iters: int = 64) -> np.ndarray:
    """Pure bisection for the backward exit time; independent of the
    production closed-form/Newton path."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    speed = np.linalg.norm(V, axis=1)
    lo = np.zeros(X.shape[0])
    hi = (np.linalg.norm(X, axis=1) + max(domain.semi_axes) + 1.0) / speed
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = domain.xi(X - mid[:, None] * V) < 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# sampling strata


def _phase_samples(domain: ConvexDomain, n_bulk: int, n_graze: int,
                   rng: np.random.Generator, v_lo: float = 0.2, v_hi: float = 4.0):
    """Interior phase samples plus a near-grazing stratum (points close to
    the wall with nearly tangential velocities)."""
    xs_b = sample_interior(domain, n_bulk, rng, max_xi=-1e-3)
    dirs = sample_unit_directions(n_bulk, rng)
    sp = np.exp(rng.uniform(np.log(v_lo), np.log(v_hi), size=n_bulk))
    vs_b = dirs * sp[:, None]

    sph = sample_unit_directions(n_graze, rng)
    depth = np.exp(rng.uniform(np.log(1e-4), np.log(3e-2), size=n_graze))
    xs_g = (1.0 - depth)[:, None] * sph * np.array(domain.semi_axes)
    n_hat = domain.normal(xs_g)
    t_raw = sample_unit_directions(n_graze, rng)
    t_hat = t_raw - n_hat * np.einsum("ij,ij->i", t_raw, n_hat)[:, None]
    t_hat /= np.linalg.norm(t_hat, axis=1, keepdims=True)
    psi = rng.uniform(-0.05, 0.05, size=n_graze)
    sp_g = np.exp(rng.uniform(np.log(v_lo), np.log(v_hi), size=n_graze))
    vs_g = (t_hat * np.cos(psi)[:, None] + n_hat * np.sin(psi)[:, None]) * sp_g[:, None]
    return np.vstack([xs_b, xs_g]), np.vstack([vs_b, vs_g])


# ---------------------------------------------------------------------------
# nonlocal-to-local estimate


def _inner_alpha_integral(domain: ConvexDomain, kw: KineticWeight, y: np.ndarray,
                          v: np.ndarray, varrho: float, n_r: int, n_pol: int,
                          n_az: int, r_max: float = 8.0,
                          tube: float = 1e-6) -> float:
    """J(y, v) = int e^{-varrho |v-u|^2} / (|v-u| alpha(y, u)) du in spherical
    coordinates centered at v.

    Nodes inside the thin tube |u . n(y)| < tube around the degenerate plane
    are replaced by the log-integrable closed-form average of 1/alpha_tilde
    across the tube (asinh profile), so the quadrature never divides by a
    vanishing weight.
    """
    r, wr = gauss_legendre(n_r, 0.0, r_max)
    om, wo = sphere_rule(n_pol, n_az)
    u = v[None, None, :] + r[:, None, None] * om[None, :, :]
    w = (wr[:, None] * r[:, None] * np.exp(-varrho * r[:, None] ** 2)) * wo[None, :]
    uf = u.reshape(-1, 3)
    g = domain.grad_xi(y)
    gnorm = float(np.linalg.norm(g))
    n_hat = g / gnorm
    u3 = uf @ n_hat
    at = kw.alpha_tilde(np.broadcast_to(y, uf.shape), uf)
    al = kw.chi(at)
    in_tube = np.abs(u3) * gnorm < tube * np.maximum(np.linalg.norm(uf, axis=1), 1e-30)
    vals = np.empty(uf.shape[0])
    good = ~in_tube & (al > 1e-300)
    vals[good] = 1.0 / al[good]
    if np.any(in_tube):
        hess = domain.hess_xi(y)
        uhu = np.einsum("mi,ij,mj->m", uf[in_tube], hess, uf[in_tube])
        b = np.maximum(-2.0 * float(domain.xi(y)) * uhu, 1e-300)
        h3 = tube * np.maximum(np.linalg.norm(uf[in_tube], axis=1), 1e-30)
        avg = np.arcsinh(gnorm * h3 / np.sqrt(b)) / np.maximum(gnorm * h3, 1e-300)
        vals[in_tube] = np.minimum(avg, 1.0 / np.maximum(al[in_tube], 1e-30))
        # chi caps alpha at one from above; the tube average applies where
        # the cutoff is inactive
        vals[in_tube] = np.where(at[in_tube] < 0.5, avg, vals[in_tube])
    vals[~good & ~in_tube] = 0.0
    return float(w.reshape(-1) @ vals)


def _tau_nodes(tb: float, n_tau: int):
    """Graded quadrature on [0, t_b] with clustering at both endpoints, where
    the log singularities of the inner integral live."""
    edge = min(tb / 4.0, 0.05)
    panels = [(0.0, edge, True), (edge, tb - edge, False), (tb - edge, tb, True)]
    taus, ws = [], []
    for a, b, clustered in panels:
        if b <= a:
            continue
        n = max(4, n_tau // 3)
        x, w = gauss_legendre(n, 0.0, 1.0)
        if clustered:
            # square-root clustering toward the endpoint nearer the wall
            t = a + (b - a) * x**2
            wt = w * 2.0 * x * (b - a)
        else:
            t = a + (b - a) * x
            wt = w * (b - a)
        taus.append(t)
        ws.append(wt)
    return np.concatenate(taus), np.concatenate(ws)


def nonlocal_to_local_check(domain: ConvexDomain, params: KernelParams,
                            n_samples: int = 96, n_levels: int = 3,
                            rate_constant: float | None = None,
                            eps_trunc: float = 0.01, delta_ball: float = 0.05,
                            seed: int = 0) -> LemmaCheck:
    """sup over phase samples of alpha(x, v) * I(x, v), where I is the
    time-and-velocity integral of the kernel against 1/alpha along the
    backward characteristic; finite and refinement-stable, with the
    time-truncated and small-ball variants gaining a factor.
    """
    rng = np.random.default_rng(seed)
    kw = KineticWeight(domain)
    if rate_constant is None:
        rr = np.linspace(0.0, 8.0, 33)
        rate_constant = float(np.min(nu_profile(rr) / np.sqrt(1.0 + rr**2)))
    xs, vs = _phase_samples(domain, (2 * n_samples) // 3, n_samples - (2 * n_samples) // 3, rng)
    tb, _, _, _ = exit_arrays(domain, xs, vs)
    speeds = np.linalg.norm(vs, axis=1)
    bracket = np.sqrt(1.0 + speeds**2)
    alpha0 = kw.alpha(xs, vs)
    keep = alpha0 > 1e-12
    xs, vs, tb, speeds, bracket, alpha0 = (a[keep] for a in
                                           (xs, vs, tb, speeds, bracket, alpha0))

    base = dict(n_r=10, n_pol=8, n_az=8, n_tau=15)
    sups = []
    for lev in range(n_levels):
        scale = 2**lev
        q = dict(n_r=base["n_r"] * scale, n_pol=base["n_pol"] * scale,
                 n_az=base["n_az"], n_tau=base["n_tau"] * scale)
        vals = np.empty(xs.shape[0])
        for i in range(xs.shape[0]):
            taus, tw = _tau_nodes(float(tb[i]), q["n_tau"])
            acc = 0.0
            for t, wgt in zip(taus, tw):
                y = xs[i] - t * vs[i]
                J = _inner_alpha_integral(domain, kw, y, vs[i], params.varrho,
                                          q["n_r"], q["n_pol"], q["n_az"])
                acc += wgt * np.exp(-rate_constant * bracket[i] * t) * J
            vals[i] = acc
        sups.append(float(np.max(vals * alpha0)))

    # epsilon-truncated variant: only the first eps of backward time
    q = dict(n_r=base["n_r"] * 2, n_pol=base["n_pol"] * 2, n_az=base["n_az"],
             n_tau=base["n_tau"])
    vals_eps = np.empty(xs.shape[0])
    vals_delta = np.empty(xs.shape[0])
    om, wo = sphere_rule(10, 8)
    rdelta, wrdelta = gauss_legendre(12, 0.0, delta_ball)
    u_delta = (rdelta[:, None, None] * om[None, :, :]).reshape(-1, 3)
    w_delta = (wrdelta[:, None] * rdelta[:, None] ** 2 * wo[None, :]).reshape(-1)
    for i in range(xs.shape[0]):
        tcap = min(eps_trunc, float(tb[i]))
        x01, w01 = gauss_legendre(10, 0.0, tcap)
        acc = 0.0
        for t, wgt in zip(x01, w01):
            y = xs[i] - t * vs[i]
            J = _inner_alpha_integral(domain, kw, y, vs[i], params.varrho,
                                      q["n_r"], q["n_pol"], q["n_az"])
            acc += wgt * np.exp(-rate_constant * bracket[i] * t) * J
        vals_eps[i] = acc

        taus, tw = _tau_nodes(float(tb[i]), q["n_tau"])
        acc = 0.0
        for t, wgt in zip(taus, tw):
            y = xs[i] - t * vs[i]
            at = kw.alpha_tilde(np.broadcast_to(y, u_delta.shape), u_delta)
            al = np.maximum(kw.chi(at), 1e-30)
            dmu = np.linalg.norm(vs[i][None, :] - u_delta, axis=1)
            integ = np.exp(-params.varrho * dmu**2) / (dmu * al)
            acc += wgt * np.exp(-rate_constant * bracket[i] * t) * float(w_delta @ integ)
        vals_delta[i] = acc

    sup_full = sups[-1]
    sup_eps = float(np.max(vals_eps * alpha0))
    sup_delta = float(np.max(vals_delta * alpha0))
    drift = abs(sups[-1] - sups[-2]) / sups[-1]
    passed = (drift < STABILITY_DRIFT
              and sup_eps <= TRUNCATION_GAIN * sup_full
              and sup_delta <= TRUNCATION_GAIN * sup_full)
    return LemmaCheck(
        lemma_id="nonlocal_to_local", sample_count=int(xs.shape[0]),
        levels=sups, trend="bounded" if drift < STABILITY_DRIFT else "diverging",
        passed=passed,
        details={"drift": drift, "sup_eps": sup_eps, "sup_delta": sup_delta,
                 "eps": eps_trunc, "delta": delta_ball,
                 "rate_constant": rate_constant,
                 "eps_gain": sup_eps / sup_full, "delta_gain": sup_delta / sup_full})


# ---------------------------------------------------------------------------
# change of variables


def _surface_rule(domain: ConvexDomain, n_pol: int, n_az: int):
    """Product quadrature on the boundary with exact area weights."""
    om, wo = sphere_rule(n_pol, n_az)
    axes = np.array(domain.semi_axes)
    pts = om * axes
    scale = float(np.prod(axes)) * np.sqrt(np.sum((om / axes) ** 2, axis=-1))
    return pts, wo * scale


def cov_identity_check(domain: ConvexDomain, g=None, n_surf: tuple[int, int] = (16, 16),
                       n_v: tuple[int, int, int] = (16, 8, 8), n_s: int = 10,
                       v_cap: float = 1.0) -> LemmaCheck:
    """Volume integral of g(y, v) versus its boundary-chord reparametrization.

    The default g is the indicator of |v| <= v_cap, whose volume side is
    |Omega| * (4 pi/3) v_cap^3 exactly.
    """
    if g is None:
        def g(y, v):
            return np.ones(y.shape[:-1])
        vol_exact = (4.0 * np.pi / 3.0) * float(np.prod(domain.semi_axes))
        volume_side = vol_exact * (4.0 * np.pi / 3.0) * v_cap**3
    else:
        volume_side = None

    # volume side by radial x angular x velocity quadrature when needed
    if volume_side is None:
        rr, wr = gauss_legendre(24, 0.0, 1.0)
        om, wo = sphere_rule(16, 16)
        axes = np.array(domain.semi_axes)
        pts = (rr[:, None, None] * om[None, :, :]).reshape(-1, 3) * axes
        wy = (wr[:, None] * rr[:, None] ** 2 * wo[None, :]).reshape(-1) * float(np.prod(axes))
        rv, wrv = gauss_legendre(16, 0.0, v_cap)
        omv, wov = sphere_rule(8, 8)
        vpts = (rv[:, None, None] * omv[None, :, :]).reshape(-1, 3)
        wv = (wrv[:, None] * rv[:, None] ** 2 * wov[None, :]).reshape(-1)
        vals = g(np.repeat(pts, vpts.shape[0], axis=0),
                 np.tile(vpts, (pts.shape[0], 1))).reshape(pts.shape[0], vpts.shape[0])
        volume_side = float(wy @ vals @ wv)

    # boundary side: for each surface node, outgoing velocities and the chord
    spts, sw = _surface_rule(domain, *n_surf)
    normals = domain.normal(spts)
    rv, wrv = gauss_legendre(n_v[0], 0.0, v_cap)
    cc, wc = gauss_legendre(n_v[1], 0.0, 1.0)
    phi = (np.arange(n_v[2]) + 0.5) * 2.0 * np.pi / n_v[2]
    wphi = np.full(n_v[2], 2.0 * np.pi / n_v[2])
    sgl, wsgl = gauss_legendre(n_s, 0.0, 1.0)
    total = 0.0
    for xi_pt, wxi, n_hat in zip(spts, sw, normals):
        t1 = np.zeros(3)
        t1[int(np.argmin(np.abs(n_hat)))] = 1.0
        t1 = t1 - (t1 @ n_hat) * n_hat
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n_hat, t1)
        s_ang = np.sqrt(1.0 - cc**2)
        dirs = (np.einsum("p,a,i->pai", s_ang, np.cos(phi), t1)
                + np.einsum("p,a,i->pai", s_ang, np.sin(phi), t2)
                + np.einsum("p,a,i->pai", cc, np.ones(n_v[2]), n_hat)).reshape(-1, 3)
        wdir = (wc[:, None] * wphi[None, :]).reshape(-1)
        vv = (rv[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        wvv = (wrv[:, None] * rv[:, None] ** 2 * wdir[None, :]).reshape(-1)
        tb, _, _, _ = exit_arrays(domain, np.broadcast_to(xi_pt, vv.shape), vv)
        nv = vv @ n_hat
        ypts = (xi_pt[None, None, :]
                - (tb[:, None] * sgl[None, :])[..., None] * vv[:, None, :])
        gv = g(ypts.reshape(-1, 3),
               np.repeat(vv, n_s, axis=0)).reshape(vv.shape[0], n_s)
        svals = tb * (gv @ wsgl)
        total += wxi * float(wvv @ (svals * nv))
    disc = abs(total - volume_side) / abs(volume_side)
    return LemmaCheck(lemma_id="cov_identity", sample_count=spts.shape[0],
                      levels=[volume_side, total], trend="bounded",
                      passed=disc < 1e-3,
                      details={"relative_discrepancy": disc})


def chord_volume_identity(domain: ConvexDomain, v_dir: np.ndarray,
                          n_surf: tuple[int, int] = (48, 48)) -> float:
    """int_{n.v>0} t_b(x, v) (n(x).v) dS_x for a unit direction; equals the
    domain volume."""
    v_dir = np.asarray(v_dir, dtype=float)
    v_dir = v_dir / np.linalg.norm(v_dir)
    spts, sw = _surface_rule(domain, *n_surf)
    normals = domain.normal(spts)
    nv = normals @ v_dir
    keep = nv > 1e-12
    tb, _, _, _ = exit_arrays(domain, spts[keep], np.broadcast_to(v_dir, spts[keep].shape))
    return float(sw[keep] @ (tb * nv[keep]))


# ---------------------------------------------------------------------------
# W^{1,p} singular integral


def w1p_singular_integral(domain: ConvexDomain, params: KernelParams, p: float,
                          n_levels: int = 12, h0: float = 0.5,
                          n_surf: tuple[int, int] = (12, 12), n_r: int = 32,
                          n_c: int = 24, r_max: float = 14.0,
                          expected: str | None = None) -> LemmaCheck:
    """J(p) = iint w_tilde^{-p}(v) / |n(x_b(x,v)).v|^p dx dv with the grazing
    tube |cos| < h_l removed, evaluated through the boundary-chord
    parametrization and directly; bounded iff p < 3.

    The boundary form collapses the chord integral exactly, because the
    landing point is constant along each chord.
    """
    hs = [h0 * 2.0**(-lev) for lev in range(n_levels)]
    spts, sw = _surface_rule(domain, *n_surf)
    normals = domain.normal(spts)
    rr, wr = gauss_legendre(n_r, 0.0, r_max)
    phi_n = 8
    wphi = 2.0 * np.pi / phi_n
    phis = (np.arange(phi_n) + 0.5) * 2.0 * np.pi / phi_n

    levels = []
    for h in hs:
        # log-clustered cos(theta) nodes on [h, 1]
        s01, w01 = gauss_legendre(n_c, 0.0, 1.0)
        cnodes = np.exp(np.log(h) * (1.0 - s01))
        cw = w01 * cnodes * (-np.log(h))
        total = 0.0
        for xi_pt, wxi, n_hat in zip(spts, sw, normals):
            t1 = np.zeros(3)
            t1[int(np.argmin(np.abs(n_hat)))] = 1.0
            t1 = t1 - (t1 @ n_hat) * n_hat
            t1 /= np.linalg.norm(t1)
            t2 = np.cross(n_hat, t1)
            sang = np.sqrt(1.0 - cnodes**2)
            dirs = (np.einsum("p,a,i->pai", sang, np.cos(phis), t1)
                    + np.einsum("p,a,i->pai", sang, np.sin(phis), t2)
                    + np.einsum("p,a,i->pai", cnodes, np.ones(phi_n), n_hat)).reshape(-1, 3)
            wdir = (cw[:, None] * np.full((1, phi_n), wphi)).reshape(-1)
            tb, _, nb, _ = exit_arrays(domain, np.broadcast_to(xi_pt, dirs.shape), dirs)
            nbv = np.abs(np.einsum("mi,mi->m", nb, dirs))
            nv = dirs @ n_hat
            # radial integral separates: v = r * dir
            wt = np.exp(-p * params.theta_tilde * rr**2)
            rad_w = wr * wt * rr**2
            # integrand: t_b(x, r d)|n.v| / |n_b.v|^p = r^{1-p} t_b(x,d)/r ...
            # with t_b(x, r d) = t_b(x, d)/r and n.v = r (n.d):
            # value = r^{2-p} * t_b(x,d) (n.d) / |n_b.d|^p
            rfac = float(rad_w @ (rr ** (-p)))
            total += wxi * rfac * float(wdir @ (tb * nv / nbv**p))
        levels.append(total)

    trend = ("diverging" if levels[-1] / levels[-2] > W1P_TAIL_RATIO else "bounded")

    # direct evaluation at the coarsest tube for cross-checking (ball only:
    # rotational reduction; other domains use the boundary value itself)
    direct = None
    if domain.kind == "ball":
        direct = _w1p_direct_ball(params, p, hs[0], n_r=n_r, r_max=r_max)
        agree = abs(direct - levels[0]) / max(levels[0], 1e-300)
    else:
        agree = 0.0
    passed = trend == expected if expected is not None else True
    if direct is not None:
        passed = passed and agree < 0.05
    return LemmaCheck(lemma_id=f"w1p_p{p:g}", sample_count=n_levels,
                      levels=levels, trend=trend, passed=passed,
                      details={"p": p, "tube_h": hs, "direct_coarse": direct,
                               "direct_agreement": agree,
                               "tail_ratio": levels[-1] / levels[-2],
                               "last_over_first": levels[-1] / levels[0]})


def _w1p_direct_ball(params: KernelParams, p: float, h: float,
                     n_rho: int = 24, n_gamma: int = 192, n_r: int = 32,
                     r_max: float = 14.0) -> float:
    """Direct phase-space integral reduced by rotational symmetry to
    (radius, ray angle, speed); the grazing tube uses the same cutoff on
    |n(x_b) . v| / |v|."""
    from .geometry import unit_ball

    rho, wrho = gauss_legendre(n_rho, 0.0, 1.0)
    gam, wgam = gauss_legendre(n_gamma, 0.0, np.pi)
    rr, wr = gauss_legendre(n_r, 0.0, r_max)
    dirs = np.stack([np.sin(gam), np.zeros_like(gam), np.cos(gam)], axis=-1)
    dom_ball = unit_ball()
    rad = float(wr @ (np.exp(-p * params.theta_tilde * rr**2) * rr ** (2 - p)))
    total = 0.0
    for rh, wx in zip(rho, wrho):
        X = np.array([0.0, 0.0, rh])
        _, _, nb, _ = exit_arrays(dom_ball, np.broadcast_to(X, dirs.shape), dirs)
        cosb = np.abs(np.einsum("mi,mi->m", nb, dirs))
        keep = cosb > h
        ang = float((wgam[keep] * np.sin(gam[keep])) @ (cosb[keep] ** (-p)))
        total += wx * rh**2 * ang * rad
    return total * 8.0 * np.pi**2


# ---------------------------------------------------------------------------
# exit-time and normal-equivalence bounds


def tb_bound_check(domain: ConvexDomain, n_samples: int = 20000,
                   seed: int = 0) -> LemmaCheck:
    """sup of t_b(x, v) |v|^2 / |n(x_b).v|; equals 2 exactly on the unit ball.

    Stability is measured against the nested half-sample sup."""
    rng = np.random.default_rng(seed)
    n = 2 * n_samples
    xs, vs = _phase_samples(domain, n // 2, n // 4, rng)
    # full chords start on the boundary with outgoing velocities; they attain
    # the supremum (interior starts only see partial chords)
    nb_extra = n - xs.shape[0]
    xb_s = sample_boundary(domain, nb_extra, rng)
    nxs = domain.normal(xb_s)
    vb = sample_unit_directions(nb_extra, rng) * rng.uniform(0.2, 3.0, (nb_extra, 1))
    nv_b = np.einsum("mi,mi->m", nxs, vb)
    flip = nv_b < 0
    vb[flip] -= 2.0 * nv_b[flip, None] * nxs[flip]
    xs = np.vstack([xs, xb_s])
    vs = np.vstack([vs, vb])
    tb, _, nb, _ = exit_arrays(domain, xs, vs)
    nv = np.abs(np.einsum("mi,mi->m", nb, vs))
    keep = nv > 1e-12
    ratio = tb[keep] * np.einsum("mi,mi->m", vs[keep], vs[keep]) / nv[keep]
    sups = [float(np.max(ratio[::2])), float(np.max(ratio))]
    stable = abs(sups[1] - sups[0]) / sups[1] < 0.05
    return LemmaCheck(lemma_id="tb_bound", sample_count=n,
                      levels=sups, trend="bounded", passed=stable,
                      details={"sup_ratio": sups[-1]})


def normal_equivalence_check(domain: ConvexDomain, n_samples: int = 20000,
                             seed: int = 0) -> LemmaCheck:
    """Ratio |n(x).v| / |n(x_b(x,v)).v| over boundary phase points with
    outgoing v, bounded above and below; identically 1 on the ball."""
    rng = np.random.default_rng(seed)
    n = 2 * n_samples
    xs = sample_boundary(domain, n, rng)
    nx = domain.normal(xs)
    vs = sample_unit_directions(n, rng)
    nv = np.einsum("mi,mi->m", nx, vs)
    flip = nv < 0
    vs[flip] = vs[flip] - 2.0 * nv[flip, None] * nx[flip]
    # grazing stratum: shrink the normal component of a fifth of the draws
    m = n // 5
    vs[:m] -= nx[:m] * (np.einsum("mi,mi->m", nx[:m], vs[:m]) * (1.0 - 1e-3))[:, None]
    nv = np.einsum("mi,mi->m", nx, vs)
    keep = nv > 1e-10
    _, _, nb, _ = exit_arrays(domain, xs[keep], vs[keep])
    nbv = np.abs(np.einsum("mi,mi->m", nb, vs[keep]))
    ratio = nv[keep] / np.maximum(nbv, 1e-300)
    sups = [float(np.max(ratio[::2])), float(np.max(ratio))]
    infs = [float(np.min(ratio[::2])), float(np.min(ratio))]
    stable = abs(sups[1] - sups[0]) / sups[1] < 0.05
    return LemmaCheck(lemma_id="normal_equivalence", sample_count=n,
                      levels=sups, trend="bounded",
                      passed=stable and infs[-1] > 0,
                      details={"sup_ratio": sups[-1], "inf_ratio": infs[-1]})


# ---------------------------------------------------------------------------
# second-derivative obstruction


def second_derivative_obstruction(domain: ConvexDomain, params: KernelParams,
                                  x: np.ndarray, v: np.ndarray,
                                  n_levels: int = 12, v_max: float = 10.0,
                                  mode: str = "kernel", seed: int = 0) -> LemmaCheck:
    """D_l = int_{|u|<=V_max, |n(x_b).u| > 2^-l} k(v, u) / |n(x_b).u| du.

    The level increments approach a positive constant (logarithmic
    divergence).  Contrast modes replace 1/|n.u| by the integrable power
    1/|n.u|^{1/2} ("sqrt") or the kernel by a bounded one vanishing on the
    plane ("vanishing"); both converge.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    rec = backward_exit(domain, PhasePoint(x, v))
    n_hat = rec.normal_b
    t1 = np.zeros(3)
    t1[int(np.argmin(np.abs(n_hat)))] = 1.0
    t1 = t1 - (t1 @ n_hat) * n_hat
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n_hat, t1)
    v_par = np.array([v @ t1, v @ t2])
    rho, wrho = gauss_legendre(24, 0.0, v_max + np.linalg.norm(v_par) + 1.0)
    psi = (np.arange(16) + 0.5) * 2.0 * np.pi / 16
    wpsi = 2.0 * np.pi / 16

    def slab(u3: float) -> float:
        """2D integral over the plane n.u = u3, polar around v's footprint."""
        pu = (v_par[None, None, :]
              + rho[:, None, None] * np.stack([np.cos(psi), np.sin(psi)], axis=-1)[None, :, :])
        u = (pu[..., 0, None] * t1 + pu[..., 1, None] * t2 + u3 * n_hat)
        inside = np.einsum("...i,...i->...", u, u) <= v_max**2
        if mode == "vanishing":
            d2 = np.einsum("...i,...i->...", v - u, v - u)
            kv = np.maximum(0.0, 1.0 - d2) * np.minimum(1.0, abs(u3) / 0.1)
        else:
            uf = u.reshape(-1, 3)
            d = np.linalg.norm(v[None, :] - uf, axis=1)
            ok = d > 1e-9
            kv = np.zeros(uf.shape[0])
            kv[ok] = grad_kernel(np.broadcast_to(v, uf[ok].shape), uf[ok], params)
            kv = kv.reshape(u.shape[:-1])
        return float(np.einsum("r,ra->", wrho * rho, np.where(inside, kv, 0.0)) * wpsi)

    def octave(h_hi: float, h_lo: float, n_g: int = 8) -> float:
        u3n, u3w = gauss_legendre(n_g, h_lo, h_hi)
        acc = 0.0
        for s in (-1.0, 1.0):
            for u3, wu in zip(u3n, u3w):
                f = slab(s * u3)
                den = abs(u3) if mode != "sqrt" else np.sqrt(abs(u3))
                acc += wu * f / den
        return acc

    hs = [2.0 ** (-lev) for lev in range(n_levels + 1)]
    base = octave(v_max, hs[0], n_g=16)
    values = [base]
    for lev in range(n_levels):
        values.append(values[-1] + octave(hs[lev], hs[lev + 1]))
    values = values[1:]
    incr = np.diff(np.asarray(values))
    tail = incr[-4:]
    mean_tail = float(np.mean(tail))
    log_signature = bool(mean_tail > 0
                         and np.all(np.abs(tail - mean_tail) <= OBSTRUCTION_BAND * mean_tail))
    settled = abs(values[-1] - values[-2]) / abs(values[-1]) < 0.02
    trend = "diverging" if log_signature and not settled else "bounded"
    expected = "diverging" if mode == "kernel" else "bounded"
    return LemmaCheck(lemma_id=f"second_derivative_obstruction_{mode}",
                      sample_count=n_levels, levels=values, trend=trend,
                      passed=trend == expected,
                      details={"increments": incr.tolist(), "mode": mode,
                               "tail_mean_increment": mean_tail})


# ---------------------------------------------------------------------------
# orchestration


def run_all_checks(domain: ConvexDomain, params: KernelParams, seed: int = 0,
                   threads: int = 1, scale: float = 1.0) -> list[LemmaCheck]:
    """Run every verification job and merge results by lemma id.

    `scale` shrinks sample counts for quick smoke runs; jobs are seeded
    independently so the outcome does not depend on scheduling.
    """
    rng0 = np.random.default_rng(seed)
    x_ob = np.array([0.3, -0.1, 0.2]) * min(domain.semi_axes)
    v_ob = np.array([0.8, 0.5, -0.3])

    def _n(n):
        return max(8, int(round(n * scale)))

    jobs = {
        "nonlocal_to_local": lambda: nonlocal_to_local_check(
            domain, params, n_samples=_n(96), seed=seed + 11),
        "cov_identity": lambda: cov_identity_check(domain),
        "tb_bound": lambda: tb_bound_check(domain, n_samples=_n(20000), seed=seed + 13),
        "normal_equivalence": lambda: normal_equivalence_check(
            domain, n_samples=_n(20000), seed=seed + 17),
        "obstruction_kernel": lambda: second_derivative_obstruction(
            domain, params, x_ob, v_ob, mode="kernel"),
        "obstruction_sqrt": lambda: second_derivative_obstruction(
            domain, params, x_ob, v_ob, mode="sqrt"),
        "obstruction_vanishing": lambda: second_derivative_obstruction(
            domain, params, x_ob, v_ob, mode="vanishing"),
    }
    for p, expect in ((2.0, "bounded"), (2.5, "bounded"), (2.9, "bounded"),
                      (3.2, "diverging"), (3.5, "diverging")):
        jobs[f"w1p_p{p:g}"] = (lambda p=p, expect=expect: w1p_singular_integral(
            domain, params, p, expected=expect))

    results: dict[str, LemmaCheck] = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {name: pool.submit(fn) for name, fn in jobs.items()}
            for name, fut in futs.items():
                results[name] = fut.result()
    else:
        for name, fn in jobs.items():
            results[name] = fn()
    return [results[k] for k in sorted(results)]
