"""Compiled inner loops shared by the grid, solver, filter and rollout code.

Everything here works on plain arrays so that numba can compile it once and
the Python layer stays a thin wrapper.  Model flows, interpolation and the
failure function each have exactly one implementation, used both by the
vectorised Python API and by the hot loops.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

INTEGRATOR_1D = 0
DOUBLE_INTEGRATOR = 1
DUBINS_3D = 2
BICYCLE_3D = 3

ENV_CIRCLES = 0
ENV_TRACK = 1

PENALTY_NONE = 0
PENALTY_OBSTACLE = 1
PENALTY_BRT = 2
PENALTY_CBF = 3

COST_GOAL = 0
COST_RACETRACK = 1

POLICY_ADVERSARIAL = 0
POLICY_CONSTANT = 1

_TWO_PI = 2.0 * math.pi

_jit = njit(cache=True, nogil=True, error_model="numpy")
_inline = njit(cache=True, nogil=True, error_model="numpy", inline="always")


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

@_inline
def flow(code, params, x, u, d, out):
    if code == INTEGRATOR_1D:
        out[0] = u[0]
    elif code == DOUBLE_INTEGRATOR:
        out[0] = x[1]
        out[1] = u[0]
    elif code == DUBINS_3D:
        v = params[0]
        out[0] = v * math.cos(x[2]) + d[0]
        out[1] = v * math.sin(x[2]) + d[1]
        out[2] = u[0]
    else:
        wheelbase = params[0]
        out[0] = u[0] * math.cos(x[2]) + d[0]
        out[1] = u[0] * math.sin(x[2]) + d[1]
        out[2] = u[0] * math.tan(u[1]) / wheelbase


@_inline
def wrap_angle(a):
    # [-pi, pi)
    return a - _TWO_PI * math.floor((a + math.pi) / _TWO_PI)


@_inline
def rk4(code, params, x, u, d, dt, out, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    flow(code, params, x, u, d, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    flow(code, params, tmp, u, d, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    flow(code, params, tmp, u, d, k3)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    flow(code, params, tmp, u, d, k4)
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@_inline
def step_state(code, params, periodic, x, u, d, dt, out, scratch):
    """One RK4 step followed by angle wrapping of the periodic components."""
    rk4(code, params, x, u, d, dt, out, scratch[0], scratch[1], scratch[2],
        scratch[3], scratch[4])
    for i in range(out.shape[0]):
        if periodic[i]:
            out[i] = wrap_angle(out[i])


@_jit
def flow_batch(code, params, xs, us, ds):
    out = np.empty_like(xs)
    for k in range(xs.shape[0]):
        flow(code, params, xs[k], us[k], ds[k], out[k])
    return out


@_jit
def step_batch(code, params, periodic, xs, us, ds, dt):
    out = np.empty_like(xs)
    scratch = np.empty((5, xs.shape[1]))
    for k in range(xs.shape[0]):
        step_state(code, params, periodic, xs[k], us[k], ds[k], dt, out[k], scratch)
    return out


@_inline
def _corner(bounds, active, n_active, c, out):
    for i in range(bounds.shape[0]):
        out[i] = bounds[i, 0]
    for a in range(n_active):
        i = active[a]
        if (c >> a) & 1:
            out[i] = bounds[i, 1]


@_jit
def _active_channels(bounds):
    active = np.empty(bounds.shape[0], dtype=np.int64)
    n = 0
    for i in range(bounds.shape[0]):
        if bounds[i, 1] > bounds[i, 0]:
            active[n] = i
            n += 1
    return active, n


@_inline
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@_inline
def _inner_extremum(code, params, x, p, u, dbounds, dact, nd, maximize_u, d, f, dbest):
    """Disturbance response to a fixed control: min_d (maximize_u) or max_d."""
    best = 0.0
    for c in range(1 << nd):
        _corner(dbounds, dact, nd, c, d)
        flow(code, params, x, u, d, f)
        v = _dot(p, f)
        if c == 0 or (maximize_u and v < best) or ((not maximize_u) and v > best):
            best = v
            for i in range(d.shape[0]):
                dbest[i] = d[i]
    return best


@_inline
def hamiltonian_point(code, params, x, p, ubounds, dbounds, uact, nu, dact, nd,
                      maximize_u, u_out, d_out, u, d, f, dtmp):
    """Extremise p.f over box controls/disturbances by corner enumeration.

    maximize_u=True gives max_u min_d (safe control); False gives min_u max_d.
    Every supported model is affine in each channel separately, so the
    extremum sits on a box corner.  A channel whose two endpoints tie exactly
    is set to its midpoint.
    """
    m = ubounds.shape[0]
    best = 0.0
    best_c = 0
    for c in range(1 << nu):
        _corner(ubounds, uact, nu, c, u)
        v = _inner_extremum(code, params, x, p, u, dbounds, dact, nd, maximize_u, d, f, dtmp)
        if c == 0 or (maximize_u and v > best) or ((not maximize_u) and v < best):
            best = v
            best_c = c
    _corner(ubounds, uact, nu, best_c, u_out)
    for a in range(nu):
        _corner(ubounds, uact, nu, best_c ^ (1 << a), u)
        v = _inner_extremum(code, params, x, p, u, dbounds, dact, nd, maximize_u, d, f, dtmp)
        if v == best:
            i = uact[a]
            u_out[i] = 0.5 * (ubounds[i, 0] + ubounds[i, 1])
    for i in range(m):
        u[i] = u_out[i]
    best = _inner_extremum(code, params, x, p, u, dbounds, dact, nd, maximize_u, d, f, d_out)
    return best


@_jit
def hamiltonian_batch(code, params, xs, ps, ubounds, dbounds, maximize_u):
    npts = xs.shape[0]
    m = ubounds.shape[0]
    q = dbounds.shape[0]
    n = xs.shape[1]
    us = np.empty((npts, m))
    ds = np.empty((npts, q))
    vals = np.empty(npts)
    u = np.empty(m)
    d = np.empty(q)
    f = np.empty(n)
    dtmp = np.empty(q)
    uact, nu = _active_channels(ubounds)
    dact, nd = _active_channels(dbounds)
    for k in range(npts):
        vals[k] = hamiltonian_point(code, params, xs[k], ps[k], ubounds, dbounds,
                                    uact, nu, dact, nd, maximize_u, us[k], ds[k],
                                    u, d, f, dtmp)
    return us, ds, vals


@_jit
def max_abs_flow_batch(code, params, xs, ubounds, dbounds):
    """Per-point max over control/disturbance corners of |f_i| and of ||f||."""
    npts, n = xs.shape
    uact, nu = _active_channels(ubounds)
    dact, nd = _active_channels(dbounds)
    u = np.empty(ubounds.shape[0])
    d = np.empty(dbounds.shape[0])
    f = np.empty(n)
    comp = np.zeros((npts, n))
    norm = np.zeros(npts)
    for k in range(npts):
        for cu in range(1 << nu):
            _corner(ubounds, uact, nu, cu, u)
            for cd in range(1 << nd):
                _corner(dbounds, dact, nd, cd, d)
                flow(code, params, xs[k], u, d, f)
                s = 0.0
                for i in range(n):
                    a = abs(f[i])
                    if a > comp[k, i]:
                        comp[k, i] = a
                    s += f[i] * f[i]
                s = math.sqrt(s)
                if s > norm[k]:
                    norm[k] = s
    return comp, norm


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@_inline
def interp_point(data, lo, h, counts, periodic, strides, x, out, iscratch, fr):
    """Multilinear interpolation of every channel of ``data`` (C, N) at x.

    Non-periodic coordinates outside the grid are clamped; the return value
    flags whether that happened.  ``iscratch`` (2, n) and ``fr`` (n,) are
    caller-owned work arrays.
    """
    n = lo.shape[0]
    nch = data.shape[0]
    i0 = iscratch[0]
    i1 = iscratch[1]
    clamped = False
    for k in range(n):
        t = (x[k] - lo[k]) / h[k]
        cnt = counts[k]
        if periodic[k]:
            t = t - cnt * math.floor(t / cnt)
            a = int(math.floor(t))
            if a >= cnt:
                a = cnt - 1
            fr[k] = t - a
            i0[k] = a
            i1[k] = (a + 1) % cnt
        else:
            if t < 0.0:
                t = 0.0
                clamped = True
            elif t > cnt - 1:
                t = cnt - 1.0
                clamped = True
            a = int(math.floor(t))
            if a > cnt - 2:
                a = cnt - 2
            fr[k] = t - a
            i0[k] = a
            i1[k] = a + 1
    for c in range(nch):
        out[c] = 0.0
    for corner in range(1 << n):
        w = 1.0
        idx = 0
        for k in range(n):
            if (corner >> k) & 1:
                w *= fr[k]
                idx += i1[k] * strides[k]
            else:
                w *= 1.0 - fr[k]
                idx += i0[k] * strides[k]
        if w != 0.0:
            for c in range(nch):
                out[c] += w * data[c, idx]
    return clamped


@_jit
def interp_batch(data, lo, h, counts, periodic, strides, xs):
    out = np.empty((xs.shape[0], data.shape[0]))
    flags = np.empty(xs.shape[0], dtype=np.bool_)
    iscratch = np.empty((2, lo.shape[0]), dtype=np.int64)
    fr = np.empty(lo.shape[0])
    for k in range(xs.shape[0]):
        flags[k] = interp_point(data, lo, h, counts, periodic, strides, xs[k], out[k],
                                iscratch, fr)
    return out, flags


# --------------------------------------------------------------------------
# failure function
# --------------------------------------------------------------------------

@_inline
def _segment_distance(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    ll = ex * ex + ey * ey
    t = 0.0
    if ll > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = px - (ax + t * ex)
    dy = py - (ay + t * ey)
    return math.sqrt(dx * dx + dy * dy)


@_inline
def failure_value(kind, circles, box, boundary, segments, half_width, x):
    px = x[0]
    py = x[1]
    if kind == ENV_TRACK:
        best = np.inf
        for s in range(segments.shape[0]):
            dist = _segment_distance(px, py, segments[s, 0], segments[s, 1],
                                     segments[s, 2], segments[s, 3])
            if dist < best:
                best = dist
        return half_width - best
    best = np.inf
    for c in range(circles.shape[0]):
        dx = px - circles[c, 0]
        dy = py - circles[c, 1]
        v = math.sqrt(dx * dx + dy * dy) - circles[c, 2]
        if v < best:
            best = v
    if boundary:
        # signed distance to the box, positive inside
        ox = max(box[0] - px, px - box[2])
        oy = max(box[1] - py, py - box[3])
        if ox <= 0.0 and oy <= 0.0:
            v = -max(ox, oy)
        else:
            v = -math.sqrt(max(ox, 0.0) ** 2 + max(oy, 0.0) ** 2)
        if v < best:
            best = v
    return best


@_jit
def failure_batch(kind, circles, box, boundary, segments, half_width, xs):
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        out[k] = failure_value(kind, circles, box, boundary, segments, half_width, xs[k])
    return out


# --------------------------------------------------------------------------
# Lax-Friedrichs sweep
# --------------------------------------------------------------------------

@_inline
def _node_value(v, node, ik, off, cnt, st, per):
    """v at index ik + off along one axis; linear extrapolation past the ends."""
    j = ik + off
    if per:
        j = j % cnt
        return v[node + (j - ik) * st]
    if j < 0:
        v0 = v[node - ik * st]
        return v0 + j * (v[node + (1 - ik) * st] - v0)
    if j > cnt - 1:
        vl = v[node + (cnt - 1 - ik) * st]
        return vl + (j - cnt + 1) * (vl - v[node + (cnt - 2 - ik) * st])
    return v[node + off * st]


@_inline
def _smaller(a, b):
    return a if abs(a) <= abs(b) else b


@_jit
def lf_rhs(code, params, ubounds, dbounds, v, lo, h, counts, periodic, strides, alpha,
           order, out):
    """Lax-Friedrichs rate H(x, p_avg) + sum_i a_i (p_i+ - p_i-) / 2 at every node.

    ``order`` 1 uses one-sided differences, 2 the ENO2 reconstruction.
    """
    n = lo.shape[0]
    total = v.shape[0]
    x = np.empty(n)
    p = np.empty(n)
    m = ubounds.shape[0]
    q = dbounds.shape[0]
    u_out = np.empty(m)
    d_out = np.empty(q)
    u = np.empty(m)
    d = np.empty(q)
    f = np.empty(n)
    dtmp = np.empty(q)
    uact, nu = _active_channels(ubounds)
    dact, nd = _active_channels(dbounds)
    for node in range(total):
        rem = node
        diss = 0.0
        vc = v[node]
        for k in range(n):
            ik = rem // strides[k]
            rem -= ik * strides[k]
            x[k] = lo[k] + ik * h[k]
            cnt = counts[k]
            st = strides[k]
            per = periodic[k]
            vm1 = _node_value(v, node, ik, -1, cnt, st, per)
            vp1 = _node_value(v, node, ik, 1, cnt, st, per)
            fwd = (vp1 - vc) / h[k]
            bwd = (vc - vm1) / h[k]
            if order == 2:
                vm2 = _node_value(v, node, ik, -2, cnt, st, per)
                vp2 = _node_value(v, node, ik, 2, cnt, st, per)
                d2m = vm2 - 2.0 * vm1 + vc
                d20 = vm1 - 2.0 * vc + vp1
                d2p = vc - 2.0 * vp1 + vp2
                bwd += 0.5 * _smaller(d2m, d20) / h[k]
                fwd -= 0.5 * _smaller(d20, d2p) / h[k]
            p[k] = 0.5 * (fwd + bwd)
            diss += 0.5 * alpha[k] * (fwd - bwd)
        ham = hamiltonian_point(code, params, x, p, ubounds, dbounds, uact, nu, dact, nd,
                                True, u_out, d_out, u, d, f, dtmp)
        out[node] = ham + diss


@_jit
def tube_update(v, lvals, cand, vout):
    """vout = min(v, l, cand); returns max |vout - v|."""
    resid = 0.0
    for i in range(v.shape[0]):
        c = cand[i]
        if lvals[i] < c:
            c = lvals[i]
        if v[i] < c:
            c = v[i]
        vout[i] = c
        ch = abs(c - v[i])
        if ch > resid:
            resid = ch
    return resid


# --------------------------------------------------------------------------
# rollouts
# --------------------------------------------------------------------------

@_inline
def _clip(u, ubounds, out):
    for i in range(u.shape[0]):
        a = u[i]
        if a < ubounds[i, 0]:
            a = ubounds[i, 0]
        elif a > ubounds[i, 1]:
            a = ubounds[i, 1]
        out[i] = a


@_inline
def state_cost(cost_kind, goal, qdiag, periodic, x, env_l, track_half_width, kc):
    if cost_kind == COST_RACETRACK:
        return kc * (track_half_width - env_l)
    s = 0.0
    for i in range(x.shape[0]):
        e = x[i] - goal[i]
        if periodic[i]:
            e = wrap_angle(e)
        s += qdiag[i] * e * e
    return s


@_inline
def control_cost(cost_kind, rweights, vmax_ref, u):
    if cost_kind == COST_RACETRACK:
        e = vmax_ref - u[0]
        return e * e
    s = 0.0
    for i in range(u.shape[0]):
        s += rweights[i] * u[i] * u[i]
    return s


@_jit
def rollout_batch(code, params, periodic, ubounds, dbounds, x0, nominal, deltas, dt,
                  vdata, glo, gh, gcount, gper, gstrides,
                  env_kind, circles, box, boundary, segments, half_width,
                  cost_kind, goal, qdiag, rweights, vmax_ref, kc,
                  penalty_kind, penalty, gamma, filter_on, eps_switch,
                  states, controls, dper, costs, mask, min_l, min_v, penalized):
    """Propagate K perturbed control sequences with the shared variant hooks.

    ``filter_on`` applies the least-restrictive filter at every step (safe
    rollouts); ``penalty_kind`` selects the safety term added to the cost.
    Disturbances are zero during propagation.
    """
    K, H, m = deltas.shape
    n = x0.shape[0]
    q = dbounds.shape[0]
    need_v = filter_on or penalty_kind == PENALTY_BRT or penalty_kind == PENALTY_CBF
    nch = vdata.shape[0]
    vals = np.empty(nch)
    iscr = np.empty((2, glo.shape[0]), dtype=np.int64)
    frs = np.empty(glo.shape[0])
    scratch = np.empty((5, n))
    uraw = np.empty(m)
    ucur = np.empty(m)
    zero_d = np.zeros(q)
    u_out = np.empty(m)
    d_out = np.empty(q)
    utmp = np.empty(m)
    dtmp = np.empty(q)
    dtmp2 = np.empty(q)
    f = np.empty(n)
    p = np.empty(n)
    uact, nu = _active_channels(ubounds)
    dact, nd = _active_channels(dbounds)
    for k in range(K):
        for i in range(n):
            states[k, 0, i] = x0[i]
        total = 0.0
        pen_hit = False
        lmin = np.inf
        vmin = np.inf
        vprev = 0.0
        if need_v:
            interp_point(vdata, glo, gh, gcount, gper, gstrides, x0, vals, iscr, frs)
            vprev = vals[0]
        for j in range(H + 1):
            x = states[k, j]
            lx = failure_value(env_kind, circles, box, boundary, segments, half_width, x)
            if lx < lmin:
                lmin = lx
            vx = vprev
            if vx < vmin and need_v:
                vmin = vx
            sc = state_cost(cost_kind, goal, qdiag, periodic, x, lx, half_width, kc)
            pen = 0.0
            if penalty_kind == PENALTY_OBSTACLE and lx <= 0.0:
                pen = penalty
            elif penalty_kind == PENALTY_BRT and vx <= 0.0:
                pen = penalty
            if j == H:
                total += sc + pen
                if pen > 0.0:
                    pen_hit = True
                break
            for i in range(m):
                uraw[i] = nominal[j, i] + deltas[k, j, i]
            _clip(uraw, ubounds, ucur)
            active = False
            if filter_on and vx <= eps_switch:
                if nch > 1:
                    interp_point(vdata, glo, gh, gcount, gper, gstrides, x, vals, iscr, frs)
                    for i in range(n):
                        p[i] = vals[1 + i]
                else:
                    for i in range(n):
                        p[i] = 0.0
                hamiltonian_point(code, params, x, p, ubounds, dbounds, uact, nu, dact, nd,
                                  True, u_out, d_out, utmp, dtmp, f, dtmp2)
                for i in range(m):
                    ucur[i] = u_out[i]
                active = True
            mask[k, j] = active
            for i in range(m):
                controls[k, j, i] = ucur[i]
                dper[k, j, i] = ucur[i] - nominal[j, i]
            total += sc + control_cost(cost_kind, rweights, vmax_ref, ucur) + pen
            step_state(code, params, periodic, x, ucur, zero_d, dt, states[k, j + 1], scratch)
            if need_v:
                interp_point(vdata, glo, gh, gcount, gper, gstrides, states[k, j + 1], vals,
                             iscr, frs)
                vnext = vals[0]
                if penalty_kind == PENALTY_CBF:
                    viol = (1.0 - gamma) * vx - vnext
                    if viol > 0.0:
                        total += penalty * viol
                        pen_hit = True
                vprev = vnext
            if pen > 0.0:
                pen_hit = True
        costs[k] = total
        min_l[k] = lmin
        min_v[k] = vmin
        penalized[k] = pen_hit


# --------------------------------------------------------------------------
# closed-loop filtered simulation
# --------------------------------------------------------------------------

@_jit
def filtered_closed_loop(code, params, periodic, ubounds, dbounds, x0s, policy, u_const,
                         worst_case_d, dt, steps, vdata, glo, gh, gcount, gper, gstrides,
                         env_kind, circles, box, boundary, segments, half_width,
                         eps_switch, filter_on):
    """Simulate many closed loops under a nominal policy passed through the LRF.

    ``policy`` POLICY_ADVERSARIAL uses the negated optimal safe control as the
    nominal (clamped); POLICY_CONSTANT uses ``u_const``.  With
    ``worst_case_d`` the disturbance minimising dV/dt is injected.  Returns the
    minimum of l along each trajectory and the number of filter activations.
    """
    B, n = x0s.shape
    m = ubounds.shape[0]
    q = dbounds.shape[0]
    nch = vdata.shape[0]
    vals = np.empty(nch)
    iscr = np.empty((2, glo.shape[0]), dtype=np.int64)
    frs = np.empty(glo.shape[0])
    scratch = np.empty((5, n))
    x = np.empty(n)
    xn = np.empty(n)
    p = np.empty(n)
    u_safe = np.empty(m)
    d_worst = np.empty(q)
    u_nom = np.empty(m)
    utmp = np.empty(m)
    dtmp = np.empty(q)
    dtmp2 = np.empty(q)
    f = np.empty(n)
    d = np.zeros(q)
    min_l = np.empty(B)
    activations = np.zeros(B, dtype=np.int64)
    uact, nu = _active_channels(ubounds)
    dact, nd = _active_channels(dbounds)
    for b in range(B):
        for i in range(n):
            x[i] = x0s[b, i]
        lmin = failure_value(env_kind, circles, box, boundary, segments, half_width, x)
        for s in range(steps):
            interp_point(vdata, glo, gh, gcount, gper, gstrides, x, vals, iscr, frs)
            for i in range(n):
                p[i] = vals[1 + i] if nch > 1 else 0.0
            hamiltonian_point(code, params, x, p, ubounds, dbounds, uact, nu, dact, nd,
                              True, u_safe, d_worst, utmp, dtmp, f, dtmp2)
            if policy == POLICY_ADVERSARIAL:
                for i in range(m):
                    u_nom[i] = -u_safe[i]
                _clip(u_nom, ubounds, u_nom)
            else:
                _clip(u_const, ubounds, u_nom)
            if filter_on and vals[0] <= eps_switch:
                for i in range(m):
                    u_nom[i] = u_safe[i]
                activations[b] += 1
            for i in range(q):
                d[i] = d_worst[i] if worst_case_d else 0.0
            step_state(code, params, periodic, x, u_nom, d, dt, xn, scratch)
            for i in range(n):
                x[i] = xn[i]
            lx = failure_value(env_kind, circles, box, boundary, segments, half_width, x)
            if lx < lmin:
                lmin = lx
        min_l[b] = lmin
    return min_l, activations
