"""Compiled right-hand side and RK4 loop for a whole network.

Everything here works on a flat state vector ``y`` and a tuple ``net`` of
packed arrays built by ``simulation.build_network``. Layout of ``y``::

    x_m                                   n
    per agent i (block size SA):
        x                                 n
        K_m                               n*p
        Theta_i                           l*p
        K_p                               p*p
        per in-neighbor slot k (size SE):
            K_ij                          n*p
            K_rij                         p*p   (leader: K_r)
            Theta_j                       l*p
            e_p                           n

Context index ``N`` denotes the reference model (the leader's only "neighbor").
"""

import math

import numpy as np
from numba import njit

RL_ONLY, DMRAC, DMRAC_LINEAR, DMSAC, NO_ANTIWINDUP = 0, 1, 2, 3, 4

# basis codes; x_k is encoded as X_BASE + k (0-based)
B_ONE, B_SIN_T, B_COS_T, B_SIN_X1, B_COS_X1, X_BASE = 0, 1, 2, 3, 4, 10

# uncertainty kinds
U_NONE, U_SINUSOID, U_BASIS, U_TABLE = 0, 1, 2, 3


@njit(cache=True)
def block_sizes(n, p, l, dmax):
    se = n * p + p * p + l * p + n
    sa = n + n * p + l * p + p * p + dmax * se
    return se, sa


@njit(cache=True)
def _basis(code, x, t):
    if code == B_ONE:
        return 1.0
    if code == B_SIN_T:
        return math.sin(t)
    if code == B_COS_T:
        return math.cos(t)
    if code == B_SIN_X1:
        return math.sin(x[0])
    if code == B_COS_X1:
        return math.cos(x[0])
    return x[code - X_BASE]


@njit(cache=True)
def _sigma(code, x, out):
    for a in range(x.shape[0]):
        out[a] = x[a]
    if code == 1:
        out[0] = math.sin(x[0])


@njit(cache=True)
def _policy(kind, gain, x_set, u_ff, par, sched, x, t, out):
    if kind == 0:
        for q in range(out.shape[0]):
            acc = 0.0
            for a in range(x.shape[0]):
                acc += gain[q, a] * (x[a] - x_set[a])
            out[q] = acc + u_ff[q]
    else:
        k1, k2, mass, length, damping, gravity, theta_d = par[0], par[1], par[2], par[3], par[4], par[5], par[6]
        for s in range(sched.shape[0]):
            if sched[s, 0] <= t:
                theta_d = sched[s, 1]
            else:
                break
        inertia = mass * length**2
        v = -k1 * (x[0] - theta_d) - k2 * x[1]
        out[0] = inertia * v - mass * gravity * length * math.sin(x[0]) + damping * x[1]


@njit(cache=True)
def _disturbance(i, x, t, kind, par, theta, bcodes, table, hold, out):
    p = out.shape[0]
    k = kind[i]
    if k == U_NONE:
        for q in range(p):
            out[q] = 0.0
    elif k == U_SINUSOID:
        for q in range(p):
            out[q] = par[i, 0] * math.sin(par[i, 1] * t)
    elif k == U_BASIS:
        for q in range(p):
            acc = 0.0
            for r in range(bcodes.shape[1]):
                if bcodes[i, r] >= 0:
                    acc += theta[i, r, q] * _basis(bcodes[i, r], x, t)
            out[q] = acc
    else:
        slot = int(t // hold[i])
        if slot > table.shape[1] - 1:
            slot = table.shape[1] - 1
        for q in range(p):
            out[q] = table[i, slot, q]


@njit(cache=True)
def _acc_law(dy, base, gamma, s, r, sign):
    """dy[block] += sign * (gamma @ s) r^T for a rows x p block stored row-major."""
    rows = gamma.shape[0]
    p = r.shape[0]
    for a in range(rows):
        gs = 0.0
        for b in range(rows):
            gs += gamma[a, b] * s[b]
        for q in range(p):
            dy[base + a * p + q] += sign * gs * r[q]


@njit(cache=True)
def _acc_apply(u, y, base, rows, v, sign):
    """u += sign * G^T v for the rows x p gain G stored in y at base."""
    p = u.shape[0]
    for q in range(p):
        acc = 0.0
        for a in range(rows):
            acc += y[base + a * p + q] * v[a]
        u[q] += sign * acc


@njit(cache=True)
def rhs(t, y, dy, net, u_out, usat_out):
    (dims, order, deg, nbr, A, B, lam, psi, unc_kind, unc_par, unc_theta, unc_basis, unc_table, unc_hold,
     dist_row, A_m, B_m, pol_kind, pol_K, pol_xset, pol_uff, pol_par, sched, basis, AH, P, Z, Ups, bsc,
     Gm, Gr, Gij, Gphi, Gth, Gp, umax) = net
    N, n, p, l, dmax, mode = dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]
    se, sa = block_sizes(n, p, l, dmax)
    adaptive = mode != RL_ONLY
    linear = mode == DMRAC_LINEAR
    sat = mode == DMSAC or mode == NO_ANTIWINDUP
    aw = mode == DMSAC

    for k in range(dy.shape[0]):
        dy[k] = 0.0

    sig = np.empty((N + 1, n))
    phi = np.empty((N + 1, l))
    xs = np.empty((N + 1, n))
    for a in range(n):
        xs[N, a] = y[a]
    _sigma(psi[N], xs[N], sig[N])
    for i in range(N):
        ab = n + i * sa
        for a in range(n):
            xs[i, a] = y[ab + a]
        _sigma(psi[i], xs[i], sig[i])
        for c in range(l):
            phi[i, c] = _basis(basis[c], xs[i], t)

    # reference model
    _policy(pol_kind[0], pol_K, pol_xset, pol_uff, pol_par, sched, xs[N], t, u_out[N])
    for q in range(p):
        usat_out[N, q] = u_out[N, q]
    for a in range(n):
        acc = 0.0
        for b in range(n):
            acc += A_m[a, b] * sig[N, b]
        for q in range(p):
            acc += B_m[a, q] * u_out[N, q]
        dy[a] = acc

    e = np.empty((dmax, n))
    xi = np.empty((dmax, p))
    Xi = np.empty(n)
    ds = np.empty(n)
    eu = np.empty(n)
    pe = np.empty(n)
    r = np.empty(p)
    du = np.zeros(p)
    w = np.empty(p)
    u = np.empty(p)

    for idx in range(N):
        i = order[idx]
        ab = n + i * sa
        o_km = ab + n
        o_thi = o_km + n * p
        o_kp = o_thi + l * p
        o_slots = o_kp + p * p
        leader = nbr[i, 0] == N
        si = xs[i] if linear else sig[i]

        if not adaptive:
            _policy(pol_kind[0], pol_K, pol_xset, pol_uff, pol_par, sched, xs[i], t, u)
        else:
            for a in range(n):
                Xi[a] = si[a] if leader else 0.0
            for k in range(deg[i]):
                j = nbr[i, k]
                sj = xs[j] if linear else sig[j]
                for a in range(n):
                    e[k, a] = xs[i, a] - xs[j, a]
                    ds[a] = si[a] - sj[a]
                    if not leader:
                        Xi[a] += ds[a]
                for q in range(p):
                    zt = 0.0
                    ut = 0.0
                    for a in range(n):
                        zt += Z[j, a, q] * ds[a]
                        ut += Ups[j, a, q] * e[k, a]
                    xi[k, q] = usat_out[j, q] - bsc[j] * zt + bsc[j] * ut

            for q in range(p):
                u[q] = 0.0
            _acc_apply(u, y, o_km, n, Xi, 1.0)
            for k in range(deg[i]):
                j = nbr[i, k]
                sb = o_slots + k * se
                _acc_apply(u, y, sb + n * p, p, xi[k], 1.0)
                if not leader:
                    sj = xs[j] if linear else sig[j]
                    _acc_apply(u, y, sb, n, sj, 1.0)
                    if not linear:
                        _acc_apply(u, y, sb + n * p + p * p, l, phi[j], 1.0)
            if not linear:
                _acc_apply(u, y, o_thi, l, phi[i], -1.0)

        for q in range(p):
            u_out[i, q] = u[q]
            if sat:
                v = u[q]
                if v > umax[q]:
                    v = umax[q]
                elif v < -umax[q]:
                    v = -umax[q]
                usat_out[i, q] = v
                du[q] = u[q] - v
            else:
                usat_out[i, q] = u[q]
                du[q] = 0.0

        if adaptive:
            for k in range(deg[i]):
                j = nbr[i, k]
                sb = o_slots + k * se
                o_ep = sb + n * p + p * p + l * p
                for a in range(n):
                    eu[a] = e[k, a] - y[o_ep + a] if aw else e[k, a]
                for a in range(n):
                    acc = 0.0
                    for b in range(n):
                        acc += P[j, a, b] * eu[b]
                    pe[a] = acc
                for q in range(p):
                    acc = 0.0
                    for a in range(n):
                        acc += B[i, a, q] * pe[a]
                    r[q] = acc
                _acc_law(dy, o_km, Gm, Xi, r, -1.0)
                _acc_law(dy, sb + n * p, Gr, xi[k], r, -1.0)
                if not leader:
                    sj = xs[j] if linear else sig[j]
                    _acc_law(dy, sb, Gij, sj, r, -1.0)
                    if not linear:
                        _acc_law(dy, sb + n * p + p * p, Gphi, phi[j], r, -1.0)
                if not linear:
                    _acc_law(dy, o_thi, Gth, phi[i], r, 1.0)
                if aw:
                    _acc_law(dy, o_kp, Gp, du, r, 1.0)
                    for a in range(n):
                        acc = 0.0
                        for b in range(n):
                            acc += AH[j, a, b] * y[o_ep + b]
                        for q in range(p):
                            kd = 0.0
                            for c in range(p):
                                kd += y[o_kp + c * p + q] * du[c]
                            acc += B[i, a, q] * kd
                        dy[o_ep + a] = acc

        # plant
        _disturbance(i, xs[i], t, unc_kind, unc_par, unc_theta, unc_basis, unc_table, unc_hold, w)
        row = dist_row[i]
        for a in range(n):
            acc = 0.0
            for b in range(n):
                acc += A[i, a, b] * sig[i, b]
            for q in range(p):
                drive = usat_out[i, q] if row >= 0 else usat_out[i, q] + w[q]
                acc += B[i, a, q] * lam[i, q] * drive
            dy[ab + a] = acc
        if row >= 0:
            for q in range(p):
                dy[ab + row] += w[q]


@njit(cache=True)
def _trace_term(y, ys, base, rows, p, ginv, lam, weighted):
    tot = 0.0
    for q in range(p):
        for a in range(rows):
            da = y[base + a * p + q] - ys[base + a * p + q]
            if da == 0.0:
                continue
            acc = 0.0
            for b in range(rows):
                acc += ginv[a, b] * (y[base + b * p + q] - ys[base + b * p + q])
            tot += (lam[q] if weighted else 1.0) * da * acc
    return tot


@njit(cache=True)
def monitor(y, ys, net, ginv, v_out, err_out, eloc_out):
    """Per-agent Lyapunov value, error to the reference and local error norm."""
    (dims, order, deg, nbr, A, B, lam, psi, unc_kind, unc_par, unc_theta, unc_basis, unc_table, unc_hold,
     dist_row, A_m, B_m, pol_kind, pol_K, pol_xset, pol_uff, pol_par, sched, basis, AH, P, Z, Ups, bsc,
     Gm, Gr, Gij, Gphi, Gth, Gp, umax) = net
    gm_i, gr_i, gij_i, gphi_i, gth_i, gp_i = ginv
    N, n, p, l, dmax, mode = dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]
    se, sa = block_sizes(n, p, l, dmax)
    adaptive = mode != RL_ONLY
    linear = mode == DMRAC_LINEAR
    aw = mode == DMSAC
    eu = np.empty(n)
    for i in range(N):
        ab = n + i * sa
        o_km = ab + n
        o_thi = o_km + n * p
        o_kp = o_thi + l * p
        o_slots = o_kp + p * p
        leader = nbr[i, 0] == N
        dm = 0.0
        for a in range(n):
            dm += (y[ab + a] - y[a]) ** 2
        err_out[i] = math.sqrt(dm)
        v = 0.0
        eloc = 0.0
        for k in range(deg[i]):
            j = nbr[i, k]
            jb = 0 if j == N else n + j * sa
            sb = o_slots + k * se
            o_ep = sb + n * p + p * p + l * p
            for a in range(n):
                ea = y[ab + a] - y[jb + a]
                eloc += ea * ea
                eu[a] = ea - y[o_ep + a] if aw else ea
            for a in range(n):
                for b in range(n):
                    v += eu[a] * P[j, a, b] * eu[b]
            if adaptive:
                v += _trace_term(y, ys, sb + n * p, p, p, gr_i, lam[i], True)
                if not leader:
                    v += _trace_term(y, ys, sb, n, p, gij_i, lam[i], True)
                    if not linear:
                        v += _trace_term(y, ys, sb + n * p + p * p, l, p, gphi_i, lam[i], True)
        if adaptive:
            v += _trace_term(y, ys, o_km, n, p, gm_i, lam[i], True)
            if not linear:
                v += _trace_term(y, ys, o_thi, l, p, gth_i, lam[i], True)
            if aw:
                v += _trace_term(y, ys, o_kp, p, p, gp_i, lam[i], False)
        v_out[i] = v
        eloc_out[i] = math.sqrt(eloc)


@njit(cache=True)
def rk4_step(t, y, dt, net, u_out, usat_out):
    m = y.shape[0]
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    rhs(t, y, k1, net, u_out, usat_out)
    for a in range(m):
        tmp[a] = y[a] + 0.5 * dt * k1[a]
    rhs(t + 0.5 * dt, tmp, k2, net, u_out, usat_out)
    for a in range(m):
        tmp[a] = y[a] + 0.5 * dt * k2[a]
    rhs(t + 0.5 * dt, tmp, k3, net, u_out, usat_out)
    for a in range(m):
        tmp[a] = y[a] + dt * k3[a]
    rhs(t + dt, tmp, k4, net, u_out, usat_out)
    out = np.empty(m)
    for a in range(m):
        out[a] = y[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
    return out


@njit(cache=True)
def _plant_ok(y, N, n, sa, guard):
    for a in range(n):
        if not abs(y[a]) <= guard:
            return False
    for i in range(N):
        ab = n + i * sa
        for a in range(n):
            if not abs(y[ab + a]) <= guard:
                return False
    return True


@njit(cache=True)
def _record(rec, t, y, ys, net, ginv, t_rec, X, U, US, ERR, ELOC, V):
    dims = net[0]
    N, n, p, l, dmax = dims[0], dims[1], dims[2], dims[3], dims[4]
    se, sa = block_sizes(n, p, l, dmax)
    dy = np.empty(y.shape[0])
    u = np.empty((N + 1, p))
    us = np.empty((N + 1, p))
    rhs(t, y, dy, net, u, us)
    t_rec[rec] = t
    for a in range(n):
        X[rec, N, a] = y[a]
    for i in range(N):
        for a in range(n):
            X[rec, i, a] = y[n + i * sa + a]
    for i in range(N + 1):
        for q in range(p):
            U[rec, i, q] = u[i, q]
            US[rec, i, q] = us[i, q]
    monitor(y, ys, net, ginv, V[rec], ERR[rec], ELOC[rec])


@njit(cache=True)
def integrate(y0, t0, dt, nsteps, record_every, guard, net, ys, ginv, t_rec, X, U, US, ERR, ELOC, V):
    """Fixed-step RK4 from t0; returns (records written, step at which the guard tripped or -1, final y)."""
    dims = net[0]
    N, n, p, l, dmax = dims[0], dims[1], dims[2], dims[3], dims[4]
    se, sa = block_sizes(n, p, l, dmax)
    u = np.empty((N + 1, p))
    us = np.empty((N + 1, p))
    y = y0.copy()
    rec = 0
    _record(rec, t0, y, ys, net, ginv, t_rec, X, U, US, ERR, ELOC, V)
    rec += 1
    for k in range(1, nsteps + 1):
        y = rk4_step(t0 + (k - 1) * dt, y, dt, net, u, us)
        if not _plant_ok(y, N, n, sa, guard):
            return rec, k, y
        if k % record_every == 0 or k == nsteps:
            _record(rec, t0 + k * dt, y, ys, net, ginv, t_rec, X, U, US, ERR, ELOC, V)
            rec += 1
    return rec, -1, y
