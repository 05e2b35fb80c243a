"""Compiled tamed-adaptive Euler-Maruyama stepper.

One routine advances ``nlev`` copies of the scheme (each with its own base
step and initial value) through a merged event sequence: every copy's grid
points, switching times, finite-activity jump times and observation times.
On each merged sub-interval one Brownian draw and one jump contribution are
generated and added to every copy's pending increment; a copy applies its
scheme update only at its own grid points.  With ``nlev == 1`` this is a
plain path, with two copies at base steps ``D`` and ``M*D`` it is a coupled
fine/coarse pair, and with two copies at the same step but different initial
values it is a synchronous coupling.
"""
import math

import numba
import numpy as np

OK, NON_FINITE, NO_PROGRESS, OVERFLOW = 0, 1, 2, 3




@numba.njit(nogil=True)
def _fro(a):
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * a[i, j]
    return math.sqrt(s)


@numba.njit(nogil=True)
def _sq(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return s


@numba.njit(nogil=True)
def _pow(x, p):
    # integer exponents by repeated squaring; pow() is several times slower
    if p == math.floor(p) and 0.0 <= p <= 64.0:
        n = int(p)
        r = 1.0
        while n:
            if n & 1:
                r *= x
            x *= x
            n >>= 1
        return r
    return x**p


@numba.njit(nogil=True)
def eval_all(drift, diffusion, jump, nreg, x, B, S, G):
    for r in range(nreg):
        drift(r + 1, x, B[r])
        diffusion(r + 1, x, S[r])
        jump(r + 1, x, G[r])


@numba.njit(nogil=True)
def coefficient_norms(B, S, G, norms):
    """norms[r] = (|b|, |sigma|, |gamma|) for every regime."""
    for r in range(B.shape[0]):
        norms[r, 0] = math.sqrt(_sq(B[r]))
        norms[r, 1] = _fro(S[r])
        norms[r, 2] = _fro(G[r])


@numba.njit(nogil=True)
def step_from(x, norms, h0, lgrowth, p0):
    """h(x) from the per-regime coefficient norms at x."""
    s = 1.0 + _pow(math.sqrt(_sq(x)), lgrowth)
    g = 0.0
    for r in range(norms.shape[0]):
        s += norms[r, 0] * norms[r, 0] + norms[r, 1]
        g += norms[r, 2]
    return h0 / (s * s + _pow(g, p0))


@numba.njit(nogil=True)
def taming_factors(norms, r, delta):
    """Scalar factors turning sigma, gamma of regime index r into their tamed forms."""
    sq = math.sqrt(delta)
    fs = 1.0 / (1.0 + sq * norms[r, 1])
    fg = 1.0 / (1.0 + sq * norms[r, 2] * (1.0 + norms[r, 0]))
    return fs, fg


@numba.njit(nogil=True)
def _next_state(gen, s, u):
    acc = 0.0
    last = s
    for j in range(gen.shape[0]):
        if j == s or gen[s, j] <= 0.0:
            continue
        last = j
        acc += gen[s, j]
        if u < acc:
            return j
    return last


@numba.njit(nogil=True)
def begin_step(drift, diffusion, jump, x, B, S, G, norms, r, delta, h0, lgrowth, p0):
    """Evaluate coefficients at x; return (h(x), sigma factor, gamma factor)."""
    eval_all(drift, diffusion, jump, B.shape[0], x, B, S, G)
    coefficient_norms(B, S, G, norms)
    h = step_from(x, norms, h0, lgrowth, p0)
    fs, fg = taming_factors(norms, r, delta)
    return h, fs, fg


# The hot loop below indexes full arrays instead of slicing them: every view
# costs a reference-count round trip, which dominated the step cost.


@numba.njit(nogil=True)
def _begin(drift, diffusion, jump, nreg, x, lev, xs, bs, ss, gs, Bl, Sl, Gl, s, sqdelta, h0, lgrowth, p0):
    """Evaluate every regime at copy ``lev``'s state and keep regime s.

    Returns h(x) and the taming factors of regime s at step scale sqdelta**2.
    """
    d = xs.shape[0]
    xx = 0.0
    for i in range(d):
        xs[i] = x[lev, i]
        xx += xs[i] * xs[i]
    if lgrowth == 2.0:
        tot = 1.0 + xx
    else:
        tot = 1.0 + _pow(math.sqrt(xx), lgrowth)
    g = 0.0
    fs = 1.0
    fg = 1.0
    for r in range(nreg):
        drift(r + 1, xs, bs)
        diffusion(r + 1, xs, ss)
        jump(r + 1, xs, gs)
        nb = 0.0
        for i in range(d):
            nb += bs[i] * bs[i]
        ns = 0.0
        ng = 0.0
        for i in range(d):
            for j in range(d):
                ns += ss[i, j] * ss[i, j]
                ng += gs[i, j] * gs[i, j]
        ns = math.sqrt(ns)
        ng = math.sqrt(ng)
        tot += nb + ns
        g += ng
        if r == s:
            for i in range(d):
                Bl[lev, i] = bs[i]
                for j in range(d):
                    Sl[lev, i, j] = ss[i, j]
                    Gl[lev, i, j] = gs[i, j]
            fs = 1.0 / (1.0 + sqdelta * ns)
            fg = 1.0 / (1.0 + sqdelta * ng * (1.0 + math.sqrt(nb)))
    h = h0 / (tot * tot + _pow(g, p0))
    return h, fs, fg


@numba.njit(nogil=True)
def _advance(x, lev, Bl, Sl, Gl, fs, fg, el, pw, pz, hasz, out):
    """out = x + b*el + fs*sig@pw + fg*gam@pz for copy ``lev``."""
    d = out.shape[0]
    for i in range(d):
        v = 0.0
        for j in range(d):
            v += Sl[lev, i, j] * pw[lev, j]
        acc = x[lev, i] + Bl[lev, i] * el + fs * v
        if hasz:
            v = 0.0
            for j in range(d):
                v += Gl[lev, i, j] * pz[lev, j]
            acc += fg * v
        out[i] = acc


@numba.njit(nogil=True)
def run(
    drift, diffusion, jump,
    gen, initial_regime, h0, lgrowth, p0,
    deltas, x0s, horizon,
    jkind, jparams, jcomp,
    obs_times,
    rchain, rbrown, rjump,
    record, rec_cap,
):
    """Advance ``len(deltas)`` coupled copies of the scheme to ``horizon``.

    Returns (status, fail_copy, x, steps, obs, checksum, rec_lev, rec_t,
    rec_reg, rec_x, rec_w, sub_t, sub_w).  ``obs[k, c]`` is the continuous
    extension of copy ``c`` at ``obs_times[k]``.  The ``rec_*`` arrays list
    every grid point of every copy (time, regime used for the step starting
    there, state, Brownian increment of the step ending there); ``sub_*`` list
    the merged Brownian sub-draws.  They are empty unless ``record``; if more
    than ``rec_cap`` entries are needed the status is OVERFLOW.
    """
    nlev = deltas.shape[0]
    d = x0s.shape[1]
    nreg = gen.shape[0]
    inf = np.inf

    x = x0s.copy()
    tk = np.zeros(nlev)
    tnext = np.zeros(nlev)
    # coefficients of the regime in force at each copy's current grid point
    Bl = np.zeros((nlev, d))
    Sl = np.zeros((nlev, d, d))
    Gl = np.zeros((nlev, d, d))
    xs = np.zeros(d)
    bs = np.zeros(d)
    ss = np.zeros((d, d))
    gs = np.zeros((d, d))
    tmp = np.zeros(d)
    sqd = np.sqrt(deltas)
    fs = np.zeros(nlev)
    fg = np.zeros(nlev)
    pw = np.zeros((nlev, d))
    pz = np.zeros((nlev, d))
    hasz = np.zeros(nlev, np.bool_)
    steps = np.zeros(nlev, np.int64)
    done = np.zeros(nlev, np.bool_)
    nobs = obs_times.shape[0]
    obs = np.full((nobs, nlev, d), np.nan)
    checksum = 0.0

    # recording buffers have fixed capacity (growing them inside the loop
    # slows every iteration); on overflow the caller retries with more room
    cap = rec_cap if record else 0
    rec_lev = np.empty(cap, np.int64)
    rec_t = np.empty(cap)
    rec_reg = np.empty(cap, np.int64)
    rec_x = np.empty((cap, d))
    rec_w = np.empty((cap, d))
    nrec = 0
    sub_t = np.empty(cap)
    sub_w = np.empty((cap, d))
    nsub = 0
    status = OK
    fail = -1

    # switching chain
    s = initial_regime - 1
    rate = -gen[s, s]
    chain_next = inf
    if rate > 0.0:
        chain_next = rchain.standard_exponential() / rate
        if chain_next > horizon:
            chain_next = inf

    # finite-activity jump clocks
    jnext = np.full(d, inf)
    if jkind == 1:
        for j in range(d):
            lam = jparams[j, 0]
            if lam > 0.0:
                tj = rjump.standard_exponential() / lam
                if tj <= horizon:
                    jnext[j] = tj
    compensate = False
    for j in range(d):
        if jcomp[j] != 0.0:
            compensate = True

    for lev in range(nlev):
        h, fs[lev], fg[lev] = _begin(drift, diffusion, jump, nreg, x, lev, xs, bs, ss, gs, Bl, Sl, Gl, s,
                                     sqd[lev], h0, lgrowth, p0)
        if not math.isfinite(h):
            status, fail = NON_FINITE, lev
            break
        tn = min(h * deltas[lev], horizon)
        if not (tn > 0.0):
            status, fail = NO_PROGRESS, lev
            break
        tnext[lev] = tn
        if record:
            rec_lev[nrec] = lev
            rec_t[nrec] = 0.0
            rec_reg[nrec] = s + 1
            rec_x[nrec] = x[lev]
            rec_w[nrec] = 0.0
            nrec += 1

    iobs = 0
    t = 0.0
    while status == OK:
        tn = inf
        for lev in range(nlev):
            if not done[lev] and tnext[lev] < tn:
                tn = tnext[lev]
        if chain_next < tn:
            tn = chain_next
        for j in range(d):
            if jnext[j] < tn:
                tn = jnext[j]
        if iobs < nobs and obs_times[iobs] < tn:
            tn = obs_times[iobs]

        dt = tn - t
        if dt > 0.0:
            sq = math.sqrt(dt)
            if record and nsub >= cap:
                status = OVERFLOW
                break
            for j in range(d):
                w = rbrown.standard_normal() * sq
                checksum += w
                for lev in range(nlev):
                    pw[lev, j] += w
                if record:
                    sub_w[nsub, j] = w
            if record:
                sub_t[nsub] = tn
                nsub += 1
            if jkind == 2:
                for j in range(d):
                    z = 0.0
                    if jparams[j, 0] > 0.0:
                        z += rjump.standard_gamma(jparams[j, 0] * dt) / jparams[j, 1]
                    if jparams[j, 2] > 0.0:
                        z -= rjump.standard_gamma(jparams[j, 2] * dt) / jparams[j, 3]
                    z -= jcomp[j] * dt
                    for lev in range(nlev):
                        pz[lev, j] += z
                        hasz[lev] = True
            elif compensate:
                for j in range(d):
                    for lev in range(nlev):
                        pz[lev, j] -= jcomp[j] * dt
                        hasz[lev] = True

        if jkind == 1:
            for j in range(d):
                if jnext[j] == tn:
                    z = jparams[j, 1] + jparams[j, 2] * rjump.standard_normal()
                    for lev in range(nlev):
                        pz[lev, j] += z
                        hasz[lev] = True
                    tj = tn + rjump.standard_exponential() / jparams[j, 0]
                    jnext[j] = tj if tj <= horizon else inf

        if chain_next == tn:
            s = _next_state(gen, s, rchain.random() * rate)
            rate = -gen[s, s]
            chain_next = inf
            if rate > 0.0:
                tc = tn + rchain.standard_exponential() / rate
                if tc <= horizon:
                    chain_next = tc

        t = tn

        while iobs < nobs and obs_times[iobs] == tn:
            for lev in range(nlev):
                _advance(x, lev, Bl, Sl, Gl, fs[lev], fg[lev], tn - tk[lev], pw, pz, hasz[lev], tmp)
                for i in range(d):
                    obs[iobs, lev, i] = tmp[i]
            iobs += 1

        alldone = True
        for lev in range(nlev):
            if done[lev]:
                continue
            if tnext[lev] != tn:
                alldone = False
                continue
            _advance(x, lev, Bl, Sl, Gl, fs[lev], fg[lev], tn - tk[lev], pw, pz, hasz[lev], tmp)
            for i in range(d):
                x[lev, i] = tmp[i]
            steps[lev] += 1
            tk[lev] = tn
            if record:
                if nrec >= cap:
                    status = OVERFLOW
                    break
                rec_lev[nrec] = lev
                rec_t[nrec] = tn
                rec_reg[nrec] = s + 1
                for i in range(d):
                    rec_x[nrec, i] = x[lev, i]
                    rec_w[nrec, i] = pw[lev, i]
                nrec += 1
            for i in range(d):
                pw[lev, i] = 0.0
                pz[lev, i] = 0.0
            hasz[lev] = False
            for i in range(d):
                if not math.isfinite(x[lev, i]):
                    status, fail = NON_FINITE, lev
            if status != OK:
                break
            if tn >= horizon:
                done[lev] = True
                continue
            alldone = False
            h, fs[lev], fg[lev] = _begin(drift, diffusion, jump, nreg, x, lev, xs, bs, ss, gs, Bl, Sl, Gl, s,
                                         sqd[lev], h0, lgrowth, p0)
            if not math.isfinite(h):
                status, fail = NON_FINITE, lev
                break
            nt = min(tn + h * deltas[lev], horizon)
            if not (nt > tn):
                status, fail = NO_PROGRESS, lev
                break
            tnext[lev] = nt
        if alldone:
            break

    return status, fail, x, steps, obs, checksum, \
        rec_lev[:nrec], rec_t[:nrec], rec_reg[:nrec], rec_x[:nrec], rec_w[:nrec], sub_t[:nsub], sub_w[:nsub]
