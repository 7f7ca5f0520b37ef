"""Pure-Python servo loop.  Mirrors ``_servo_ext.pyx`` operation by operation.

Both implementations perform the same double-precision arithmetic in the
same order, so they produce bit-identical records.
"""

import math

PI = math.pi
TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


def _wrap(phi):
    return phi - TWO_PI * math.floor((phi + PI) / TWO_PI)


def _estimate(sz, kind, length, mu, ph, count):
    if kind == 0:
        r = sz / length
        if r > 1.0:
            r = 1.0
        elif r < -1.0:
            r = -1.0
        return math.asin(r)
    if sz <= mu[0]:
        return ph[0]
    if sz >= mu[count - 1]:
        return ph[count - 1]
    lo = 0
    hi = count - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mu[mid] <= sz:
            lo = mid
        else:
            hi = mid
    return ph[lo] + (sz - mu[lo]) * (ph[hi] - ph[lo]) / (mu[hi] - mu[lo])


def run_servo_loop(
    lo_phase,
    lo_freq,
    scale,
    gain,
    cdf,
    est,
    values,
    u_pick,
    u_out,
    z_weak,
    qnd_sigma,
    mean_grid,
    var_grid,
    length,
    lock_loss_cycles,
    det_sigma,
    z_det,
    est_kind,
    resp_mu,
    resp_phi,
    n_resp,
    out_phase,
    out_hat,
    out_sz,
    out_steer,
    out_wrap,
    out_y,
):
    """Closed-loop Ramsey servo; returns the number of completed cycles.

    See :func:`entclock.clock.simulate` for the meaning of the arrays.  The
    loop aborts after ``lock_loss_cycles`` consecutive wrapped cycles
    (disabled when ``lock_loss_cycles <= 0``).
    """
    n = lo_phase.shape[0]
    n_ens, n_phi, n_out = cdf.shape
    h = TWO_PI / n_phi
    max_step = PI / scale
    # python lists are much faster to index element-wise than numpy arrays
    lo_phase_l = lo_phase.tolist()
    lo_freq_l = lo_freq.tolist()
    cdf_l = cdf.tolist()
    est_l = est.tolist()
    values_l = values.tolist()
    u_pick_l = u_pick.tolist()
    u_out_l = u_out.tolist()
    z_l = z_weak.tolist()
    mean_l = mean_grid.tolist()
    var_l = var_grid.tolist()
    len_l = length.tolist()
    zd_l = z_det.tolist()
    kind_l = est_kind.tolist()
    rmu_l = resp_mu.tolist()
    rph_l = resp_phi.tolist()
    nr_l = n_resp.tolist()
    qnd_var = qnd_sigma * qnd_sigma
    s = 0.0
    consecutive = 0
    done = n
    for k in range(n):
        phi = lo_phase_l[k] + scale * s
        wrapped = math.fabs(phi) > HALF_PI
        out_phase[k] = phi
        out_wrap[k] = wrapped
        phw = _wrap(phi)
        acc = 0.0
        for e in range(n_ens):
            tilde = 0.0
            peff = phw
            if qnd_sigma >= 0.0:
                x = (phw + PI) / h
                i0 = int(math.floor(x))
                frac = x - i0
                i0 = i0 % n_phi
                i1 = (i0 + 1) % n_phi
                mu = mean_l[e][i0] + frac * (mean_l[e][i1] - mean_l[e][i0])
                var = var_l[e][i0] + frac * (var_l[e][i1] - var_l[e][i0])
                r = (mu + math.sqrt(var + qnd_var) * z_l[k][e]) / len_l[e]
                if r > 1.0:
                    r = 1.0
                elif r < -1.0:
                    r = -1.0
                tilde = math.asin(r)
                peff = _wrap(phw - tilde)
            x = (peff + PI) / h
            i0 = int(math.floor(x))
            frac = x - i0
            i0 = i0 % n_phi
            row = (i0 + 1) % n_phi if u_pick_l[k][e] < frac else i0
            u = u_out_l[k][e]
            crow = cdf_l[e][row]
            lo = 0
            hi = n_out - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if crow[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            if det_sigma > 0.0:
                sz = values_l[e][lo] + det_sigma * zd_l[k][e]
                hat = tilde + _estimate(sz, kind_l[e], len_l[e], rmu_l[e], rph_l[e], nr_l[e])
            else:
                sz = values_l[e][lo]
                hat = tilde + est_l[e][lo]
            out_hat[k, e] = hat
            out_sz[k, e] = sz
            acc += hat
        step = gain * (acc / n_ens) / scale
        if step > max_step:
            step = max_step
        elif step < -max_step:
            step = -max_step
        out_y[k] = lo_freq_l[k] + s
        s = s - step
        out_steer[k] = -step
        if wrapped:
            consecutive += 1
        else:
            consecutive = 0
        if lock_loss_cycles > 0 and consecutive >= lock_loss_cycles:
            done = k + 1
            break
    return done
