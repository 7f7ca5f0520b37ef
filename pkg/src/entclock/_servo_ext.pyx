# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled servo loop.  Arithmetic mirrors ``_servo_py.py`` exactly."""

from libc.math cimport asin, fabs, floor, sqrt

cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586
cdef double HALF_PI = 1.5707963267948966


cdef inline double _wrap(double phi) noexcept nogil:
    return phi - TWO_PI * floor((phi + PI) / TWO_PI)


cdef inline double _estimate(
    double sz,
    long kind,
    double length,
    const double[:, ::1] mu,
    const double[:, ::1] ph,
    Py_ssize_t e,
    Py_ssize_t count,
) noexcept nogil:
    cdef double r
    cdef Py_ssize_t lo, hi, mid
    if kind == 0:
        r = sz / length
        if r > 1.0:
            r = 1.0
        elif r < -1.0:
            r = -1.0
        return asin(r)
    if sz <= mu[e, 0]:
        return ph[e, 0]
    if sz >= mu[e, count - 1]:
        return ph[e, count - 1]
    lo = 0
    hi = count - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mu[e, mid] <= sz:
            lo = mid
        else:
            hi = mid
    return ph[e, lo] + (sz - mu[e, lo]) * (ph[e, hi] - ph[e, lo]) / (mu[e, hi] - mu[e, lo])


def run_servo_loop(
    const double[::1] lo_phase,
    const double[::1] lo_freq,
    double scale,
    double gain,
    const double[:, :, ::1] cdf,
    const double[:, ::1] est,
    const double[:, ::1] values,
    const double[:, ::1] u_pick,
    const double[:, ::1] u_out,
    const double[:, ::1] z_weak,
    double qnd_sigma,
    const double[:, ::1] mean_grid,
    const double[:, ::1] var_grid,
    const double[::1] length,
    long lock_loss_cycles,
    double det_sigma,
    const double[:, ::1] z_det,
    const long[::1] est_kind,
    const double[:, ::1] resp_mu,
    const double[:, ::1] resp_phi,
    const long[::1] n_resp,
    double[::1] out_phase,
    double[:, ::1] out_hat,
    double[:, ::1] out_sz,
    double[::1] out_steer,
    unsigned char[::1] out_wrap,
    double[::1] out_y,
):
    cdef Py_ssize_t n = lo_phase.shape[0]
    cdef Py_ssize_t n_ens = cdf.shape[0]
    cdef Py_ssize_t n_phi = cdf.shape[1]
    cdef Py_ssize_t n_out = cdf.shape[2]
    cdef double h = TWO_PI / n_phi
    cdef double max_step = PI / scale
    cdef double qnd_var = qnd_sigma * qnd_sigma
    cdef double s = 0.0
    cdef double phi, phw, acc, tilde, peff, x, frac, mu, var, r, u, hat, step, sz
    cdef Py_ssize_t k, e, i0, i1, row, lo, hi, mid
    cdef long consecutive = 0
    cdef Py_ssize_t done = n
    cdef bint wrapped
    with nogil:
        for k in range(n):
            phi = lo_phase[k] + scale * s
            wrapped = fabs(phi) > HALF_PI
            out_phase[k] = phi
            out_wrap[k] = wrapped
            phw = _wrap(phi)
            acc = 0.0
            for e in range(n_ens):
                tilde = 0.0
                peff = phw
                if qnd_sigma >= 0.0:
                    x = (phw + PI) / h
                    i0 = <Py_ssize_t>floor(x)
                    frac = x - <double>i0
                    i0 = i0 % n_phi
                    if i0 < 0:
                        i0 = i0 + n_phi
                    i1 = (i0 + 1) % n_phi
                    mu = mean_grid[e, i0] + frac * (mean_grid[e, i1] - mean_grid[e, i0])
                    var = var_grid[e, i0] + frac * (var_grid[e, i1] - var_grid[e, i0])
                    r = (mu + sqrt(var + qnd_var) * z_weak[k, e]) / length[e]
                    if r > 1.0:
                        r = 1.0
                    elif r < -1.0:
                        r = -1.0
                    tilde = asin(r)
                    peff = _wrap(phw - tilde)
                x = (peff + PI) / h
                i0 = <Py_ssize_t>floor(x)
                frac = x - <double>i0
                i0 = i0 % n_phi
                if i0 < 0:
                    i0 = i0 + n_phi
                if u_pick[k, e] < frac:
                    row = (i0 + 1) % n_phi
                else:
                    row = i0
                u = u_out[k, e]
                lo = 0
                hi = n_out - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if cdf[e, row, mid] > u:
                        hi = mid
                    else:
                        lo = mid + 1
                if det_sigma > 0.0:
                    sz = values[e, lo] + det_sigma * z_det[k, e]
                    hat = tilde + _estimate(sz, est_kind[e], length[e], resp_mu, resp_phi, e, n_resp[e])
                else:
                    sz = values[e, lo]
                    hat = tilde + est[e, lo]
                out_hat[k, e] = hat
                out_sz[k, e] = sz
                acc = acc + hat
            step = gain * (acc / n_ens) / scale
            if step > max_step:
                step = max_step
            elif step < -max_step:
                step = -max_step
            out_y[k] = lo_freq[k] + s
            s = s - step
            out_steer[k] = -step
            if wrapped:
                consecutive = consecutive + 1
            else:
                consecutive = 0
            if lock_loss_cycles > 0 and consecutive >= lock_loss_cycles:
                done = k + 1
                break
    return done
