"""Independent reference implementations used only by the tests.

Dense matrices and matrix exponentials (scipy.linalg.expm), explicit
tensor-product constructions and direct formula evaluation.  Nothing here
imports the package's numerical internals.
"""

import itertools
import math

import numpy as np
from scipy.linalg import expm


def dense_spin(n):
    """(Sx, Sy, Sz) in the basis m = -S..S, built from the ladder formula."""
    s = n / 2.0
    m = np.arange(-s, s + 1)
    sp = np.zeros((n + 1, n + 1))
    for k in range(n):
        # <m+1| S+ |m>
        sp[k + 1, k] = math.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    sx = (sp + sp.T) / 2
    sy = (sp - sp.T) / 2j
    sz = np.diag(m)
    return sx.astype(complex), sy, sz.astype(complex)


def dense_axis(n, axis):
    sx, sy, sz = dense_spin(n)
    a = np.asarray(axis, float)
    return a[0] * sx + a[1] * sy + a[2] * sz


def dense_rotate(psi, n, axis, angle):
    return expm(-1j * angle * dense_axis(n, axis)) @ psi


def dense_oat(psi, n, shear):
    sz = dense_spin(n)[2]
    return expm(-1j * shear * sz @ sz) @ psi


def dense_css(n, polar, azimuth):
    """exp(-i azimuth Sz) exp(-i polar Sy) |m=+S>."""
    sx, sy, sz = dense_spin(n)
    up = np.zeros(n + 1, complex)
    up[-1] = 1.0
    return expm(-1j * azimuth * sz) @ expm(-1j * polar * sy) @ up


def tensor_css_dicke(n, polar, azimuth):
    """CSS built as an explicit product of qubits and projected on Dicke states.

    Qubit basis (|up>, |down>); the symmetric state with k up spins has
    m = k - n/2.
    """
    single = np.array([math.cos(polar / 2) * np.exp(-0.5j * azimuth), math.sin(polar / 2) * np.exp(0.5j * azimuth)])
    out = np.zeros(n + 1, complex)
    for bits in itertools.product((0, 1), repeat=n):
        amp = np.prod([single[b] for b in bits])
        k = bits.count(0)
        out[k] += amp
    # projection onto normalized symmetric states: divide sum by sqrt(C(n,k))
    for k in range(n + 1):
        out[k] /= math.sqrt(math.comb(n, k))
    return out


def dense_moments(psi, n):
    """Mean spin, 3x3 symmetrized covariance, and extreme transverse variances."""
    ops = dense_spin(n)
    mean = np.array([np.vdot(psi, o @ psi).real for o in ops])
    cov = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            sym = (ops[i] @ ops[j] + ops[j] @ ops[i]) / 2
            cov[i, j] = np.vdot(psi, sym @ psi).real - mean[i] * mean[j]
    d = mean / np.linalg.norm(mean)
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = ref - (ref @ d) * d
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    b = np.stack([e1, e2])
    w = np.linalg.eigvalsh(b @ cov @ b.T)
    return mean, cov, float(w[0]), float(w[1])


def dense_xi_minus_sq(n, shear):
    psi = dense_oat(dense_css(n, math.pi / 2, 0.0), n, shear)
    _, _, vmin, _ = dense_moments(psi, n)
    return 2.0 * vmin / (n / 2.0)


def dense_wineland_sq(n, shear):
    psi = dense_oat(dense_css(n, math.pi / 2, 0.0), n, shear)
    mean, _, vmin, _ = dense_moments(psi, n)
    s = n / 2.0
    c = np.linalg.norm(mean) / s
    return (2.0 * vmin / s) / c**2


def dense_qfi(psi, gen):
    """4 Var(gen) for a pure state."""
    m1 = np.vdot(psi, gen @ psi).real
    m2 = np.vdot(psi, gen @ gen @ psi).real
    return 4.0 * (m2 - m1 * m1)


def allan_direct(y, m):
    """Overlapping Allan variance straight from the averaged-frequency definition."""
    y = np.asarray(y, float)
    n = len(y)
    terms = []
    for j in range(n - 2 * m + 1):
        a = y[j : j + m].mean()
        b = y[j + m : j + 2 * m].mean()
        terms.append(0.5 * (b - a) ** 2)
    return float(np.mean(terms))
