"""Hot inner loops of the bound estimators.

Every kernel has a pure-numpy twin (``*_np``).  The public name points at the
numba build unless numba is missing or disabled through ``IBGEN_DISABLE_NUMBA``.
Both paths must agree to rounding; ``tests/test_kernels.py`` pins that.
"""

import math

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# product-Gaussian log densities  log q(u_m | atom_a)
# --------------------------------------------------------------------------


def gauss_logpdf_matrix_np(u, mu, var):
    m, d = u.shape
    a = mu.shape[0]
    out = np.zeros((m, a))
    for j in range(d):
        diff = u[:, j : j + 1] - mu[None, :, j]
        out -= 0.5 * (LOG_2PI + np.log(var[None, :, j]) + diff * diff / var[None, :, j])
    return out


@njit
def _gauss_logpdf_matrix_nb(u, mu, var):
    m, d = u.shape
    a = mu.shape[0]
    out = np.empty((m, a))
    logvar = np.log(var)
    for k in range(a):
        base = 0.0
        for j in range(d):
            base += LOG_2PI + logvar[k, j]
        for i in range(m):
            acc = base
            for j in range(d):
                diff = u[i, j] - mu[k, j]
                acc += diff * diff / var[k, j]
            out[i, k] = -0.5 * acc
    return out


# --------------------------------------------------------------------------
# class-wise weighted log-sum-exp over atoms
#   out[m, y] = log sum_a exp(logq[m, a] + logw[a, y])
# --------------------------------------------------------------------------


def class_logsumexp_np(logq, logw):
    m = logq.shape[0]
    ny = logw.shape[1]
    out = np.empty((m, ny))
    for y in range(ny):
        z = logq + logw[None, :, y]
        top = np.max(z, axis=1)
        finite = np.isfinite(top)
        safe = np.where(finite, top, 0.0)
        s = np.sum(np.exp(z - safe[:, None]), axis=1)
        with np.errstate(divide="ignore"):
            out[:, y] = np.where(finite, safe + np.log(s), -np.inf)
    return out


@njit
def _class_logsumexp_nb(logq, logw):
    m, a = logq.shape
    ny = logw.shape[1]
    out = np.empty((m, ny))
    for i in range(m):
        for y in range(ny):
            top = -np.inf
            for k in range(a):
                v = logq[i, k] + logw[k, y]
                if v > top:
                    top = v
            if top == -np.inf:
                out[i, y] = -np.inf
                continue
            s = 0.0
            for k in range(a):
                s += math.exp(logq[i, k] + logw[k, y] - top)
            out[i, y] = top + math.log(s)
    return out


# --------------------------------------------------------------------------
# max_{p, g} | q(u_g | probe_p) - q(u_g | centre) |   (product Gaussian)
# --------------------------------------------------------------------------


def density_gap_max_np(u, mu_p, var_p, mu_c, var_c):
    ref = np.exp(gauss_logpdf_matrix_np(u, mu_c[None, :], var_c[None, :]))[:, 0]
    dens = np.exp(gauss_logpdf_matrix_np(u, mu_p, var_p))
    if dens.size == 0:
        return 0.0
    return float(np.max(np.abs(dens - ref[:, None])))


@njit
def _density_gap_max_nb(u, mu_p, var_p, mu_c, var_c):
    g, d = u.shape
    p = mu_p.shape[0]
    ref = np.empty(g)
    cbase = 0.0
    for j in range(d):
        cbase += LOG_2PI + math.log(var_c[j])
    for i in range(g):
        acc = cbase
        for j in range(d):
            diff = u[i, j] - mu_c[j]
            acc += diff * diff / var_c[j]
        ref[i] = math.exp(-0.5 * acc)
    best = 0.0
    for k in range(p):
        base = 0.0
        for j in range(d):
            base += LOG_2PI + math.log(var_p[k, j])
        for i in range(g):
            acc = base
            for j in range(d):
                diff = u[i, j] - mu_p[k, j]
                acc += diff * diff / var_p[k, j]
            gap = abs(math.exp(-0.5 * acc) - ref[i])
            if gap > best:
                best = gap
    return best


def _f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


if NUMBA_AVAILABLE:

    def gauss_logpdf_matrix(u, mu, var):
        """``out[m, a] = sum_j log N(u[m, j]; mu[a, j], var[a, j])``."""
        return _gauss_logpdf_matrix_nb(*_f64(u, mu, var))

    def class_logsumexp(logq, logw):
        """``out[m, y] = log sum_a exp(logq[m, a] + logw[a, y])``; all ``-inf`` rows stay ``-inf``."""
        return _class_logsumexp_nb(*_f64(logq, logw))

    def density_gap_max(u, mu_p, var_p, mu_c, var_c):
        return float(_density_gap_max_nb(*_f64(u, mu_p, var_p, mu_c, var_c)))

else:
    gauss_logpdf_matrix = gauss_logpdf_matrix_np
    class_logsumexp = class_logsumexp_np
    density_gap_max = density_gap_max_np
