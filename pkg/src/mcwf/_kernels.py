"""Numba kernels for the per-step hot path.

Everything here is written as explicit loops on purpose: the summation
order inside a CSR row and inside the Nordsieck update is part of the
reproducibility contract (bitwise-identical reruns), and plain loops make
that order unambiguous.  All kernels are cached so worker processes pay
the compile cost once per machine.
"""

import numpy as np
from numba import njit

# corrector outcome codes shared with ode.py
STEP_OK = 0
STEP_CORRECTOR_FAIL = 1
STEP_ERROR_REJECT = 2


@njit(cache=True)
def csr_matvec(row_ptr, col_ind, values, x, out):
    """out = M @ x for a CSR matrix, summing each row left to right."""
    n = out.shape[0]
    for i in range(n):
        s = 0.0 + 0.0j
        for j in range(row_ptr[i], row_ptr[i + 1]):
            s += values[j] * x[col_ind[j]]
        out[i] = s


@njit(cache=True)
def csr_quadform(row_ptr, col_ind, values, psi):
    """Return (<psi|M|psi>, <psi|psi>) without materialising M @ psi."""
    acc = 0.0 + 0.0j
    nrm = 0.0
    for i in range(psi.shape[0]):
        s = 0.0 + 0.0j
        for j in range(row_ptr[i], row_ptr[i + 1]):
            s += values[j] * psi[col_ind[j]]
        acc += np.conj(psi[i]) * s
        nrm += psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
    return acc, nrm


@njit(cache=True)
def vec_norm_sq(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i].real * v[i].real + v[i].imag * v[i].imag
    return s


@njit(cache=True)
def nordsieck_predict(z, nord):
    """In-place Pascal-triangle multiply: advance the history one step."""
    for r in range(nord):
        for j in range(nord - 1, r - 1, -1):
            for i in range(z.shape[1]):
                z[j, i] += z[j + 1, i]


@njit(cache=True)
def nordsieck_eval(z, nord, s, out):
    """Evaluate the history polynomial at offset s (in units of h)."""
    n = z.shape[1]
    for i in range(n):
        acc = z[nord, i]
        for j in range(nord - 1, -1, -1):
            acc = acc * s + z[j, i]
        out[i] = acc


@njit(cache=True)
def nordsieck_eval_norm_sq(z, nord, s):
    """Squared norm of the interpolated state; used by jump bisection."""
    total = 0.0
    for i in range(z.shape[1]):
        acc = z[nord, i]
        for j in range(nord - 1, -1, -1):
            acc = acc * s + z[j, i]
        total += acc.real * acc.real + acc.imag * acc.imag
    return total


@njit(cache=True)
def wrms_weighted(v, yref, atol, rtol):
    """Weighted RMS norm with weights 1/(atol + rtol*|yref_i|)."""
    n = v.shape[0]
    acc = 0.0
    for i in range(n):
        w = 1.0 / (atol + rtol * abs(yref[i]))
        acc += (v[i].real * v[i].real + v[i].imag * v[i].imag) * w * w
    return np.sqrt(acc / n)


@njit(cache=True)
def wrms_diff_weighted(a, b, yref, atol, rtol):
    """Weighted RMS norm of (a - b) without materialising the difference."""
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        d = a[i] - b[i]
        w = 1.0 / (atol + rtol * abs(yref[i]))
        acc += (d.real * d.real + d.imag * d.imag) * w * w
    return np.sqrt(acc / n)


@njit(cache=True)
def nordsieck_rescale(z, nord, ratio):
    """Rescale columns for a step-size change h -> ratio*h."""
    f = 1.0
    for j in range(1, nord + 1):
        f *= ratio
        for i in range(z.shape[1]):
            z[j, i] *= f


@njit(cache=True)
def adams_csr_step(z, zp, e, ycur, f, nord, h, lvec, tau2, conit, crate,
                   row_ptr, col_ind, values, rtol, atol, maxcor):
    """One predict/correct attempt for y' = M y with functional iteration.

    z holds the current history and is left untouched; on success zp holds
    the corrected history and e the accumulated corrector term.  Returns
    (status, err_estimate, crate, corrector_iters, rhs_evals).
    """
    n = z.shape[1]
    L = nord + 1

    for i in range(n):
        for j in range(L):
            zp[j, i] = z[j, i]

    # predict
    for r in range(nord):
        for j in range(nord - 1, r - 1, -1):
            for i in range(n):
                zp[j, i] += zp[j + 1, i]

    l0 = lvec[0]
    converged = False
    niter = 0
    nfe = 0
    delp = 0.0
    del_ = 0.0
    for i in range(n):
        ycur[i] = zp[0, i]

    for m in range(maxcor):
        # f = M @ ycur
        for i in range(n):
            s = 0.0 + 0.0j
            for j in range(row_ptr[i], row_ptr[i + 1]):
                s += values[j] * ycur[col_ind[j]]
            f[i] = s
        nfe += 1
        niter += 1
        del_ = 0.0
        for i in range(n):
            ei = h * f[i] - zp[1, i]
            ynew = zp[0, i] + l0 * ei
            d = ynew - ycur[i]
            wi = 1.0 / (atol + rtol * abs(z[0, i]))
            del_ += (d.real * d.real + d.imag * d.imag) * wi * wi
            e[i] = ei
            ycur[i] = ynew
        del_ = np.sqrt(del_ / n)
        if m > 0:
            crate = max(0.2 * crate, del_ / delp)
        if del_ * min(1.0, 1.5 * crate) <= conit:
            converged = True
            break
        if m > 0 and del_ > 2.0 * delp:
            break
        delp = del_

    if not converged:
        return STEP_CORRECTOR_FAIL, 0.0, crate, niter, nfe

    acc = 0.0
    for i in range(n):
        wi = 1.0 / (atol + rtol * abs(z[0, i]))
        acc += (e[i].real * e[i].real + e[i].imag * e[i].imag) * wi * wi
    est = np.sqrt(acc / n) / tau2
    if est > 1.0:
        return STEP_ERROR_REJECT, est, crate, niter, nfe

    # commit the correction into the predicted array
    for j in range(L):
        lj = lvec[j]
        for i in range(n):
            zp[j, i] += lj * e[i]
    return STEP_OK, est, crate, niter, nfe
