"""Adaptive variable-order, variable-step implicit multistep integrator for
complex ODE systems.

Two method families over a shared Nordsieck history (the scaled-derivative
columns y, h y', h^2 y''/2!, ...): implicit Adams-Moulton at orders 1-12
with functional corrector iteration for non-stiff problems, and BDF at
orders 1-6 with a modified-Newton corrector for stiff ones.  Step-size
changes rescale the history columns; local error is controlled in the
weighted RMS norm with weights 1/(atol + rtol*|y_i|).

Method coefficients are derived exactly from the generating polynomials
with rational arithmetic at import time, then frozen as floats:

* Adams order q: p(x) = prod_{i=1}^{q-1}(x+i); the corrector direction is
  l0 = int_{-1}^0 p / (q-1)!, l1 = 1, lj = p_{j-1}/(j (q-1)!), and the
  error-test divisor is the reciprocal error constant q!/|int_{-1}^0 x p|.
* BDF order q: P(x) = prod_{i=1}^q (x+i); lj = P_j/P_1, with error-test
  divisors (q+1) H_q (same order), 1/(q-1)! (order down, applied to the
  highest history column) and (q+2) H_q (order up).

When the right side is registered as a constant CSR matrix (the quantum
trajectory hot path) the whole predict/correct/error-test sequence runs in
a compiled kernel and the Jacobian for BDF is that matrix, never finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import sqrt

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import _kernels
from ._kernels import (STEP_CORRECTOR_FAIL, STEP_ERROR_REJECT, STEP_OK,
                       adams_csr_step, csr_matvec, nordsieck_eval,
                       nordsieck_eval_norm_sq, nordsieck_predict,
                       nordsieck_rescale, wrms_diff_weighted, wrms_weighted)
from .linalg import CsrMatrix

ADAMS = "adams"
BDF = "bdf"

_MAX_ORDER = {ADAMS: 12, BDF: 6}
_MAXCOR = 3
_BIAS_SAME, _BIAS_DOWN, _BIAS_UP = 1.2, 1.3, 1.4

__all__ = ["ADAMS", "BDF", "OdeConfig", "OdeFailure", "OdeSolver"]


class OdeFailure(RuntimeError):
    """Integration halt, mirroring a negative solver status code.

    istate -1: step budget exhausted; -4: repeated error-test failures;
    -5: corrector could not converge and the step size collapsed.
    """

    def __init__(self, istate: int, detail: str):
        super().__init__(f"HALT: Error in ode solver, value ISTATE = {istate} ({detail})")
        self.istate = istate


def _poly_mul(p, root):
    # multiply polynomial (coeff list, ascending) by (x + root)
    out = [Fraction(0)] * (len(p) + 1)
    for i, c in enumerate(p):
        out[i] += c * root
        out[i + 1] += c
    return out


def _int_m1_0(p, weight_x=False):
    # integral over [-1, 0] of p(x) or x*p(x)
    total = Fraction(0)
    for i, c in enumerate(p):
        k = i + 1 if weight_x else i
        total += c * Fraction((-1) ** k, k + 1)
    return total


def _factorial(k):
    out = Fraction(1)
    for i in range(2, k + 1):
        out *= i
    return out


def _build_tables():
    tables = {ADAMS: [None], BDF: [None]}

    p = [Fraction(1)]
    for q in range(1, _MAX_ORDER[ADAMS] + 1):
        fac = _factorial(q - 1)
        l = [_int_m1_0(p) / fac, Fraction(1)]
        l += [Fraction(p[j - 1], j) / fac for j in range(2, q + 1)]
        gamma = abs(_int_m1_0(p, weight_x=True)) / (fac * q)
        tau2 = 1 / gamma
        tables[ADAMS].append({"l": np.array([float(c) for c in l]), "tau2": float(tau2)})
        p = _poly_mul(p, Fraction(q))  # extend p(x) by (x + q) for the next order
    for q in range(2, _MAX_ORDER[ADAMS] + 1):
        tables[ADAMS][q]["tau1"] = tables[ADAMS][q - 1]["tau2"] / float(_factorial(q))
    for q in range(1, _MAX_ORDER[ADAMS]):
        tables[ADAMS][q]["tau3"] = tables[ADAMS][q + 1]["tau2"]

    p = [Fraction(1)]
    for q in range(1, _MAX_ORDER[BDF] + 1):
        p = _poly_mul(p, Fraction(q))  # P(x) = (x+1)...(x+q)
        l = [c / p[1] for c in p]
        hq = p[1] / p[0]
        entry = {"l": np.array([float(c) for c in l]),
                 "tau2": float((q + 1) * hq),
                 "tau3": float((q + 2) * hq)}
        if q >= 2:
            entry["tau1"] = 1.0 / float(_factorial(q - 1))
        tables[BDF].append(entry)
    return tables


_TABLES = _build_tables()


@dataclass(frozen=True)
class OdeConfig:
    """Integrator options: method family, mixed tolerances, order cap,
    per-call step budget and optional explicit first step."""

    method: str = ADAMS
    rtol: float = 1e-7
    atol: float = 1e-12
    max_order: int | None = None
    max_steps: int = 50_000
    initial_step: float | None = None

    def __post_init__(self):
        if self.method not in (ADAMS, BDF):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.atol < 0.0:
            raise ValueError("atol must be non-negative")
        limit = _MAX_ORDER[self.method]
        if self.max_order is None:
            object.__setattr__(self, "max_order", limit)
        elif not 1 <= self.max_order <= limit:
            raise ValueError(f"max_order must be in [1, {limit}] for {self.method}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.initial_step is not None and self.initial_step <= 0:
            raise ValueError("initial_step must be positive")


class OdeSolver:
    """One integration in progress; owns the Nordsieck history.

    The right side is either a callback ``f(t, y) -> ydot`` or a constant
    :class:`CsrMatrix` M meaning ``y' = M y``.  ``jac`` optionally supplies
    the Jacobian for the BDF corrector; without it the CSR matrix is used
    directly, or finite differences as a last resort.  Instances are
    independent and never share state, so any number may run concurrently.
    """

    def __init__(self, config: OdeConfig, f, jac=None, *, t0: float, y0: np.ndarray,
                 h0: float | None = None):
        self.config = config
        y0 = np.ascontiguousarray(y0, dtype=np.complex128)
        if y0.ndim != 1 or y0.shape[0] < 1:
            raise ValueError("y0 must be a 1-d vector")
        if not np.all(np.isfinite(y0.view(np.float64))):
            raise ValueError("y0 must be finite")
        self.n = y0.shape[0]

        if isinstance(f, CsrMatrix):
            if f.n != self.n:
                raise ValueError(f"generator dim {f.n} != state dim {self.n}")
            self._csr = f
            self._f = None
        else:
            self._csr = None
            self._f = f
        self._jac_fn = jac

        self.t = float(t0)
        self.t_lo = float(t0)
        self.q = 1
        self._load_coeffs()

        lmax = config.max_order + 1
        self.z = np.zeros((lmax, self.n), dtype=np.complex128)
        self.z[0] = y0
        self._e = np.zeros(self.n, dtype=np.complex128)

        self.nfev = 0
        self.steps = 0
        self.niters = 0
        self.nrejected = 0

        if h0 is None:
            h0 = config.initial_step
        f0 = self._rhs(self.t, y0)
        self.h = h0 if h0 is not None else self._auto_step(y0, f0)
        self.z[1] = self.h * f0

        self._crate = 0.7
        self._ialth = self.q + 1
        self._e_prev = None
        self._kernel_path = self._csr is not None and config.method == ADAMS
        if self._kernel_path:
            self._zp = np.zeros_like(self.z)
            self._ycur = np.empty(self.n, dtype=np.complex128)
            self._fwork = np.empty(self.n, dtype=np.complex128)
        # Newton machinery (BDF)
        self._jac = None
        self._lu = None
        self._hl0_fact = None
        self._jac_stale = True

    # -- basic plumbing ----------------------------------------------------

    def _rhs(self, t, y):
        self.nfev += 1
        if self._csr is not None:
            out = np.empty(self.n, dtype=np.complex128)
            csr_matvec(self._csr.row_ptr, self._csr.col_ind, self._csr.values, y, out)
            return out
        out = np.ascontiguousarray(self._f(t, y), dtype=np.complex128)
        if out.shape != (self.n,):
            raise ValueError(f"rhs returned shape {out.shape}, expected ({self.n},)")
        return out

    def _load_coeffs(self):
        entry = _TABLES[self.config.method][self.q]
        self._l = entry["l"]
        self._tau1 = entry.get("tau1")
        self._tau2 = entry["tau2"]
        self._tau3 = entry.get("tau3")
        self._conit = 0.5 / (self.q + 2)

    def _weights_sq(self):
        w = 1.0 / (self.config.atol + self.config.rtol * np.abs(self.z[0]))
        return w * w

    def _wrms(self, v, w2):
        return sqrt(float((v.real * v.real + v.imag * v.imag) @ w2) / self.n)

    def _auto_step(self, y0, f0):
        w2 = 1.0 / (self.config.atol + self.config.rtol * np.abs(y0)) ** 2
        fw = self._wrms(f0, w2)
        if fw <= 0.0:
            return 1e-6
        return 0.01 / fw

    @property
    def stats(self) -> dict:
        return {"steps": self.steps, "nfev": self.nfev,
                "niters": self.niters, "nrejected": self.nrejected}

    # -- stepping ----------------------------------------------------------

    def step(self) -> None:
        """Advance the solution by one internally-chosen step."""
        nef = 0
        ncf = 0
        while True:
            if self.t + self.h == self.t:
                raise OdeFailure(-5, f"step size collapsed to {self.h:g} at t = {self.t:g}")
            if self._kernel_path:
                status, est, crate, nit, nfe = adams_csr_step(
                    self.z, self._zp, self._e, self._ycur, self._fwork,
                    self.q, self.h, self._l, self._tau2, self._conit,
                    self._crate, self._csr.row_ptr, self._csr.col_ind,
                    self._csr.values, self.config.rtol, self.config.atol,
                    _MAXCOR)
                self._crate = crate
                self.niters += nit
                self.nfev += nfe
            else:
                status, est = self._attempt_general()

            if status == STEP_OK:
                if self._kernel_path:
                    self.z, self._zp = self._zp, self.z
                self.t_lo = self.t
                self.t += self.h
                self.steps += 1
                self._ialth -= 1
                if self._ialth == 0:
                    self._order_step_control(est)
                else:
                    self._e_prev = self._e.copy()
                return

            if status == STEP_ERROR_REJECT:
                self.nrejected += 1
                nef += 1
                if nef >= 10:
                    raise OdeFailure(-4, f"repeated error-test failures at t = {self.t:g}")
                if nef >= 3:
                    self._restart_order_one(0.1)
                else:
                    r = 1.0 / (_BIAS_SAME * est ** (1.0 / (self.q + 1)) + 1e-6)
                    self._rescale(max(0.1, min(r, 0.9)))
                continue

            # corrector failure
            ncf += 1
            self._jac_stale = True
            self._lu = None
            if ncf >= 10:
                raise OdeFailure(-5, f"corrector failed to converge at t = {self.t:g}")
            self._rescale(0.25)

    def _restart_order_one(self, r):
        """After persistent error-test failures: drop to order 1 with a much
        smaller step and reload the derivative column from a fresh f."""
        self.q = 1
        self._load_coeffs()
        self.h *= r
        self.z[1] = self.h * self._rhs(self.t, self.z[0])
        self._e_prev = None
        self._ialth = self.q + 1
        self._lu = None

    def _rescale(self, r):
        nordsieck_rescale(self.z, self.q, r)
        self.h *= r
        self._e_prev = None
        self._ialth = self.q + 1

    # -- general (callback / Newton) engine ---------------------------------

    def _attempt_general(self):
        q, l = self.q, self._l
        nord = q
        w2 = self._weights_sq()
        save = self.z[:nord + 1].copy()
        nordsieck_predict(self.z, nord)
        ypred = self.z[0].copy()
        z1pred = self.z[1].copy()
        t_new = self.t + self.h

        if self.config.method == BDF:
            converged, e = self._newton_correct(t_new, ypred, z1pred, w2)
        else:
            converged, e = self._functional_correct(t_new, ypred, z1pred, w2)

        if not converged:
            self.z[:nord + 1] = save
            return STEP_CORRECTOR_FAIL, 0.0
        est = self._wrms(e, w2) / self._tau2
        if est > 1.0:
            self.z[:nord + 1] = save
            return STEP_ERROR_REJECT, est
        self.z[:nord + 1] += np.multiply.outer(l, e)
        self._e = e
        return STEP_OK, est

    def _functional_correct(self, t_new, ypred, z1pred, w2):
        l0 = self._l[0]
        ycur = ypred
        delp = 0.0
        e = None
        for m in range(_MAXCOR):
            e = self.h * self._rhs(t_new, ycur) - z1pred
            ynew = ypred + l0 * e
            self.niters += 1
            del_ = self._wrms(ynew - ycur, w2)
            ycur = ynew
            if m > 0:
                self._crate = max(0.2 * self._crate, del_ / delp)
            if del_ * min(1.0, 1.5 * self._crate) <= self._conit:
                return True, e
            if m > 0 and del_ > 2.0 * delp:
                return False, None
            delp = del_
        return False, None

    def _newton_correct(self, t_new, ypred, z1pred, w2):
        l0 = self._l[0]
        for attempt in range(2):
            self._ensure_iteration_matrix(t_new, ypred)
            ycur = ypred.copy()
            delp = 0.0
            for m in range(_MAXCOR):
                resid = ycur - l0 * (self.h * self._rhs(t_new, ycur) - z1pred) - ypred
                dy = -lu_solve(self._lu, resid)
                ycur += dy
                self.niters += 1
                del_ = self._wrms(dy, w2)
                if m > 0:
                    self._crate = max(0.2 * self._crate, del_ / delp)
                if del_ * min(1.0, 1.5 * self._crate) <= self._conit:
                    return True, (ycur - ypred) / l0
                if m > 0 and del_ > 2.0 * delp:
                    break
                delp = del_
            if not self._jac_stale and attempt == 0:
                # retry once with a fresh Jacobian before giving up
                self._jac_stale = True
                self._lu = None
                continue
            return False, None
        return False, None

    def _ensure_iteration_matrix(self, t_new, ypred):
        hl0 = self.h * self._l[0]
        if (self._lu is not None and not self._jac_stale
                and abs(hl0 / self._hl0_fact - 1.0) <= 0.3):
            return
        constant_jac = self._jac_fn is None and self._csr is not None
        if self._jac is None or (self._jac_stale and not constant_jac):
            self._jac = self._eval_jacobian(t_new, ypred)
        self._jac_stale = False
        m = -hl0 * self._jac
        m.flat[:: self.n + 1] += 1.0
        self._lu = lu_factor(m)
        self._hl0_fact = hl0
        self._crate = 0.7

    def _eval_jacobian(self, t, y):
        if self._jac_fn is not None:
            j = np.ascontiguousarray(self._jac_fn(t, y), dtype=np.complex128)
            if j.shape != (self.n, self.n):
                raise ValueError(f"jacobian shape {j.shape} != ({self.n}, {self.n})")
            return j
        if self._csr is not None:
            return self._csr.to_dense()
        # finite-difference columns
        f0 = self._rhs(t, y)
        j = np.empty((self.n, self.n), dtype=np.complex128)
        for k in range(self.n):
            dy = sqrt(2.2e-16) * (abs(y[k]) + self.config.atol + self.config.rtol)
            yp = y.copy()
            yp[k] += dy
            j[:, k] = (self._rhs(t, yp) - f0) / dy
        return j

    # -- order and step-size control ----------------------------------------

    def _order_step_control(self, est):
        q = self.q
        rtol, atol = self.config.rtol, self.config.atol
        yref = self.z[0]
        r_same = 1.0 / (_BIAS_SAME * est ** (1.0 / (q + 1)) + 1e-6)
        r_down = 0.0
        r_up = 0.0
        if q > 1:
            est_d = wrms_weighted(self.z[q], yref, atol, rtol) / self._tau1
            r_down = 1.0 / (_BIAS_DOWN * est_d ** (1.0 / q) + 1e-6)
        if q < self.config.max_order and self._e_prev is not None:
            est_u = wrms_diff_weighted(self._e, self._e_prev, yref, atol, rtol) / self._tau3
            r_up = 1.0 / (_BIAS_UP * est_u ** (1.0 / (q + 2)) + 1e-6)

        best = max(r_same, r_down, r_up)
        if best < 1.1:
            self._ialth = 3
            self._e_prev = self._e.copy()
            return
        if best == r_up:
            self.z[q + 1] = self._e * (self._l[q] / (q + 1))
            self.q = q + 1
        elif best == r_down:
            self.q = q - 1
        self._load_coeffs()
        self._rescale(max(0.1, min(best, 10.0)))

    # -- output -------------------------------------------------------------

    def interpolate_at(self, t_q: float) -> np.ndarray:
        """Dense output: evaluate the history polynomial inside the last
        accepted step [t_lo, t].  At t exactly, returns the stored state."""
        slack = 4e-15 * max(abs(self.t_lo), abs(self.t), 1.0)
        if not (self.t_lo - slack <= t_q <= self.t + slack):
            raise ValueError(f"t_q = {t_q:g} outside the current step [{self.t_lo:g}, {self.t:g}]")
        s = (t_q - self.t) / self.h
        out = np.empty(self.n, dtype=np.complex128)
        nordsieck_eval(self.z, self.q, s, out)
        return out

    def interpolate_norm_sq(self, t_q: float) -> float:
        """Squared norm of the interpolated state (no bracket check; used
        by the jump-time bisection which manages its own bracket)."""
        return nordsieck_eval_norm_sq(self.z, self.q, (t_q - self.t) / self.h)

    def advance_to(self, t_out: float) -> np.ndarray:
        """Integrate forward until t_out is inside the covered range, then
        interpolate.  Raises OdeFailure(-1) if max_steps is exhausted."""
        slack = 4e-15 * max(abs(self.t_lo), abs(t_out), 1.0)
        if t_out < self.t_lo - slack:
            raise ValueError(f"t_out = {t_out:g} is behind the solver at {self.t_lo:g}")
        nsteps = 0
        while self.t < t_out:
            if nsteps >= self.config.max_steps:
                raise OdeFailure(-1, f"max_steps = {self.config.max_steps} exhausted at t = {self.t:g}")
            self.step()
            nsteps += 1
        return self.interpolate_at(min(t_out, self.t))

    @property
    def y(self) -> np.ndarray:
        return self.z[0]
