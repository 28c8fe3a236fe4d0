"""Hot numeric kernels for range-based position estimation.

The Gauss-Newton solver below runs tens of thousands of times per
mission (every robot, every tick), so it is compiled with numba when
available. Setting FLEETCHAIN_NO_NUMBA=1 selects the plain-Python/numpy
path instead; both paths share the same function body, so they produce
the same floating-point results. `benchmarks/bench_multilateration.py`
compares the two.

Status codes returned by the solver:
    0  converged (residual gradient norm below tolerance)
    1  stopped without convergence (iteration/step limits)
    2  degenerate geometry (rank-deficient normal matrix)
"""

from __future__ import annotations

import math
import os

import numpy as np

STATUS_CONVERGED = 0
STATUS_NO_CONVERGENCE = 1
STATUS_DEGENERATE = 2


def _sum_sq_residuals(anchors, dists, px, py, pz):
    s = 0.0
    for i in range(anchors.shape[0]):
        dx = px - anchors[i, 0]
        dy = py - anchors[i, 1]
        dz = pz - anchors[i, 2]
        g = math.sqrt(dx * dx + dy * dy + dz * dz) - dists[i]
        s += g * g
    return s


def _gauss_newton(anchors, dists, x0, fix_z, max_iter, grad_tol, step_tol, max_halvings):
    """Minimize sum_i (|p - a_i| - d_i)^2 from x0 with damped Gauss-Newton.

    anchors: (n, 3) float64, dists: (n,) float64, x0: (3,) float64.
    fix_z holds p_z at x0[2] and solves the 2-unknown problem.
    Returns (p, residual_rms, iterations, status).
    """
    n = anchors.shape[0]
    px, py, pz = x0[0], x0[1], x0[2]
    s_cur = _sum_sq_residuals(anchors, dists, px, py, pz)
    status = STATUS_NO_CONVERGENCE
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        # normal equations A d = b with A = J^T J, b = -J^T g
        a00 = 0.0
        a01 = 0.0
        a02 = 0.0
        a11 = 0.0
        a12 = 0.0
        a22 = 0.0
        b0 = 0.0
        b1 = 0.0
        b2 = 0.0
        for i in range(n):
            dx = px - anchors[i, 0]
            dy = py - anchors[i, 1]
            dz = pz - anchors[i, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < 1e-12:
                d = 1e-12
            g = d - dists[i]
            jx = dx / d
            jy = dy / d
            jz = dz / d
            a00 += jx * jx
            a01 += jx * jy
            a02 += jx * jz
            a11 += jy * jy
            a12 += jy * jz
            a22 += jz * jz
            b0 -= jx * g
            b1 -= jy * g
            b2 -= jz * g
        if fix_z:
            grad_norm = 2.0 * math.sqrt(b0 * b0 + b1 * b1)
        else:
            grad_norm = 2.0 * math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
        if grad_norm < grad_tol:
            status = STATUS_CONVERGED
            break
        if fix_z:
            det = a00 * a11 - a01 * a01
            if abs(det) < 1e-12:
                status = STATUS_DEGENERATE
                break
            sx = (b0 * a11 - b1 * a01) / det
            sy = (a00 * b1 - a01 * b0) / det
            sz = 0.0
        else:
            det = (a00 * (a11 * a22 - a12 * a12)
                   - a01 * (a01 * a22 - a12 * a02)
                   + a02 * (a01 * a12 - a11 * a02))
            if abs(det) < 1e-10:
                status = STATUS_DEGENERATE
                break
            sx = (b0 * (a11 * a22 - a12 * a12)
                  - a01 * (b1 * a22 - a12 * b2)
                  + a02 * (b1 * a12 - a11 * b2)) / det
            sy = (a00 * (b1 * a22 - b2 * a12)
                  - b0 * (a01 * a22 - a12 * a02)
                  + a02 * (a01 * b2 - b1 * a02)) / det
            sz = (a00 * (a11 * b2 - a12 * b1)
                  - a01 * (a01 * b2 - a12 * b0)
                  + b0 * (a01 * a12 - a11 * a02)) / det
        # halve the step while it does not reduce the objective
        alpha = 1.0
        improved = False
        s_new = s_cur
        for _ in range(max_halvings + 1):
            tx = px + alpha * sx
            ty = py + alpha * sy
            tz = pz + alpha * sz
            s_try = _sum_sq_residuals(anchors, dists, tx, ty, tz)
            if s_try < s_cur:
                px, py, pz = tx, ty, tz
                s_new = s_try
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        s_cur = s_new
        step = alpha * math.sqrt(sx * sx + sy * sy + sz * sz)
        if step < step_tol:
            break
    # final gradient decides the converged flag regardless of exit path
    b0 = 0.0
    b1 = 0.0
    b2 = 0.0
    for i in range(n):
        dx = px - anchors[i, 0]
        dy = py - anchors[i, 1]
        dz = pz - anchors[i, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d < 1e-12:
            d = 1e-12
        g = d - dists[i]
        b0 += dx / d * g
        b1 += dy / d * g
        b2 += dz / d * g
    if fix_z:
        grad_norm = 2.0 * math.sqrt(b0 * b0 + b1 * b1)
    else:
        grad_norm = 2.0 * math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
    if status != STATUS_DEGENERATE:
        status = STATUS_CONVERGED if grad_norm < grad_tol else STATUS_NO_CONVERGENCE
    out = np.empty(3, dtype=np.float64)
    out[0] = px
    out[1] = py
    out[2] = pz
    rms = math.sqrt(s_cur / n)
    return out, rms, iterations, status


def _env_disables_numba() -> bool:
    return os.environ.get("FLEETCHAIN_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")


USING_NUMBA = False
gauss_newton = _gauss_newton

if not _env_disables_numba():
    try:
        from numba import njit

        gauss_newton = njit(cache=True)(_gauss_newton)
        _sum_sq_residuals_py = _sum_sq_residuals
        _sum_sq_residuals = njit(cache=True)(_sum_sq_residuals)
        USING_NUMBA = True
    except ImportError:
        pass


def warmup() -> None:
    """Trigger JIT compilation so timed code paths never pay for it."""
    anchors = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    dists = np.array([0.5, 0.7, 0.7, 0.7])
    gauss_newton(anchors, dists, np.array([0.2, 0.2, 0.2]), False, 100, 1e-9, 1e-10, 8)
    gauss_newton(anchors, dists, np.array([0.2, 0.2, 0.0]), True, 100, 1e-9, 1e-10, 8)
