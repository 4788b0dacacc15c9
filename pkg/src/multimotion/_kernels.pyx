# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rigid-transform kernels.

Same contract as :mod:`multimotion._kernels_numpy`; that module is the
readable reference. Inputs must be C-contiguous float64 arrays.
"""

from libc.math cimport acos, cos, fabs, sin, sqrt
from libc.string cimport memset

import numpy as np

from .errors import AngleAtPi

cdef double SMALL = 1e-6
cdef double PI = 3.14159265358979323846
cdef double LOG_MARGIN = 1e-6
cdef double JAC_MARGIN = 1e-3

SMALL_ANGLE = SMALL
LOG_ANGLE_MARGIN = LOG_MARGIN
JACOBIAN_ANGLE_MARGIN = JAC_MARGIN


cdef void _skew3(const double* v, double* out) noexcept nogil:
    out[0] = 0.0;   out[1] = -v[2]; out[2] = v[1]
    out[3] = v[2];  out[4] = 0.0;   out[5] = -v[0]
    out[6] = -v[1]; out[7] = v[0];  out[8] = 0.0


cdef void _mat3_mul(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += a[3 * i + k] * b[3 * k + j]
            out[3 * i + j] = acc


cdef void _mat3_vec(const double* a, const double* v, double* out) noexcept nogil:
    cdef int i, k
    for i in range(3):
        out[i] = a[3 * i] * v[0] + a[3 * i + 1] * v[1] + a[3 * i + 2] * v[2]


cdef void _so3_exp(const double* phi, double* rot) noexcept nogil:
    cdef double angle = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double a, b, a2, s, omc
    cdef double k[9]
    cdef double kk[9]
    cdef int i
    a2 = angle * angle
    if angle < SMALL:
        a = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        b = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
    else:
        s = sin(angle)
        omc = 2.0 * sin(0.5 * angle) * sin(0.5 * angle)
        a = s / angle
        b = omc / a2
    _skew3(phi, k)
    _mat3_mul(k, k, kk)
    for i in range(9):
        rot[i] = a * k[i] + b * kk[i]
    rot[0] += 1.0
    rot[4] += 1.0
    rot[8] += 1.0


cdef int _so3_log(const double* rot, double* phi) noexcept nogil:
    # Returns 1 on the pi singularity, 0 otherwise.
    cdef double trace = rot[0] + rot[4] + rot[8]
    cdef double arg = 0.5 * (trace - 1.0)
    cdef double angle, scale
    if arg > 1.0:
        arg = 1.0
    if arg < -1.0:
        arg = -1.0
    angle = acos(arg)
    if angle >= PI - LOG_MARGIN:
        return 1
    if angle < SMALL:
        scale = 0.5
    else:
        scale = 0.5 * angle / sin(angle)
    phi[0] = scale * (rot[7] - rot[5])
    phi[1] = scale * (rot[2] - rot[6])
    phi[2] = scale * (rot[3] - rot[1])
    return 0


cdef void _so3_left_jacobian(const double* phi, double* out) noexcept nogil:
    cdef double angle = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double b, c, a2, s, omc
    cdef double k[9]
    cdef double kk[9]
    cdef int i
    a2 = angle * angle
    if angle < SMALL:
        b = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
        c = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
    else:
        s = sin(angle)
        omc = 2.0 * sin(0.5 * angle) * sin(0.5 * angle)
        b = omc / a2
        c = (angle - s) / (a2 * angle)
    _skew3(phi, k)
    _mat3_mul(k, k, kk)
    for i in range(9):
        out[i] = b * k[i] + c * kk[i]
    out[0] += 1.0
    out[4] += 1.0
    out[8] += 1.0


cdef int _so3_left_jacobian_inv(const double* phi, double* out) noexcept nogil:
    cdef double angle = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double coeff, a2, half
    cdef double k[9]
    cdef double kk[9]
    cdef int i
    if angle >= PI - JAC_MARGIN:
        return 1
    a2 = angle * angle
    if angle < SMALL:
        coeff = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    else:
        half = 0.5 * angle
        coeff = (1.0 - half * cos(half) / sin(half)) / a2
    _skew3(phi, k)
    _mat3_mul(k, k, kk)
    for i in range(9):
        out[i] = -0.5 * k[i] + coeff * kk[i]
    out[0] += 1.0
    out[4] += 1.0
    out[8] += 1.0
    return 0


cdef void _q_block(const double* rho, const double* phi, double* out) noexcept nogil:
    cdef double angle = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double a2 = angle * angle
    cdef double c1, c2, c3, a4, s, omc, m5
    cdef double rx[9]
    cdef double px[9]
    cdef double pxrx[9]
    cdef double rxpx[9]
    cdef double pxpx[9]
    cdef double t1[9]
    cdef double t2[9]
    cdef double t3[9]
    cdef double t4[9]
    cdef int i
    if angle < 1e-2:
        c1 = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
        c2 = 1.0 / 24.0 - a2 / 720.0 + a2 * a2 / 40320.0
        c3 = 1.0 / 120.0 - a2 / 2520.0 + a2 * a2 / 120960.0
    else:
        a4 = a2 * a2
        s = sin(angle)
        omc = 2.0 * sin(0.5 * angle) * sin(0.5 * angle)
        c1 = (angle - s) / (a2 * angle)
        c2 = (0.5 * a2 - omc) / a4
        m5 = (angle - s - a2 * angle / 6.0) / (a4 * angle)
        c3 = 0.5 * (3.0 * m5 + c2)
    _skew3(rho, rx)
    _skew3(phi, px)
    _mat3_mul(px, rx, pxrx)
    _mat3_mul(rx, px, rxpx)
    _mat3_mul(px, px, pxpx)
    _mat3_mul(px, rxpx, t1)       # px rx px
    _mat3_mul(pxpx, rx, t2)       # px px rx
    _mat3_mul(rx, pxpx, t3)       # rx px px
    _mat3_mul(pxrx, px, t4)       # px rx px (same as t1)
    for i in range(9):
        out[i] = 0.5 * rx[i] + c1 * (pxrx[i] + rxpx[i] + t1[i]) + c2 * (t2[i] + t3[i] - 3.0 * t4[i])
    _mat3_mul(pxrx, pxpx, t1)     # px rx px px
    _mat3_mul(pxpx, rxpx, t2)     # px px rx px
    for i in range(9):
        out[i] += c3 * (t1[i] + t2[i])


cdef void _curly6(const double* xi, double* out) noexcept nogil:
    cdef double k[9]
    cdef double kr[9]
    cdef int i, j
    memset(out, 0, 36 * sizeof(double))
    _skew3(xi + 3, k)
    _skew3(xi, kr)
    for i in range(3):
        for j in range(3):
            out[6 * i + j] = k[3 * i + j]
            out[6 * (i + 3) + (j + 3)] = k[3 * i + j]
            out[6 * i + (j + 3)] = kr[3 * i + j]


cdef int _left_jacobian_inv6(const double* xi, double* out) noexcept nogil:
    cdef double jinv[9]
    cdef double q[9]
    cdef double tmp[9]
    cdef double top[9]
    cdef int i, j
    if _so3_left_jacobian_inv(xi + 3, jinv):
        return 1
    _q_block(xi, xi + 3, q)
    _mat3_mul(jinv, q, tmp)
    _mat3_mul(tmp, jinv, top)
    memset(out, 0, 36 * sizeof(double))
    for i in range(3):
        for j in range(3):
            out[6 * i + j] = jinv[3 * i + j]
            out[6 * (i + 3) + (j + 3)] = jinv[3 * i + j]
            out[6 * i + (j + 3)] = -top[3 * i + j]
    return 0


def skew(double[::1] v):
    out = np.empty((3, 3))
    cdef double[:, ::1] o = out
    cdef double buf[9]
    _skew3(&v[0], buf)
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = buf[3 * i + j]
    return out


def so3_exp(double[::1] phi):
    out = np.empty((3, 3))
    cdef double[:, ::1] o = out
    cdef double buf[9]
    _so3_exp(&phi[0], buf)
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = buf[3 * i + j]
    return out


def so3_log(double[:, ::1] rot):
    cdef double buf[9]
    cdef double phi[3]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            buf[3 * i + j] = rot[i, j]
    if _so3_log(buf, phi):
        raise AngleAtPi("rotation angle within 1e-6 of pi")
    out = np.empty(3)
    cdef double[::1] o = out
    for i in range(3):
        o[i] = phi[i]
    return out


def so3_left_jacobian(double[::1] phi):
    out = np.empty((3, 3))
    cdef double[:, ::1] o = out
    cdef double buf[9]
    _so3_left_jacobian(&phi[0], buf)
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = buf[3 * i + j]
    return out


def so3_left_jacobian_inv(double[::1] phi):
    cdef double buf[9]
    if _so3_left_jacobian_inv(&phi[0], buf):
        raise AngleAtPi("rotation angle too close to pi for inverse")
    out = np.empty((3, 3))
    cdef double[:, ::1] o = out
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = buf[3 * i + j]
    return out


def hat(double[::1] xi):
    out = np.zeros((4, 4))
    cdef double[:, ::1] o = out
    cdef double k[9]
    _skew3(&xi[0] + 3, k)
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = k[3 * i + j]
        o[i, 3] = xi[i]
    return out


def exp(double[::1] xi):
    out = np.zeros((4, 4))
    cdef double[:, ::1] o = out
    cdef double rot[9]
    cdef double jac[9]
    cdef double r[3]
    _so3_exp(&xi[0] + 3, rot)
    _so3_left_jacobian(&xi[0] + 3, jac)
    _mat3_vec(jac, &xi[0], r)
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = rot[3 * i + j]
        o[i, 3] = r[i]
    o[3, 3] = 1.0
    return out


def log(double[:, ::1] transform):
    cdef double rot[9]
    cdef double phi[3]
    cdef double jinv[9]
    cdef double rho[3]
    cdef double trans[3]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            rot[3 * i + j] = transform[i, j]
        trans[i] = transform[i, 3]
    if _so3_log(rot, phi):
        raise AngleAtPi("rotation angle within 1e-6 of pi")
    _so3_left_jacobian_inv(phi, jinv)
    _mat3_vec(jinv, trans, rho)
    out = np.empty(6)
    cdef double[::1] o = out
    for i in range(3):
        o[i] = rho[i]
        o[i + 3] = phi[i]
    return out


def curly_hat(double[::1] xi):
    out = np.empty((6, 6))
    cdef double[:, ::1] o = out
    cdef double buf[36]
    _curly6(&xi[0], buf)
    cdef int i, j
    for i in range(6):
        for j in range(6):
            o[i, j] = buf[6 * i + j]
    return out


def adjoint(double[:, ::1] transform):
    out = np.zeros((6, 6))
    cdef double[:, ::1] o = out
    cdef double r[3]
    cdef double rot[9]
    cdef double rx[9]
    cdef double rxrot[9]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            rot[3 * i + j] = transform[i, j]
        r[i] = transform[i, 3]
    _skew3(r, rx)
    _mat3_mul(rx, rot, rxrot)
    for i in range(3):
        for j in range(3):
            o[i, j] = rot[3 * i + j]
            o[i + 3, j + 3] = rot[3 * i + j]
            o[i, j + 3] = rxrot[3 * i + j]
    return out


def odot(double[::1] p):
    out = np.zeros((4, 6))
    cdef double[:, ::1] o = out
    cdef double eps[3]
    cdef double sk[9]
    cdef int i, j
    for i in range(3):
        eps[i] = p[i]
    _skew3(eps, sk)
    for i in range(3):
        o[i, i] = p[3]
        for j in range(3):
            o[i, j + 3] = -sk[3 * i + j]
    return out


def left_jacobian(double[::1] xi):
    out = np.zeros((6, 6))
    cdef double[:, ::1] o = out
    cdef double jac[9]
    cdef double q[9]
    cdef int i, j
    _so3_left_jacobian(&xi[0] + 3, jac)
    _q_block(&xi[0], &xi[0] + 3, q)
    for i in range(3):
        for j in range(3):
            o[i, j] = jac[3 * i + j]
            o[i + 3, j + 3] = jac[3 * i + j]
            o[i, j + 3] = q[3 * i + j]
    return out


def left_jacobian_inv(double[::1] xi):
    cdef double buf[36]
    if _left_jacobian_inv6(&xi[0], buf):
        raise AngleAtPi("rotation angle too close to pi for inverse")
    out = np.empty((6, 6))
    cdef double[:, ::1] o = out
    cdef int i, j
    for i in range(6):
        for j in range(6):
            o[i, j] = buf[6 * i + j]
    return out


cdef void _mat6_mul(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(6):
        for j in range(6):
            acc = 0.0
            for k in range(6):
                acc += a[6 * i + k] * b[6 * k + j]
            out[6 * i + j] = acc


def jinv_vec_jacobian(double[::1] xi, double[::1] vec):
    """Exact derivative of xi -> left_jacobian_inv(xi) @ vec (6x6)."""
    cdef double a[36]
    cdef double jinv[36]
    cdef double v[6]
    cdef double basis[6]
    cdef double bdir[216]
    cdef double a_power[36]
    cdef double tr[216]
    cdef double dj[216]
    cdef double tmp[36]
    cdef double tmp2[36]
    cdef double djv[6]
    cdef double fact, scale, mx, c
    cdef int i, j, n, direction
    _curly6(&xi[0], a)
    if _left_jacobian_inv6(&xi[0], jinv):
        raise AngleAtPi("rotation angle too close to pi for inverse")
    for i in range(6):
        v[i] = 0.0
        for j in range(6):
            v[i] += jinv[6 * i + j] * vec[j]
    for direction in range(6):
        for i in range(6):
            basis[i] = 1.0 if i == direction else 0.0
        _curly6(basis, bdir + 36 * direction)
    # Top-right block of [[a, b], [0, a]]^n: tr_n = a tr_{n-1} + b a^{n-1}.
    memset(a_power, 0, 36 * sizeof(double))
    for i in range(6):
        a_power[6 * i + i] = 1.0
    memset(tr, 0, 216 * sizeof(double))
    memset(dj, 0, 216 * sizeof(double))
    fact = 1.0
    for n in range(1, 40):
        fact *= (n + 1.0)
        scale = 1.0 / fact
        mx = 0.0
        for direction in range(6):
            _mat6_mul(a, tr + 36 * direction, tmp)
            _mat6_mul(bdir + 36 * direction, a_power, tmp2)
            for i in range(36):
                c = tmp[i] + tmp2[i]
                tr[36 * direction + i] = c
                c = fabs(c * scale)
                if c > mx:
                    mx = c
                dj[36 * direction + i] += tr[36 * direction + i] * scale
        _mat6_mul(a, a_power, tmp)
        for i in range(36):
            a_power[i] = tmp[i]
        if mx < 1e-18:
            break
    out = np.empty((6, 6))
    cdef double[:, ::1] o = out
    for direction in range(6):
        for i in range(6):
            djv[i] = 0.0
            for j in range(6):
                djv[i] += dj[36 * direction + 6 * i + j] * v[j]
        for i in range(6):
            c = 0.0
            for j in range(6):
                c -= jinv[6 * i + j] * djv[j]
            o[i, direction] = c
    return out
