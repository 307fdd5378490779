# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled IMEX time-marching kernels.

Same signatures and semantics as :mod:`lvinv._kernels_py`; see there for the
discretisation. Loops run without the GIL so independent solves can share
threads.
"""
import numpy as np
from libc.math cimport isfinite
from libc.stdlib cimport malloc, free

BACKEND = "cython"

cdef enum:
    BACKWARD_EULER = 0
    CRANK_NICOLSON = 1


cdef inline double ipow(double x, int n) nogil:
    cdef double r = 1.0
    while n > 0:
        if n & 1:
            r *= x
        x *= x
        n >>= 1
    return r


cdef void factor(double s, Py_ssize_t N, double* cp, double* inv) nogil:
    # (1 + 2s) on the diagonal, -s off it, -2s at the mirrored boundary entries
    cdef Py_ssize_t i
    cdef double b = 1.0 + 2.0 * s
    cdef double den
    inv[0] = 1.0 / b
    cp[0] = -2.0 * s * inv[0]
    for i in range(1, N):
        den = b + s * cp[i - 1]
        inv[i] = 1.0 / den
        cp[i] = -s * inv[i]
    den = b + 2.0 * s * cp[N - 1]
    inv[N] = 1.0 / den


cdef void tsolve(double s, Py_ssize_t N, const double* cp, const double* inv,
                 double* rhs, double* out) nogil:
    cdef Py_ssize_t i
    rhs[0] = rhs[0] * inv[0]
    for i in range(1, N):
        rhs[i] = (rhs[i] + s * rhs[i - 1]) * inv[i]
    rhs[N] = (rhs[N] + 2.0 * s * rhs[N - 1]) * inv[N]
    out[N] = rhs[N]
    for i in range(N - 1, -1, -1):
        out[i] = rhs[i] - cp[i] * out[i + 1]


cdef inline double second_diff(const double[:, ::1] W, Py_ssize_t n, Py_ssize_t i, Py_ssize_t N) nogil:
    if i == 0:
        return 2.0 * (W[n, 1] - W[n, 0])
    if i == N:
        return 2.0 * (W[n, N - 1] - W[n, N])
    return W[n, i - 1] - 2.0 * W[n, i] + W[n, i + 1]


cdef inline double react(const double[:, ::1] terms, double p, double q) nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0, den
    for k in range(terms.shape[0]):
        if terms[k, 2] == 0.0:
            den = 2.0
        else:
            den = 1.0 + p
        acc += terms[k, 3] * ipow(p, <int>terms[k, 0]) * ipow(q, <int>terms[k, 1]) / den
    return acc


cdef int march(double[:, ::1] U, double[:, ::1] V,
               const double[:, ::1] tF, const double[:, ::1] tG,
               const double[:, ::1] jac, const double[:, ::1] Su, const double[:, ::1] Sv,
               bint linear, bint has_src,
               double d1, double d2, double dx, double dt, int steps, int scheme,
               bint clip) nogil:
    cdef Py_ssize_t N = U.shape[1] - 1
    cdef Py_ssize_t i
    cdef int n
    cdef double theta = 1.0 if scheme == BACKWARD_EULER else 0.5
    cdef double su = theta * dt * d1 / (dx * dx)
    cdef double sv = theta * dt * d2 / (dx * dx)
    cdef double eu = (1.0 - theta) * dt * d1 / (dx * dx)
    cdef double ev = (1.0 - theta) * dt * d2 / (dx * dx)
    cdef double ru, rv, p, q
    cdef int status = -1
    cdef double* buf = <double*> malloc(10 * (N + 1) * sizeof(double))
    if buf == NULL:
        return -2
    cdef double* cpu = buf
    cdef double* invu = buf + (N + 1)
    cdef double* cpv = buf + 2 * (N + 1)
    cdef double* invv = buf + 3 * (N + 1)
    cdef double* rhs_u = buf + 4 * (N + 1)
    cdef double* rhs_v = buf + 5 * (N + 1)
    cdef double* Ru = buf + 6 * (N + 1)
    cdef double* Rv = buf + 7 * (N + 1)
    cdef double* Ru_old = buf + 8 * (N + 1)
    cdef double* Rv_old = buf + 9 * (N + 1)

    factor(su, N, cpu, invu)
    factor(sv, N, cpv, invv)
    for n in range(steps):
        for i in range(N + 1):
            p = U[n, i]
            q = V[n, i]
            if linear:
                ru = jac[0, 0] * p + jac[0, 1] * q
                rv = jac[1, 0] * p + jac[1, 1] * q
                if has_src:
                    ru += Su[n, i]
                    rv += Sv[n, i]
            else:
                ru = react(tF, p, q)
                rv = react(tG, p, q)
            Ru[i] = ru
            Rv[i] = rv
            if scheme == CRANK_NICOLSON:
                if n == 0:
                    Ru_old[i] = ru
                    Rv_old[i] = rv
                rhs_u[i] = p + eu * second_diff(U, n, i, N) + dt * (1.5 * ru - 0.5 * Ru_old[i])
                rhs_v[i] = q + ev * second_diff(V, n, i, N) + dt * (1.5 * rv - 0.5 * Rv_old[i])
                Ru_old[i] = ru
                Rv_old[i] = rv
            else:
                rhs_u[i] = p + dt * ru
                rhs_v[i] = q + dt * rv
        tsolve(su, N, cpu, invu, rhs_u, &U[n + 1, 0])
        tsolve(sv, N, cpv, invv, rhs_v, &V[n + 1, 0])
        for i in range(N + 1):
            if clip:
                if U[n + 1, i] < 0.0:
                    U[n + 1, i] = 0.0
                if V[n + 1, i] < 0.0:
                    V[n + 1, i] = 0.0
            if not (isfinite(U[n + 1, i]) and isfinite(V[n + 1, i])):
                status = n + 1
        if status >= 0:
            break
    free(buf)
    return status


_EMPTY = np.zeros((1, 1))


def march_nonlinear(u_init, v_init, terms_F, terms_G, double d1, double d2, double dx,
                    double dt, int steps, int scheme, bint clip=False):
    N1 = len(u_init)
    U = np.empty((steps + 1, N1))
    V = np.empty((steps + 1, N1))
    U[0] = u_init
    V[0] = v_init
    cdef double[:, ::1] Um = U
    cdef double[:, ::1] Vm = V
    cdef const double[:, ::1] tF = np.ascontiguousarray(terms_F, dtype=float).reshape(-1, 4)
    cdef const double[:, ::1] tG = np.ascontiguousarray(terms_G, dtype=float).reshape(-1, 4)
    cdef const double[:, ::1] e = _EMPTY
    cdef int status
    with nogil:
        status = march(Um, Vm, tF, tG, e, e, e, False, False, d1, d2, dx, dt, steps, scheme, clip)
    if status == -2:
        raise MemoryError()
    return U, V, status


def march_linear(u_init, v_init, jac, src_u, src_v, double d1, double d2, double dx,
                 double dt, int steps, int scheme):
    N1 = len(u_init)
    U = np.empty((steps + 1, N1))
    V = np.empty((steps + 1, N1))
    U[0] = u_init
    V[0] = v_init
    cdef double[:, ::1] Um = U
    cdef double[:, ::1] Vm = V
    cdef const double[:, ::1] J = np.ascontiguousarray(jac, dtype=float).reshape(2, 2)
    cdef bint has_src = src_u is not None
    cdef const double[:, ::1] Su = np.ascontiguousarray(src_u, dtype=float) if has_src else _EMPTY
    cdef const double[:, ::1] Sv = np.ascontiguousarray(src_v, dtype=float) if has_src else _EMPTY
    cdef const double[:, ::1] e = np.zeros((0, 4))
    cdef int status
    with nogil:
        status = march(Um, Vm, e, e, J, Su, Sv, True, has_src, d1, d2, dx, dt, steps, scheme, False)
    if status == -2:
        raise MemoryError()
    return U, V, status
