# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 propagator for the driven eigenbasis equations."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef struct Tables:
    const double* knots
    const double* e
    const double* w
    const double* a
    const double* o
    Py_ssize_t n_int
    Py_ssize_t n


cdef inline Py_ssize_t locate(const Tables* tb, double t, Py_ssize_t g) nogil:
    while g + 1 < tb.n_int and t >= tb.knots[g + 1]:
        g += 1
    while g > 0 and t < tb.knots[g]:
        g -= 1
    return g


cdef inline double horner(const double* c, Py_ssize_t stride, double u) nogil:
    return c[0] + u * (c[stride] + u * (c[2 * stride] + u * c[3 * stride]))


cdef Py_ssize_t rhs(const Tables* tb, Py_ssize_t g, double t, const double complex* b, const double* phi,
                    double theta, double complex* db, double* dphi, double* dth,
                    double complex* z, double* wv, double* av) nogil:
    cdef Py_ssize_t n = tb.n, nn = n * n, j, k
    cdef double u, c
    cdef double complex s
    g = locate(tb, t, g)
    u = t - tb.knots[g]
    for j in range(n):
        dphi[j] = horner(tb.e + g * 4 * n + j, n, u)
        z[j] = cos(phi[j]) + 1j * sin(phi[j])
    for j in range(nn):
        wv[j] = horner(tb.w + g * 4 * nn + j, nn, u)
        av[j] = horner(tb.a + g * 4 * nn + j, nn, u)
    dth[0] = horner(tb.o + g * 4, 1, u)
    c = cos(theta)
    for j in range(n):
        s = 0
        for k in range(n):
            s = s + (wv[j * n + k] * c - 1j * av[j * n + k]) * (z[j] * z[k].conjugate()) * b[k]
        db[j] = -1j * s
    return g


def propagate(knots, e, w, a, o, b0, phi0, double theta0, double t0, double h, Py_ssize_t nsteps,
              Py_ssize_t stride):
    cdef cnp.ndarray[double, ndim=1, mode="c"] kn = np.ascontiguousarray(knots, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] ee = np.ascontiguousarray(e, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] oo = np.ascontiguousarray(o, dtype=np.float64)
    cdef Py_ssize_t n = ee.shape[2], j, step, done, k_out = 1, g = 0
    cdef Py_ssize_t n_out = nsteps // stride + (1 if nsteps % stride else 0) + 1
    cdef Tables tb
    tb.knots = &kn[0]
    tb.e = &ee[0, 0, 0]
    tb.w = &ww[0, 0, 0, 0]
    tb.a = &aa[0, 0, 0, 0]
    tb.o = &oo[0, 0]
    tb.n_int = ee.shape[0]
    tb.n = n

    cdef cnp.ndarray[double complex, ndim=2, mode="c"] bs = np.empty((n_out, n), dtype=np.complex128)
    cdef cnp.ndarray[double, ndim=2, mode="c"] ps = np.empty((n_out, n))
    cdef cnp.ndarray[double, ndim=1, mode="c"] ts = np.empty(n_out)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ths = np.empty(n_out)

    cdef double complex* buf = <double complex*> malloc(7 * n * sizeof(double complex))
    cdef double* rbuf = <double*> malloc((7 * n + 2 * n * n) * sizeof(double))
    if buf == NULL or rbuf == NULL:
        free(buf)
        free(rbuf)
        raise MemoryError()
    cdef double complex* b = buf
    cdef double complex* tmp = buf + n
    cdef double complex* k1 = buf + 2 * n
    cdef double complex* k2 = buf + 3 * n
    cdef double complex* k3 = buf + 4 * n
    cdef double complex* k4 = buf + 5 * n
    cdef double complex* z = buf + 6 * n
    cdef double* phi = rbuf
    cdef double* ptmp = rbuf + n
    cdef double* p1 = rbuf + 2 * n
    cdef double* p2 = rbuf + 3 * n
    cdef double* p3 = rbuf + 4 * n
    cdef double* p4 = rbuf + 5 * n
    cdef double* wv = rbuf + 7 * n
    cdef double* av = rbuf + 7 * n + n * n
    cdef double theta = theta0, t1, t2, t3, t4, t
    cdef double complex[:] b_in = np.ascontiguousarray(b0, dtype=np.complex128)
    cdef double[:] p_in = np.ascontiguousarray(phi0, dtype=np.float64)

    for j in range(n):
        b[j] = b_in[j]
        phi[j] = p_in[j]
        bs[0, j] = b[j]
        ps[0, j] = phi[j]
    ts[0] = t0
    ths[0] = theta

    try:
        with nogil:
            for step in range(nsteps):
                t = t0 + step * h
                g = rhs(&tb, g, t, b, phi, theta, k1, p1, &t1, z, wv, av)
                for j in range(n):
                    tmp[j] = b[j] + 0.5 * h * k1[j]
                    ptmp[j] = phi[j] + 0.5 * h * p1[j]
                g = rhs(&tb, g, t + 0.5 * h, tmp, ptmp, theta + 0.5 * h * t1, k2, p2, &t2, z, wv, av)
                for j in range(n):
                    tmp[j] = b[j] + 0.5 * h * k2[j]
                    ptmp[j] = phi[j] + 0.5 * h * p2[j]
                g = rhs(&tb, g, t + 0.5 * h, tmp, ptmp, theta + 0.5 * h * t2, k3, p3, &t3, z, wv, av)
                for j in range(n):
                    tmp[j] = b[j] + h * k3[j]
                    ptmp[j] = phi[j] + h * p3[j]
                g = rhs(&tb, g, t + h, tmp, ptmp, theta + h * t3, k4, p4, &t4, z, wv, av)
                for j in range(n):
                    b[j] = b[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                    phi[j] = phi[j] + h / 6.0 * (p1[j] + 2.0 * p2[j] + 2.0 * p3[j] + p4[j])
                theta = theta + h / 6.0 * (t1 + 2.0 * t2 + 2.0 * t3 + t4)
                done = step + 1
                if done % stride == 0 or done == nsteps:
                    for j in range(n):
                        bs[k_out, j] = b[j]
                        ps[k_out, j] = phi[j]
                    ts[k_out] = t0 + done * h
                    ths[k_out] = theta
                    k_out += 1
    finally:
        free(buf)
        free(rbuf)
    return ts[:k_out], bs[:k_out], ps[:k_out], ths[:k_out]
