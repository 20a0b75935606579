# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled rate term of the monotone CDF density (see eprc.density)."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NPARAM = 43


cdef extern from "density_kernel.h":
    double eprc_nll_f32(const float *x, Py_ssize_t n, const float *param, float floor_,
                        float *dx, double *gparam) nogil
    double eprc_nll_f64(const double *x, Py_ssize_t n, const double *param, double floor_,
                        double *dx, double *gparam) nogil
    void eprc_logits_f64(const double *x, Py_ssize_t n, const double *param, double *out) nogil


def nll_column(x, param, double floor, bint want_grad=True):
    """Bits of one column under one packed parameter vector.

    Returns (bits, dbits/dx or None, dbits/dparam (float64) or None)."""
    cdef Py_ssize_t n
    cdef double total
    cdef double[::1] gp
    cdef float[::1] xf, pf, dxf
    cdef double[::1] xd, pd, dxd
    g_arr = np.zeros(NPARAM, dtype=np.float64) if want_grad else None
    gp = g_arr if want_grad else None
    if x.dtype == np.float32:
        xf = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
        pf = np.ascontiguousarray(param, dtype=np.float32)
        if pf.shape[0] != NPARAM:
            raise ValueError("packed parameter vector must have 43 entries")
        n = xf.shape[0]
        dx_arr = np.empty(n, dtype=np.float32) if want_grad else None
        if n == 0:
            return 0.0, dx_arr, g_arr
        if want_grad:
            dxf = dx_arr
            with nogil:
                total = eprc_nll_f32(&xf[0], n, &pf[0], <float>floor, &dxf[0], &gp[0])
        else:
            with nogil:
                total = eprc_nll_f32(&xf[0], n, &pf[0], <float>floor, NULL, NULL)
    else:
        xd = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
        pd = np.ascontiguousarray(param, dtype=np.float64)
        if pd.shape[0] != NPARAM:
            raise ValueError("packed parameter vector must have 43 entries")
        n = xd.shape[0]
        dx_arr = np.empty(n, dtype=np.float64) if want_grad else None
        if n == 0:
            return 0.0, dx_arr, g_arr
        if want_grad:
            dxd = dx_arr
            with nogil:
                total = eprc_nll_f64(&xd[0], n, &pd[0], floor, &dxd[0], &gp[0])
        else:
            with nogil:
                total = eprc_nll_f64(&xd[0], n, &pd[0], floor, NULL, NULL)
    return total, dx_arr, g_arr


def logits(x, param):
    cdef double[::1] xd = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef double[::1] pd = np.ascontiguousarray(param, dtype=np.float64)
    out_arr = np.empty(xd.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    if xd.shape[0]:
        with nogil:
            eprc_logits_f64(&xd[0], xd.shape[0], &pd[0], &out[0])
    return out_arr
