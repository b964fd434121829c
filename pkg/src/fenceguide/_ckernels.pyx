# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contracts as ``fenceguide._pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def hysteresis(strong, weak):
    cdef cnp.uint8_t[:, ::1] s = np.ascontiguousarray(strong, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] wk = np.ascontiguousarray(weak, dtype=np.uint8)
    cdef Py_ssize_t h = wk.shape[0], w = wk.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    stack_arr = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t top = 0, r, c, rr, cc, p, r0, c0
    cdef int dr, dc

    for r0 in range(h):
        for c0 in range(w):
            if s[r0, c0] == 0 or wk[r0, c0] == 0 or out[r0, c0]:
                continue
            out[r0, c0] = 1
            stack[0] = r0 * w + c0
            top = 1
            while top > 0:
                top -= 1
                p = stack[top]
                r = p // w
                c = p - r * w
                for dr in range(-1, 2):
                    rr = r + dr
                    if rr < 0 or rr >= h:
                        continue
                    for dc in range(-1, 2):
                        cc = c + dc
                        if cc < 0 or cc >= w:
                            continue
                        if wk[rr, cc] and not out[rr, cc]:
                            out[rr, cc] = 1
                            stack[top] = rr * w + cc
                            top += 1
    return out_arr


def directional_response(y, offsets):
    offsets = np.ascontiguousarray(offsets, dtype=np.intp)
    cdef Py_ssize_t pad = int(np.abs(offsets).max()) if offsets.size else 0
    y = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t h = y.shape[0], w = y.shape[1]
    cdef Py_ssize_t wp = w + 2 * pad
    padded = np.zeros((h + 2 * pad, wp), dtype=np.float64)
    padded[pad:pad + h, pad:pad + w] = y
    cdef double[::1] yp = padded.ravel()
    # flat offsets into the padded image, same cell order as ``offsets``
    cdef Py_ssize_t[:, ::1] flat = np.ascontiguousarray(offsets[:, :, 0] * wp + offsets[:, :, 1])
    cdef Py_ssize_t nf = flat.shape[0], nc = flat.shape[1]
    resp_arr = np.zeros((h, w), dtype=np.float64)
    arg_arr = np.zeros((h, w), dtype=np.int8)
    cdef double[:, ::1] resp = resp_arr
    cdef cnp.int8_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t r, c, k, j, base
    cdef double acc, best
    cdef cnp.int8_t bk

    for r in range(h):
        for c in range(w):
            base = (r + pad) * wp + c + pad
            best = 0.0
            bk = 0
            for k in range(nf):
                acc = 0.0
                for j in range(nc):
                    acc = acc + yp[base + flat[k, j]]
                if k == 0 or acc > best:
                    best = acc
                    bk = <cnp.int8_t>k
            resp[r, c] = best
            arg[r, c] = bk
    return resp_arr, arg_arr


def directional_scatter(argmax, offsets, double scale):
    cdef cnp.int8_t[:, ::1] arg = np.ascontiguousarray(argmax, dtype=np.int8)
    cdef Py_ssize_t[:, :, ::1] off = np.ascontiguousarray(offsets, dtype=np.intp)
    cdef Py_ssize_t h = arg.shape[0], w = arg.shape[1]
    cdef Py_ssize_t nc = off.shape[1]
    grad_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] g = grad_arr
    cdef Py_ssize_t r, c, j, rr, cc, k

    for r in range(h):
        for c in range(w):
            k = arg[r, c]
            for j in range(nc):
                rr = r + off[k, j, 0]
                cc = c + off[k, j, 1]
                if 0 <= rr < h and 0 <= cc < w:
                    g[rr, cc] += scale
    return grad_arr
