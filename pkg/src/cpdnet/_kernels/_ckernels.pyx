# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled evaluation kernels. Behaviour mirrors ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

from ._luts import THIN_LUT_FIRST, THIN_LUT_SECOND

cdef int DY[8]
cdef int DX[8]
DY[:] = [0, -1, -1, -1, 0, 1, 1, 1]
DX[:] = [1, 1, 0, -1, -1, -1, 0, 1]


cdef inline int _code(const unsigned char[:, ::1] img, Py_ssize_t y, Py_ssize_t x,
                      Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    cdef int code = 0, k
    cdef Py_ssize_t yy, xx
    for k in range(8):
        yy = y + DY[k]
        xx = x + DX[k]
        if 0 <= yy < h and 0 <= xx < w and img[yy, xx]:
            code |= 1 << k
    return code


def thin(mask):
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] arr = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.uint8)
    cdef unsigned char[:, ::1] img = arr
    cdef const unsigned char[::1] lut1 = THIN_LUT_FIRST
    cdef const unsigned char[::1] lut2 = THIN_LUT_SECOND
    cdef const unsigned char[::1] lut
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t y, x, i, n_del
    cdef cnp.ndarray[cnp.intp_t, ndim=1] buf = np.empty(max(h * w, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] dels = buf
    cdef int sub
    cdef bint changed = True
    while changed:
        changed = False
        for sub in range(2):
            lut = lut1 if sub == 0 else lut2
            n_del = 0
            with nogil:
                for y in range(h):
                    for x in range(w):
                        if img[y, x] and lut[_code(img, y, x, h, w)]:
                            dels[n_del] = y * w + x
                            n_del += 1
                for i in range(n_del):
                    img[dels[i] // w, dels[i] % w] = 0
            if n_del:
                changed = True
    return arr


cdef inline double _bilinear(const double[:, ::1] v, double qy, double qx,
                             Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    cdef double fy0 = floor(qy), fx0 = floor(qx)
    cdef Py_ssize_t y0 = <Py_ssize_t>fy0, x0 = <Py_ssize_t>fx0
    cdef double fy = qy - y0, fx = qx - x0
    cdef double out = 0.0
    cdef double v00 = 0.0, v01 = 0.0, v10 = 0.0, v11 = 0.0
    if 0 <= y0 < h:
        if 0 <= x0 < w:
            v00 = v[y0, x0]
        if 0 <= x0 + 1 < w:
            v01 = v[y0, x0 + 1]
    if 0 <= y0 + 1 < h:
        if 0 <= x0 < w:
            v10 = v[y0 + 1, x0]
        if 0 <= x0 + 1 < w:
            v11 = v[y0 + 1, x0 + 1]
    out = out + ((1.0 - fy) * (1.0 - fx)) * v00
    out = out + ((1.0 - fy) * fx) * v01
    out = out + (fy * (1.0 - fx)) * v10
    out = out + (fy * fx) * v11
    return out


def nms_suppress(raw, smooth, nx, ny, double tie_tol):
    cdef const double[:, ::1] e = np.ascontiguousarray(raw, dtype=np.float64)
    cdef const double[:, ::1] s = np.ascontiguousarray(smooth, dtype=np.float64)
    cdef const double[:, ::1] vx = np.ascontiguousarray(nx, dtype=np.float64)
    cdef const double[:, ::1] vy = np.ascontiguousarray(ny, dtype=np.float64)
    cdef Py_ssize_t h = e.shape[0], w = e.shape[1], y, x
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] keep = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] k = keep
    cdef double e0, s0, ev, sv, sign, qy, qx
    cdef int t
    cdef bint ok
    with nogil:
        for y in range(h):
            for x in range(w):
                e0 = e[y, x]
                if not (e0 > 0):
                    continue
                s0 = s[y, x]
                ok = True
                for t in range(2):
                    sign = 1.0 if t == 0 else -1.0
                    qy = y + sign * vy[y, x]
                    qx = x + sign * vx[y, x]
                    ev = _bilinear(e, qy, qx, h, w)
                    sv = _bilinear(s, qy, qx, h, w)
                    if not ((e0 > ev + tie_tol) or (fabs(e0 - ev) <= tie_tol and s0 >= sv)):
                        ok = False
                        break
                if ok:
                    k[y, x] = 1
    return keep


def greedy_augment_match(pair_p, pair_g, Py_ssize_t n_pred, Py_ssize_t n_gt):
    cdef const cnp.int64_t[::1] pp = np.ascontiguousarray(pair_p, dtype=np.int64)
    cdef const cnp.int64_t[::1] gg = np.ascontiguousarray(pair_g, dtype=np.int64)
    cdef Py_ssize_t m = pp.shape[0], e, p, g, root, i, depth
    cdef cnp.ndarray[cnp.int64_t, ndim=1] match_p_arr = np.full(n_pred, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] match_g_arr = np.full(n_gt, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] mp = match_p_arr
    cdef cnp.int64_t[::1] mg = match_g_arr

    # CSR adjacency, stable in edge order
    cdef cnp.ndarray[cnp.int64_t, ndim=1] start_arr = np.zeros(n_pred + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] start = start_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] adj_arr = np.empty(max(m, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] adj = adj_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill_arr = np.zeros(n_pred, dtype=np.int64)
    cdef cnp.int64_t[::1] fill = fill_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stamp_arr = np.zeros(max(n_gt, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] stamp = stamp_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sp_arr = np.empty(n_pred + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] si_arr = np.empty(n_pred + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sg_arr = np.empty(n_pred + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] stack_p = sp_arr
    cdef cnp.int64_t[::1] stack_i = si_arr
    cdef cnp.int64_t[::1] via_g = sg_arr
    cdef Py_ssize_t n_via
    cdef bint found

    with nogil:
        for e in range(m):
            p = pp[e]
            g = gg[e]
            if mp[p] < 0 and mg[g] < 0:
                mp[p] = g
                mg[g] = p
            start[p + 1] += 1
        for p in range(n_pred):
            start[p + 1] += start[p]
        for e in range(m):
            p = pp[e]
            adj[start[p] + fill[p]] = gg[e]
            fill[p] += 1

        for root in range(n_pred):
            if mp[root] >= 0 or start[root] == start[root + 1]:
                continue
            depth = 1
            stack_p[0] = root
            stack_i[0] = 0
            n_via = 0
            found = False
            while depth > 0:
                p = stack_p[depth - 1]
                i = stack_i[depth - 1]
                if i >= start[p + 1] - start[p]:
                    depth -= 1
                    if n_via > 0:
                        n_via -= 1
                    continue
                stack_i[depth - 1] = i + 1
                g = adj[start[p] + i]
                if stamp[g] == root + 1:
                    continue
                stamp[g] = root + 1
                via_g[n_via] = g
                n_via += 1
                if mg[g] < 0:
                    found = True
                    break
                stack_p[depth] = mg[g]
                stack_i[depth] = 0
                depth += 1
            if found:
                for i in range(depth):
                    mp[stack_p[i]] = via_g[i]
                    mg[via_g[i]] = stack_p[i]
    return match_p_arr, match_g_arr
