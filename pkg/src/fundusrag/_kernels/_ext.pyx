# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot per-pixel loops.

Must stay semantically identical to _fallback.py; the accumulation order in
the float kernels matches the fallback exactly so both backends agree
bit-for-bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def erode_u8(img, mask):
    return _morph_u8(img, mask, 1)


def dilate_u8(img, mask):
    return _morph_u8(img, mask, 0)


def _morph_u8(img, mask, int take_min):
    # Offset-outer, pixel-inner loop order: each pass streams two rows
    # contiguously, which the compiler vectorizes (same access pattern the
    # numpy fallback uses, minus its temporary views).
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t mh = mask.shape[0]
    cdef Py_ssize_t mw = mask.shape[1]
    cdef Py_ssize_t cy = (mh - 1) // 2
    cdef Py_ssize_t cx = (mw - 1) // 2

    padded_arr = np.pad(img, ((cy, mh - 1 - cy), (cx, mw - 1 - cx)), mode="edge")
    offs = np.nonzero(np.asarray(mask, dtype=np.bool_))
    cdef cnp.int64_t[::1] oy = np.ascontiguousarray(offs[0], dtype=np.int64)
    cdef cnp.int64_t[::1] ox = np.ascontiguousarray(offs[1], dtype=np.int64)
    cdef Py_ssize_t n_off = oy.shape[0]

    cdef const unsigned char[:, ::1] padded = np.ascontiguousarray(padded_arr, dtype=np.uint8)
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr

    cdef Py_ssize_t y, x, k, dy, dx
    cdef unsigned char v, o
    for y in range(h):
        dy = oy[0]
        dx = ox[0]
        for x in range(w):
            out[y, x] = padded[y + dy, x + dx]
    if take_min:
        for k in range(1, n_off):
            dy = oy[k]
            dx = ox[k]
            for y in range(h):
                for x in range(w):
                    v = padded[y + dy, x + dx]
                    o = out[y, x]
                    out[y, x] = v if v < o else o
    else:
        for k in range(1, n_off):
            dy = oy[k]
            dx = ox[k]
            for y in range(h):
                for x in range(w):
                    v = padded[y + dy, x + dx]
                    o = out[y, x]
                    out[y, x] = v if v > o else o
    return out_arr


def resample_rows(src, idx, weights):
    cdef const double[:, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const int[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.int32)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t out_h = ix.shape[0]
    cdef Py_ssize_t taps = ix.shape[1]
    cdef Py_ssize_t width = s.shape[1]

    out_arr = np.zeros((out_h, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t o, t, x
    cdef double wv
    cdef Py_ssize_t row
    for t in range(taps):
        for o in range(out_h):
            wv = w[o, t]
            row = ix[o, t]
            for x in range(width):
                out[o, x] = out[o, x] + wv * s[row, x]
    return out_arr


def rotate_bilinear(src, double cos_t, double sin_t):
    cdef const double[:, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef Py_ssize_t h = s.shape[0]
    cdef Py_ssize_t w = s.shape[1]
    cdef double cy = (h - 1) / 2.0
    cdef double cx = (w - 1) / 2.0

    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef double dx, dy, sx, sy, fx, fy, acc
    cdef Py_ssize_t x0, y0

    for y in range(h):
        for x in range(w):
            dx = x - cx
            dy = y - cy
            sx = cos_t * dx + sin_t * dy + cx
            sy = -sin_t * dx + cos_t * dy + cy
            x0 = <Py_ssize_t>_floor(sx)
            y0 = <Py_ssize_t>_floor(sy)
            fx = sx - x0
            fy = sy - y0
            acc = ((1.0 - fy) * (1.0 - fx)) * _tap(s, h, w, y0, x0)
            acc += ((1.0 - fy) * fx) * _tap(s, h, w, y0, x0 + 1)
            acc += (fy * (1.0 - fx)) * _tap(s, h, w, y0 + 1, x0)
            acc += (fy * fx) * _tap(s, h, w, y0 + 1, x0 + 1)
            out[y, x] = acc
    return out_arr


cdef inline double _floor(double v):
    cdef double r = <double><long long>v
    if v < 0 and r != v:
        r -= 1.0
    return r


cdef inline double _tap(const double[:, ::1] s, Py_ssize_t h, Py_ssize_t w,
                        Py_ssize_t y, Py_ssize_t x):
    if y < 0 or y >= h or x < 0 or x >= w:
        return 0.0
    return s[y, x]


def lcs_length(a, b):
    # Multiword bit-parallel row recurrence (row' = x & ~(x - ((row<<1)|1))
    # with x = row | match), O(n*m/64) word operations.
    cdef const int[::1] av = np.ascontiguousarray(a, dtype=np.int32)
    cdef const int[::1] bv = np.ascontiguousarray(b, dtype=np.int32)
    cdef Py_ssize_t n = av.shape[0]
    cdef Py_ssize_t m = bv.shape[0]
    if n == 0 or m == 0:
        return 0

    cdef Py_ssize_t words = (n + 63) // 64

    # Dense match rows indexed by a compact symbol id; id 0 is the all-zero
    # row for symbols of b that never occur in a.  Keeps the main loop free
    # of Python-level lookups.
    symbol_ids: dict = {}
    cdef Py_ssize_t i
    for i in range(n):
        sym = int(av[i])
        if sym not in symbol_ids:
            symbol_ids[sym] = len(symbol_ids) + 1
    match_arr = np.zeros((len(symbol_ids) + 1, words), dtype=np.uint64)
    cdef cnp.uint64_t[:, ::1] match = match_arr
    cdef Py_ssize_t row_id
    for i in range(n):
        row_id = symbol_ids[int(av[i])]
        match[row_id, i >> 6] |= (<cnp.uint64_t>1) << (i & 63)
    b_rows_arr = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] b_rows = b_rows_arr
    cdef Py_ssize_t j
    for j in range(m):
        b_rows[j] = symbol_ids.get(int(bv[j]), 0)

    row_arr = np.zeros(words, dtype=np.uint64)
    cdef cnp.uint64_t[::1] row = row_arr
    cdef Py_ssize_t w
    cdef cnp.uint64_t rw, xw, shifted, temp, sub
    cdef cnp.uint64_t carry, borrow, b1, b2
    for j in range(m):
        row_id = b_rows[j]
        carry = 1
        borrow = 0
        for w in range(words):
            rw = row[w]
            xw = rw | match[row_id, w]
            shifted = (rw << 1) | carry
            carry = rw >> 63
            temp = xw - shifted
            b1 = 1 if xw < shifted else 0
            sub = temp - borrow
            b2 = 1 if temp < borrow else 0
            borrow = b1 | b2
            row[w] = xw & ~sub
    cdef Py_ssize_t count = 0
    for w in range(words):
        rw = row[w]
        while rw:
            rw &= rw - 1
            count += 1
    return count
