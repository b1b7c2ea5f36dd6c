# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: triangle rasterization into a label/depth buffer and
fused render-and-score over batches of pose hypotheses.

Arithmetic mirrors ``_kernels_py`` operation for operation so both backends
produce identical pixels and costs.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel
from libc.math cimport ceil, floor
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memset

cnp.import_array()


cdef struct Frame:
    int w
    int h
    int* lab
    float* depth
    # per-row inclusive span of pixels written since the last clear (rx1 < rx0: none)
    int* rx0
    int* rx1
    int y0
    int y1


cdef Frame* frame_new(int w, int h) noexcept nogil:
    cdef Frame* fb = <Frame*> malloc(sizeof(Frame))
    cdef int y
    fb.w = w
    fb.h = h
    fb.lab = <int*> malloc(sizeof(int) * w * h)
    fb.depth = <float*> malloc(sizeof(float) * w * h)
    fb.rx0 = <int*> malloc(sizeof(int) * h)
    fb.rx1 = <int*> malloc(sizeof(int) * h)
    for y in range(h):
        fb.rx0[y] = 0
        fb.rx1[y] = w - 1
    fb.y0 = 0
    fb.y1 = h - 1
    frame_clear(fb)
    return fb


cdef void frame_free(Frame* fb) noexcept nogil:
    free(fb.lab)
    free(fb.depth)
    free(fb.rx0)
    free(fb.rx1)
    free(fb)


cdef void frame_clear(Frame* fb) noexcept nogil:
    cdef int y, x, row
    for y in range(fb.y0, fb.y1 + 1):
        if fb.rx1[y] >= fb.rx0[y]:
            row = y * fb.w
            memset(&fb.lab[row + fb.rx0[y]], 0, sizeof(int) * (fb.rx1[y] - fb.rx0[y] + 1))
            memset(&fb.depth[row + fb.rx0[y]], 0, sizeof(float) * (fb.rx1[y] - fb.rx0[y] + 1))
        fb.rx0[y] = fb.w
        fb.rx1[y] = -1
    fb.y0 = fb.h
    fb.y1 = -1


cdef inline void canonical_edge(double px, double py, double qx, double qy,
                                double* ax, double* ay, double* cdx, double* cdy,
                                double* sg) noexcept nogil:
    if py < qy or (py == qy and px < qx):
        ax[0] = px; ay[0] = py; cdx[0] = qx - px; cdy[0] = qy - py; sg[0] = 1.0
    else:
        ax[0] = qx; ay[0] = qy; cdx[0] = px - qx; cdy[0] = py - qy; sg[0] = -1.0


cdef inline bint inside(double r0, double r1, double r2, double pcx, const double* ax,
                        const double* cdy, const double* sg, const bint* tl) noexcept nogil:
    # top-left rule: pixels centred exactly on an edge belong to one side only
    cdef double e0 = sg[0] * (r0 - cdy[0] * (pcx - ax[0]))
    cdef double e1 = sg[1] * (r1 - cdy[1] * (pcx - ax[1]))
    cdef double e2 = sg[2] * (r2 - cdy[2] * (pcx - ax[2]))
    return ((e0 > 0.0 or (e0 == 0.0 and tl[0]))
            and (e1 > 0.0 or (e1 == 0.0 and tl[1]))
            and (e2 > 0.0 or (e2 == 0.0 and tl[2])))


cdef void raster_tri(Frame* fb, double x0, double y0, double z0,
                     double x1, double y1, double z1,
                     double x2, double y2, double z2, int label) noexcept nogil:
    cdef double area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    cdef double t
    if area == 0.0:
        return
    if area < 0.0:
        t = x1; x1 = x2; x2 = t
        t = y1; y1 = y2; y2 = t
        t = z1; z1 = z2; z2 = t
        area = -area
    cdef double fx0 = ceil(min(x0, min(x1, x2)) - 0.5)
    cdef double fx1 = floor(max(x0, max(x1, x2)) - 0.5)
    cdef double fy0 = ceil(min(y0, min(y1, y2)) - 0.5)
    cdef double fy1 = floor(max(y0, max(y1, y2)) - 0.5)
    if fx0 < 0.0:
        fx0 = 0.0
    if fy0 < 0.0:
        fy0 = 0.0
    if fx1 > fb.w - 1:
        fx1 = fb.w - 1
    if fy1 > fb.h - 1:
        fy1 = fb.h - 1
    if fx0 > fx1 or fy0 > fy1:
        return
    cdef int iy0 = <int> fy0
    cdef int iy1 = <int> fy1
    cdef double inv_area = 1.0 / area
    cdef double iz0 = 1.0 / z0
    cdef double iz1 = 1.0 / z1
    cdef double iz2 = 1.0 / z2
    # edges 1->2, 2->0, 0->1. Each edge function is evaluated from the
    # lexicographically smaller endpoint and then signed, so two triangles sharing
    # an edge get exactly opposite values and the fill rule hands every pixel
    # centre on it to exactly one of them.
    cdef double ax[3]
    cdef double ay[3]
    cdef double cdx[3]
    cdef double cdy[3]
    cdef double sg[3]
    cdef double dx[3]
    cdef double dy[3]
    cdef double slope[3]
    cdef bint tl[3]
    canonical_edge(x1, y1, x2, y2, &ax[0], &ay[0], &cdx[0], &cdy[0], &sg[0])
    canonical_edge(x2, y2, x0, y0, &ax[1], &ay[1], &cdx[1], &cdy[1], &sg[1])
    canonical_edge(x0, y0, x1, y1, &ax[2], &ay[2], &cdx[2], &cdy[2], &sg[2])
    cdef int k
    for k in range(3):
        dx[k] = sg[k] * cdx[k]
        dy[k] = sg[k] * cdy[k]
        tl[k] = dy[k] > 0.0 or (dy[k] == 0.0 and dx[k] < 0.0)
        slope[k] = dx[k] / dy[k] if dy[k] != 0.0 else 0.0
    # inverse depth is affine in screen space; anchor the plane at vertex 0
    cdef double gx = -(dy[0] * iz0 + dy[1] * iz1 + dy[2] * iz2) * inv_area
    cdef double gy = (dx[0] * iz0 + dx[1] * iz1 + dx[2] * iz2) * inv_area
    cdef int px, py, idx, row, sx0, sx1, first, last
    cdef double pcy, lo, hi, xb, r0, r1, r2, wrow
    cdef float w
    cdef bint skip
    cdef float* dep = fb.depth
    cdef int* lab = fb.lab
    for py in range(iy0, iy1 + 1):
        pcy = py + 0.5
        # conservative span from the edge crossings
        lo = fx0
        hi = fx1
        skip = 0
        for k in range(3):
            if dy[k] == 0.0:
                xb = sg[k] * (cdx[k] * (pcy - ay[k]))
                if not (xb > 0.0 or (xb == 0.0 and tl[k])):
                    skip = 1
            else:
                xb = ax[k] + slope[k] * (pcy - ay[k])
                if dy[k] > 0.0:
                    xb = floor(xb - 0.5) + 1.0
                    if xb < hi:
                        hi = xb
                else:
                    xb = ceil(xb - 0.5) - 1.0
                    if xb > lo:
                        lo = xb
        if skip or lo > hi:
            continue
        sx0 = <int> lo
        sx1 = <int> hi
        r0 = cdx[0] * (pcy - ay[0])
        r1 = cdx[1] * (pcy - ay[1])
        r2 = cdx[2] * (pcy - ay[2])
        # rounded edge functions are monotone along the row, so coverage is an
        # interval: only its two ends need the exact test
        first = sx0
        while first <= sx1 and not inside(r0, r1, r2, first + 0.5, ax, cdy, sg, tl):
            first += 1
        if first > sx1:
            continue
        last = sx1
        while not inside(r0, r1, r2, last + 0.5, ax, cdy, sg, tl):
            last -= 1
        row = py * fb.w
        wrow = iz0 + gy * (pcy - y0)
        for px in range(first, last + 1):
            w = <float> (wrow + gx * ((px + 0.5) - x0))
            idx = row + px
            if w > dep[idx]:
                dep[idx] = w
                lab[idx] = label
        if first < fb.rx0[py]:
            fb.rx0[py] = first
        if last > fb.rx1[py]:
            fb.rx1[py] = last
        if py < fb.y0:
            fb.y0 = py
        if py > fb.y1:
            fb.y1 = py


cdef void render_scene(Frame* fb, const double* tris, const int* labels, Py_ssize_t n_faces,
                       const double* R, const double* T,
                       double fx, double fy, double cx, double cy, double near) noexcept nogil:
    cdef Py_ssize_t f
    cdef int k, j, n_in, n_out, a, b
    cdef double cam[3][3]
    cdef double poly[4][3]
    cdef double scr[4][3]
    cdef const double* v
    cdef double s
    frame_clear(fb)
    for f in range(n_faces):
        n_in = 0
        for k in range(3):
            v = &tris[f * 9 + k * 3]
            cam[k][0] = R[0] * v[0] + R[1] * v[1] + R[2] * v[2] + T[0]
            cam[k][1] = R[3] * v[0] + R[4] * v[1] + R[5] * v[2] + T[1]
            cam[k][2] = R[6] * v[0] + R[7] * v[1] + R[8] * v[2] + T[2]
            if cam[k][2] >= near:
                n_in += 1
        if n_in == 0:
            continue
        if n_in == 3:
            for k in range(3):
                poly[k][0] = cam[k][0]
                poly[k][1] = cam[k][1]
                poly[k][2] = cam[k][2]
            n_out = 3
        else:
            # Sutherland-Hodgman against z = near
            n_out = 0
            for a in range(3):
                b = (a + 1) % 3
                if cam[a][2] >= near:
                    poly[n_out][0] = cam[a][0]
                    poly[n_out][1] = cam[a][1]
                    poly[n_out][2] = cam[a][2]
                    n_out += 1
                if (cam[a][2] >= near) != (cam[b][2] >= near):
                    s = (near - cam[a][2]) / (cam[b][2] - cam[a][2])
                    poly[n_out][0] = cam[a][0] + s * (cam[b][0] - cam[a][0])
                    poly[n_out][1] = cam[a][1] + s * (cam[b][1] - cam[a][1])
                    poly[n_out][2] = near
                    n_out += 1
        for k in range(n_out):
            scr[k][0] = fx * poly[k][0] / poly[k][2] + cx
            scr[k][1] = fy * poly[k][1] / poly[k][2] + cy
            scr[k][2] = poly[k][2]
        for j in range(1, n_out - 1):
            raster_tri(fb, scr[0][0], scr[0][1], scr[0][2],
                       scr[j][0], scr[j][1], scr[j][2],
                       scr[j + 1][0], scr[j + 1][1], scr[j + 1][2], labels[f])


cdef double score_frame(Frame* fb, int n_labels,
                        const long long* run_start, const long long* run_len,
                        const long long* mask_ptr, Py_ssize_t n_masks,
                        const double* q_area, const double* weights,
                        bint semantic, int min_area, double eps,
                        int* hist, int* cnt, int* touched) noexcept nogil:
    cdef int x, y, l, nt, i, inter_i
    cdef Py_ssize_t j, r
    cdef long long p, p_end
    cdef double total = 0.0, best, dv, hyp_total, inter, union
    cdef int* lab = fb.lab
    memset(hist, 0, sizeof(int) * (n_labels + 1))
    for y in range(fb.y0, fb.y1 + 1):
        for x in range(fb.rx0[y], fb.rx1[y] + 1):
            hist[lab[y * fb.w + x]] += 1
    if semantic:
        hyp_total = 0.0
        for l in range(1, n_labels + 1):
            hyp_total += hist[l]
        inter_i = 0
        for r in range(mask_ptr[0], mask_ptr[1]):
            p_end = run_start[r] + run_len[r]
            p = run_start[r]
            while p < p_end:
                if lab[p] != 0:
                    inter_i += 1
                p += 1
        inter = inter_i
        union = q_area[0] + hyp_total - inter
        if union <= 0.0:
            return 0.0
        return inter / union
    for j in range(n_masks):
        nt = 0
        for r in range(mask_ptr[j], mask_ptr[j + 1]):
            p_end = run_start[r] + run_len[r]
            p = run_start[r]
            while p < p_end:
                l = lab[p]
                if l != 0:
                    if cnt[l] == 0:
                        touched[nt] = l
                        nt += 1
                    cnt[l] += 1
                p += 1
        best = 0.0
        for i in range(nt):
            l = touched[i]
            if hist[l] >= min_area:
                dv = 2.0 * cnt[l] / (q_area[j] + hist[l] + eps)
                if dv > best:
                    best = dv
            cnt[l] = 0
        total += weights[j] * best
    return total


def render(double[:, ::1] tris, int[::1] labels, double[::1] R, double[::1] T,
           double fx, double fy, double cx, double cy, int width, int height,
           double near):
    """Rasterize labelled triangles; returns (labels int32 (H,W), inverse depth float32 (H,W)).

    Background pixels have inverse depth 0.
    """
    if width <= 0 or height <= 0:
        raise ValueError("zero-area viewport")
    cdef Py_ssize_t n = tris.shape[0]
    out_lab = np.empty((height, width), dtype=np.int32)
    out_depth = np.empty((height, width), dtype=np.float32)
    cdef int[:, ::1] ol = out_lab
    cdef float[:, ::1] od = out_depth
    cdef Frame* fb = frame_new(width, height)
    with nogil:
        if n > 0:
            render_scene(fb, &tris[0, 0], &labels[0], n, &R[0], &T[0], fx, fy, cx, cy, near)
        memcpy(&ol[0, 0], fb.lab, sizeof(int) * width * height)
        memcpy(&od[0, 0], fb.depth, sizeof(float) * width * height)
    frame_free(fb)
    return out_lab, out_depth


def evaluate(double[:, ::1] tris, int[::1] labels, int n_labels,
             double[:, ::1] Rs, double[:, ::1] Ts,
             double fx, double fy, double cx, double cy, int width, int height, double near,
             long long[::1] run_start, long long[::1] run_len, long long[::1] mask_ptr,
             double[::1] q_area, double[::1] weights,
             bint semantic, int min_area, double eps, int n_threads=1):
    """Render every pose and score it against the query; returns costs (P,)."""
    if width <= 0 or height <= 0:
        raise ValueError("zero-area viewport")
    cdef Py_ssize_t P = Rs.shape[0]
    cdef Py_ssize_t n_faces = tris.shape[0]
    cdef Py_ssize_t n_masks = mask_ptr.shape[0] - 1
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] costs = out
    if P == 0:
        return out
    # keep pointers valid when arrays are empty
    cdef double dummy_d = 0.0
    cdef int dummy_i = 0
    cdef long long dummy_l = 0
    cdef const double* tp = &tris[0, 0] if n_faces > 0 else &dummy_d
    cdef const int* lp = &labels[0] if n_faces > 0 else &dummy_i
    cdef const long long* rs = &run_start[0] if run_start.shape[0] > 0 else &dummy_l
    cdef const long long* rl = &run_len[0] if run_len.shape[0] > 0 else &dummy_l
    cdef const double* qa = &q_area[0] if q_area.shape[0] > 0 else &dummy_d
    cdef const double* wp = &weights[0] if weights.shape[0] > 0 else &dummy_d
    cdef const long long* mp = &mask_ptr[0]
    cdef Py_ssize_t i
    cdef Frame* fb
    cdef int* hist
    cdef int* cnt
    cdef int* touched
    if n_threads < 1:
        n_threads = 1
    with nogil, parallel(num_threads=n_threads):
        fb = frame_new(width, height)
        hist = <int*> malloc(sizeof(int) * (n_labels + 1))
        cnt = <int*> malloc(sizeof(int) * (n_labels + 1))
        touched = <int*> malloc(sizeof(int) * (n_labels + 1))
        memset(cnt, 0, sizeof(int) * (n_labels + 1))
        for i in prange(P, schedule="dynamic"):
            render_scene(fb, tp, lp, n_faces, &Rs[i, 0], &Ts[i, 0], fx, fy, cx, cy, near)
            costs[i] = score_frame(fb, n_labels, rs, rl, mp, n_masks, qa, wp,
                                   semantic, min_area, eps, hist, cnt, touched)
        frame_free(fb)
        free(hist)
        free(cnt)
        free(touched)
    return out
