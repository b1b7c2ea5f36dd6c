"""Pure numpy fallback for the compiled kernels in ``_core.pyx``.

Every floating-point expression is evaluated in the same order as the C code,
so the two backends agree bit for bit.
"""
from __future__ import annotations

import math

import numpy as np


def _raster_tri(lab, depth, p0, p1, p2, label):
    (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = p0, p1, p2
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    if area == 0.0:
        return
    if area < 0.0:
        x1, x2 = x2, x1
        y1, y2 = y2, y1
        z1, z2 = z2, z1
        area = -area
    h, w = lab.shape
    fx0 = max(math.ceil(min(x0, x1, x2) - 0.5), 0)
    fx1 = min(math.floor(max(x0, x1, x2) - 0.5), w - 1)
    fy0 = max(math.ceil(min(y0, y1, y2) - 0.5), 0)
    fy1 = min(math.floor(max(y0, y1, y2) - 0.5), h - 1)
    if fx0 > fx1 or fy0 > fy1:
        return
    inv_area = 1.0 / area
    iz0, iz1, iz2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
    pcy = (np.arange(fy0, fy1 + 1, dtype=np.float64) + 0.5)[:, None]
    pcx = (np.arange(fx0, fx1 + 1, dtype=np.float64) + 0.5)[None, :]
    inside = np.ones((len(pcy), pcx.shape[1]), dtype=bool)
    directed = []
    for px, py, qx, qy in ((x1, y1, x2, y2), (x2, y2, x0, y0), (x0, y0, x1, y1)):
        # evaluate from the lexicographically smaller endpoint so shared edges cancel exactly
        if py < qy or (py == qy and px < qx):
            ax, ay, cdx, cdy, sg = px, py, qx - px, qy - py, 1.0
        else:
            ax, ay, cdx, cdy, sg = qx, qy, px - qx, py - qy, -1.0
        e = sg * (cdx * (pcy - ay) - cdy * (pcx - ax))
        dx, dy = sg * cdx, sg * cdy
        directed.append((dx, dy))
        top_left = dy > 0.0 or (dy == 0.0 and dx < 0.0)
        inside &= (e >= 0.0) if top_left else (e > 0.0)
    if not inside.any():
        return
    (dx0, dy0), (dx1, dy1), (dx2, dy2) = directed
    # inverse depth plane anchored at vertex 0; larger is nearer
    gx = -(dy0 * iz0 + dy1 * iz1 + dy2 * iz2) * inv_area
    gy = (dx0 * iz0 + dx1 * iz1 + dx2 * iz2) * inv_area
    wrow = iz0 + gy * (pcy - y0)
    with np.errstate(over="ignore", invalid="ignore"):
        d = (wrow + gx * (pcx - x0)).astype(np.float32)
    sub_d = depth[fy0:fy1 + 1, fx0:fx1 + 1]
    sub_l = lab[fy0:fy1 + 1, fx0:fx1 + 1]
    write = inside & (d > sub_d)
    sub_d[write] = d[write]
    sub_l[write] = label


def _camera_coords(tris, R, T):
    V = tris.reshape(-1, 3, 3)
    out = np.empty_like(V)
    for k in range(3):
        vx, vy, vz = V[:, k, 0], V[:, k, 1], V[:, k, 2]
        out[:, k, 0] = R[0] * vx + R[1] * vy + R[2] * vz + T[0]
        out[:, k, 1] = R[3] * vx + R[4] * vy + R[5] * vz + T[1]
        out[:, k, 2] = R[6] * vx + R[7] * vy + R[8] * vz + T[2]
    return out


def _clip(cam, near):
    inside = [c[2] >= near for c in cam]
    if all(inside):
        return [tuple(c) for c in cam]
    poly = []
    for a in range(3):
        b = (a + 1) % 3
        ca, cb = cam[a], cam[b]
        if inside[a]:
            poly.append((ca[0], ca[1], ca[2]))
        if inside[a] != inside[b]:
            s = (near - ca[2]) / (cb[2] - ca[2])
            poly.append((ca[0] + s * (cb[0] - ca[0]), ca[1] + s * (cb[1] - ca[1]), near))
    return poly


def render_into(lab, depth, tris, labels, R, T, fx, fy, cx, cy, near):
    lab[...] = 0
    depth[...] = 0.0
    if len(tris) == 0:
        return
    cams = _camera_coords(np.asarray(tris, dtype=np.float64), R, T)
    any_in = (cams[:, :, 2] >= near).any(axis=1)
    for f in np.flatnonzero(any_in):
        poly = _clip(cams[f].tolist(), near)
        scr = [(fx * x / z + cx, fy * y / z + cy, z) for x, y, z in poly]
        for j in range(1, len(scr) - 1):
            _raster_tri(lab, depth, scr[0], scr[j], scr[j + 1], int(labels[f]))


def render(tris, labels, R, T, fx, fy, cx, cy, width, height, near):
    if width <= 0 or height <= 0:
        raise ValueError("zero-area viewport")
    lab = np.zeros((height, width), dtype=np.int32)
    depth = np.zeros((height, width), dtype=np.float32)
    render_into(lab, depth, tris, labels, np.asarray(R, float), np.asarray(T, float), fx, fy, cx, cy, near)
    return lab, depth


def score(lab, n_labels, run_start, run_len, mask_ptr, q_area, weights, semantic, min_area, eps):
    flat = lab.reshape(-1)
    hist = np.bincount(flat, minlength=n_labels + 1)
    if semantic:
        hyp_total = float(hist[1:].sum())
        idx = _mask_pixels(run_start, run_len, mask_ptr[0], mask_ptr[1])
        inter = float(np.count_nonzero(flat[idx]))
        union = q_area[0] + hyp_total - inter
        if union <= 0.0:
            return 0.0
        return inter / union
    total = 0.0
    for j in range(len(mask_ptr) - 1):
        idx = _mask_pixels(run_start, run_len, mask_ptr[j], mask_ptr[j + 1])
        cnt = np.bincount(flat[idx], minlength=n_labels + 1)
        best = 0.0
        for l in np.flatnonzero(cnt[1:]) + 1:
            if hist[l] >= min_area:
                dv = 2.0 * float(cnt[l]) / (q_area[j] + float(hist[l]) + eps)
                if dv > best:
                    best = dv
        total += weights[j] * best
    return total


def _mask_pixels(run_start, run_len, r0, r1):
    starts = run_start[r0:r1]
    lens = run_len[r0:r1]
    if len(starts) == 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.repeat(starts - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
    return offs + np.arange(int(lens.sum()))


def evaluate(tris, labels, n_labels, Rs, Ts, fx, fy, cx, cy, width, height, near,
             run_start, run_len, mask_ptr, q_area, weights, semantic, min_area, eps, n_threads=1):
    if width <= 0 or height <= 0:
        raise ValueError("zero-area viewport")
    out = np.zeros(len(Rs), dtype=np.float64)
    lab = np.zeros((height, width), dtype=np.int32)
    depth = np.zeros((height, width), dtype=np.float32)
    for i in range(len(Rs)):
        render_into(lab, depth, tris, labels, Rs[i], Ts[i], fx, fy, cx, cy, near)
        out[i] = score(lab, n_labels, run_start, run_len, mask_ptr, q_area, weights,
                       semantic, min_area, eps)
    return out
