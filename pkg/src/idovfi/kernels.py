"""Hot inner loops: event emission, voxel scatter and softmax splatting.

Each kernel has a numba implementation (``*_numba``) and a vectorised numpy
implementation (``*_numpy``) with identical semantics.  The unsuffixed name is
bound to whichever backend ``_accel.USE_NUMBA`` selects.  Inputs are assumed
validated by the callers in :mod:`idovfi.events` and :mod:`idovfi.splines`.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# event emission
# ---------------------------------------------------------------------------

def _crossing_counts(dlog, threshold):
    return np.floor(np.abs(dlog) / threshold).astype(np.int64)


@njit
def _emit_numba_impl(dlog, counts, threshold, t0, t1):
    h, w = dlog.shape
    total = 0
    for i in range(h):
        for j in range(w):
            total += counts[i, j]
    xs = np.empty(total, dtype=np.int64)
    ys = np.empty(total, dtype=np.int64)
    ps = np.empty(total, dtype=np.int64)
    ts = np.empty(total, dtype=np.float64)
    span = t1 - t0
    n = 0
    for i in range(h):
        for j in range(w):
            c = counts[i, j]
            if c == 0:
                continue
            d = dlog[i, j]
            mag = abs(d)
            pol = 1 if d > 0 else -1
            for k in range(1, c + 1):
                xs[n] = j
                ys[n] = i
                ps[n] = pol
                ts[n] = t0 + span * (k * threshold / mag)
                n += 1
    return xs, ys, ps, ts


def emit_events_numba(dlog, threshold, t0, t1):
    """Threshold crossings of a linearly interpolated log-intensity change.

    Returns unsorted ``(x, y, p, t)`` arrays in row-major pixel order, events of
    one pixel in increasing time.
    """
    dlog = np.ascontiguousarray(dlog, dtype=np.float64)
    counts = _crossing_counts(dlog, threshold)
    return _emit_numba_impl(dlog, counts, float(threshold), float(t0), float(t1))


def emit_events_numpy(dlog, threshold, t0, t1):
    dlog = np.asarray(dlog, dtype=np.float64)
    counts = _crossing_counts(dlog, threshold).ravel()
    total = int(counts.sum())
    flat = np.repeat(np.arange(counts.size), counts)
    # k = 1..count within each pixel's run
    starts = np.cumsum(counts) - counts
    k = np.arange(total) - np.repeat(starts, counts) + 1
    d = dlog.ravel()[flat]
    ys, xs = np.divmod(flat, dlog.shape[1])
    ps = np.where(d > 0, 1, -1).astype(np.int64)
    ts = t0 + (t1 - t0) * (k * threshold / np.abs(d))
    return xs.astype(np.int64), ys.astype(np.int64), ps, ts


# ---------------------------------------------------------------------------
# voxel scatter
# ---------------------------------------------------------------------------

@njit
def _voxel_numba_impl(xs, ys, ps, ts, t_start, t_end, bins, height, width):
    grid = np.zeros((bins, height, width), dtype=np.float64)
    span = t_end - t_start
    for n in range(xs.shape[0]):
        if span > 0:
            tn = (ts[n] - t_start) / span * (bins - 1)
        else:
            tn = 0.0
        lo = int(np.floor(tn))
        if lo >= bins - 1:
            grid[bins - 1, ys[n], xs[n]] += ps[n]
            continue
        if lo < 0:
            lo = 0
            tn = 0.0
        frac = tn - lo
        grid[lo, ys[n], xs[n]] += ps[n] * (1.0 - frac)
        grid[lo + 1, ys[n], xs[n]] += ps[n] * frac
    return grid


def voxel_scatter_numba(xs, ys, ps, ts, t_start, t_end, bins, height, width):
    return _voxel_numba_impl(
        np.ascontiguousarray(xs, dtype=np.int64),
        np.ascontiguousarray(ys, dtype=np.int64),
        np.ascontiguousarray(ps, dtype=np.float64),
        np.ascontiguousarray(ts, dtype=np.float64),
        float(t_start), float(t_end), int(bins), int(height), int(width),
    )


def voxel_scatter_numpy(xs, ys, ps, ts, t_start, t_end, bins, height, width):
    grid = np.zeros((bins, height, width), dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    span = t_end - t_start
    tn = (ts - t_start) / span * (bins - 1) if span > 0 else np.zeros_like(ts)
    tn = np.clip(tn, 0.0, bins - 1)
    lo = np.minimum(np.floor(tn).astype(np.int64), bins - 2)
    frac = tn - lo
    np.add.at(grid, (lo, ys, xs), ps * (1.0 - frac))
    np.add.at(grid, (lo + 1, ys, xs), ps * frac)
    return grid


# ---------------------------------------------------------------------------
# softmax splatting
# ---------------------------------------------------------------------------

@njit
def _splat_numba_impl(image, flow, weight):
    c, h, w = image.shape
    num = np.zeros((c, h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            tx = x + flow[0, y, x]
            ty = y + flow[1, y, x]
            x0 = int(np.floor(tx))
            y0 = int(np.floor(ty))
            fx = tx - x0
            fy = ty - y0
            wz = weight[y, x]
            for dy in range(2):
                yy = y0 + dy
                if yy < 0 or yy >= h:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xx = x0 + dx
                    if xx < 0 or xx >= w:
                        continue
                    wb = (fx if dx == 1 else 1.0 - fx) * wy * wz
                    den[yy, xx] += wb
                    for ch in range(c):
                        num[ch, yy, xx] += wb * image[ch, y, x]
    return num, den


def splat_numba(image, flow, weight):
    """Bilinear splat of ``image`` (C,H,W) along ``flow`` (2,H,W) with per-pixel
    ``weight`` (H,W).  Returns the accumulated numerator and denominator."""
    return _splat_numba_impl(
        np.ascontiguousarray(image, dtype=np.float64),
        np.ascontiguousarray(flow, dtype=np.float64),
        np.ascontiguousarray(weight, dtype=np.float64),
    )


def splat_numpy(image, flow, weight):
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    gy, gx = np.mgrid[0:h, 0:w]
    tx = gx + flow[0]
    ty = gy + flow[1]
    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0
    num = np.zeros((c, h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xx = x0 + dx
        yy = y0 + dy
        wb = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy) * weight
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        np.add.at(den, (yy[ok], xx[ok]), wb[ok])
        for ch in range(c):
            np.add.at(num[ch], (yy[ok], xx[ok]), wb[ok] * image[ch][ok])
    return num, den


if USE_NUMBA:
    emit_events = emit_events_numba
    voxel_scatter = voxel_scatter_numba
    splat = splat_numba
else:
    emit_events = emit_events_numpy
    voxel_scatter = voxel_scatter_numpy
    splat = splat_numpy
