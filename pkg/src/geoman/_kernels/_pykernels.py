"""Pure numpy versions of the compiled kernels (same semantics, vectorized over pixels)."""
import numpy as np

T_MIN = 1e-9


def _sphere_hit(o, d, center, r):
    p = o - center
    a = np.einsum("ij,ij->i", d, d)
    b = d @ p if p.ndim == 1 else np.einsum("ij,ij->i", p, d)
    c = (p * p).sum(-1) - r * r
    h = b * b - a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(h)) / a
    return np.where(h < 0.0, -1.0, t)


def _ellipsoid(origin, dirs, prm):
    center, rot, radii = prm[0:3], prm[3:12].reshape(3, 3), prm[12:15]
    lo = ((origin - center) @ rot) / radii
    ld = (dirs @ rot) / radii
    t = _sphere_hit(lo, ld, np.zeros(3), 1.0)
    u = (lo + t[:, None] * ld) / radii
    n = u @ rot.T
    return t, n / np.linalg.norm(n, axis=1, keepdims=True)


def _capsule(origin, dirs, prm):
    a, b, r = prm[0:3], prm[3:6], prm[6]
    axis = b - a
    length = np.sqrt((axis * axis).sum())
    axis = axis / length
    oa = origin - a
    dn = dirs @ axis
    on = oa @ axis
    dp = dirs - dn[:, None] * axis
    op = oa - on * axis
    qa = (dp * dp).sum(-1)
    qb = dp @ op
    qc = (op * op).sum() - r * r
    h = qb * qb - qa * qc
    t = np.full(len(dirs), 1e300)
    ok = (qa > 1e-18) & (h >= 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tc = (-qb - np.sqrt(h)) / qa
    y = on + tc * dn
    ok &= (tc > T_MIN) & (y >= 0.0) & (y <= length)
    t = np.where(ok, tc, t)
    for cap in (a, a + length * axis):
        ts = _sphere_hit(origin, dirs, cap, r)
        t = np.where((ts > T_MIN) & (ts < t), ts, t)
    # misses carry t = 1e300; their normals are garbage and discarded by the caller
    with np.errstate(invalid="ignore", over="ignore"):
        hit = origin + t[:, None] * dirs - a
        y = np.clip(hit @ axis, 0.0, length)
        n = hit - y[:, None] * axis
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
    return t, n


def raycast(origin, dirs, kinds, params):
    n = len(dirs)
    depth = np.full(n, np.inf)
    index = np.full(n, -1, dtype=np.int64)
    normal = np.zeros((n, 3))
    best = np.full(n, 1e300)
    for k, kind in enumerate(kinds):
        t, nrm = (_ellipsoid if kind == 0 else _capsule)(origin, dirs, params[k])
        take = (t > T_MIN) & (t < best)
        best = np.where(take, t, best)
        depth[take] = t[take]
        index[take] = k
        normal[take] = nrm[take]
    return depth, index, normal


def bilinear_sample(img, xs, ys, mask):
    H, W, C = img.shape
    inside = (xs >= 0.0) & (xs <= W - 1) & (ys >= 0.0) & (ys <= H - 1)
    x = np.where(inside, xs, 0.0)
    y = np.where(inside, ys, 0.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), W - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), H - 2)
    fx = x - x0
    fy = y - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    m = mask.astype(bool)
    ok = inside.copy()
    for w, yy, xx in ((w00, y0, x0), (w01, y0, x0 + 1), (w10, y0 + 1, x0), (w11, y0 + 1, x0 + 1)):
        ok &= ~((w > 0.0) & ~m[yy, xx])
    out = (w00[..., None] * img[y0, x0] + w01[..., None] * img[y0, x0 + 1]
           + w10[..., None] * img[y0 + 1, x0] + w11[..., None] * img[y0 + 1, x0 + 1])
    out[~ok] = 0.0
    return out, ok
