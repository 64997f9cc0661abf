"""Compiled inner loops for the solver.

The numpy kernels in :mod:`posefusion.factors` are the reference
implementation; these loops compute the same quantities without the
temporaries. ``AVAILABLE`` is False when numba cannot be imported, in which
case the solver stays on the numpy path.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    if os.environ.get("POSEFUSION_DISABLE_JIT"):
        raise ImportError("disabled by environment")
    from numba import njit

    AVAILABLE = True
except ImportError:  # pragma: no cover
    AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def scatter(J, r, gidx, hband, grad, u):
    """Accumulate ``J^T J`` into upper banded storage and ``J^T r`` into ``grad``.

    ``gidx[n, c]`` is the global column of Jacobian column ``c`` of factor
    ``n``, or -1 for a fixed node.
    """
    n, d, c = J.shape
    for f in range(n):
        for a in range(c):
            ga = gidx[f, a]
            if ga < 0:
                continue
            acc = 0.0
            for k in range(d):
                acc += J[f, k, a] * r[f, k]
            grad[ga] += acc
            for b in range(c):
                gb = gidx[f, b]
                if gb < ga:
                    continue
                acc = 0.0
                for k in range(d):
                    acc += J[f, k, a] * J[f, k, b]
                hband[u + ga - gb, gb] += acc


@njit(cache=True)
def local_linearize(P, Q, idx, dp, dq, MT, W, delta, jac, r_out, J_out):
    """Whitened, Huber-weighted residuals and Jacobians of relative-pose factors.

    Writes ``r_out`` (n, 6) and, if ``jac``, ``J_out`` (n, 6, 12); returns the
    robust cost. ``delta`` holds NaN for factors without a robust loss.
    """
    n = idx.shape[0]
    cost = 0.0
    rr = np.empty(6)
    JJ = np.zeros((6, 12))
    Ri = np.empty((3, 3))
    Jinv = np.empty((3, 3))
    for f in range(n):
        i = idx[f, 0]
        j = idx[f, 1]
        wi, xi, yi, zi = Q[i, 0], Q[i, 1], Q[i, 2], Q[i, 3]
        wj, xj, yj, zj = Q[j, 0], -Q[j, 1], -Q[j, 2], -Q[j, 3]
        bw, bx, by, bz = dq[f, 0], dq[f, 1], dq[f, 2], dq[f, 3]
        # t = qi * dq
        tw = wi * bw - xi * bx - yi * by - zi * bz
        tx = wi * bx + xi * bw + yi * bz - zi * by
        ty = wi * by - xi * bz + yi * bw + zi * bx
        tz = wi * bz + xi * by - yi * bx + zi * bw
        # e = conj(qj) * t
        ew = wj * tw - xj * tx - yj * ty - zj * tz
        ex = wj * tx + xj * tw + yj * tz - zj * ty
        ey = wj * ty - xj * tz + yj * tw + zj * tx
        ez = wj * tz + xj * ty - yj * tx + zj * tw
        nrm = math.sqrt(ew * ew + ex * ex + ey * ey + ez * ez)
        ew /= nrm
        ex /= nrm
        ey /= nrm
        ez /= nrm
        sign = 1.0
        if ew < 0.0:
            sign = -1.0
        elif ew == 0.0:
            ax, ay, az = abs(ex), abs(ey), abs(ez)
            lead = ex
            if ay > ax and ay >= az:
                lead = ey
            elif az > ax and az > ay:
                lead = ez
            if lead < 0.0:
                sign = -1.0
        ew *= sign
        ex *= sign
        ey *= sign
        ez *= sign
        vn = math.sqrt(ex * ex + ey * ey + ez * ez)
        if vn < 1e-8:
            k = 2.0 / ew * (1.0 - vn * vn / (3.0 * ew * ew))
        else:
            k = 2.0 * math.atan2(vn, ew) / vn
        rx, ry, rz = k * ex, k * ey, k * ez

        w, x, y, z = Q[i, 0], Q[i, 1], Q[i, 2], Q[i, 3]
        Ri[0, 0] = 1 - 2 * (y * y + z * z)
        Ri[0, 1] = 2 * (x * y - w * z)
        Ri[0, 2] = 2 * (x * z + w * y)
        Ri[1, 0] = 2 * (x * y + w * z)
        Ri[1, 1] = 1 - 2 * (x * x + z * z)
        Ri[1, 2] = 2 * (y * z - w * x)
        Ri[2, 0] = 2 * (x * z - w * y)
        Ri[2, 1] = 2 * (y * z + w * x)
        Ri[2, 2] = 1 - 2 * (x * x + y * y)
        d0 = P[j, 0] - P[i, 0]
        d1 = P[j, 1] - P[i, 1]
        d2 = P[j, 2] - P[i, 2]
        v0 = Ri[0, 0] * d0 + Ri[1, 0] * d1 + Ri[2, 0] * d2
        v1 = Ri[0, 1] * d0 + Ri[1, 1] * d1 + Ri[2, 1] * d2
        v2 = Ri[0, 2] * d0 + Ri[1, 2] * d1 + Ri[2, 2] * d2
        rr[0] = dp[f, 0] - v0
        rr[1] = dp[f, 1] - v1
        rr[2] = dp[f, 2] - v2
        rr[3] = rx
        rr[4] = ry
        rr[5] = rz

        s = 0.0
        for a in range(6):
            acc = 0.0
            for b in range(a + 1):
                acc += W[f, a, b] * rr[b]
            r_out[f, a] = acc
            s += acc * acc
        dl = delta[f]
        if dl == dl and s > dl * dl:
            root = math.sqrt(s)
            cost += 2.0 * dl * root - dl * dl
            kw = math.sqrt(dl / root)
        else:
            cost += s
            kw = 1.0
        if kw != 1.0:
            for a in range(6):
                r_out[f, a] *= kw
        if not jac:
            continue

        for a in range(3):
            for b in range(3):
                JJ[a, b] = Ri[b, a]
                JJ[a, 6 + b] = -Ri[b, a]
        JJ[0, 3] = 0.0
        JJ[0, 4] = v2
        JJ[0, 5] = -v1
        JJ[1, 3] = -v2
        JJ[1, 4] = 0.0
        JJ[1, 5] = v0
        JJ[2, 3] = v1
        JJ[2, 4] = -v0
        JJ[2, 5] = 0.0

        th = math.sqrt(rx * rx + ry * ry + rz * rz)
        if th < 1e-5:
            coef = 1.0 / 12.0 + th * th / 720.0
        else:
            coef = 1.0 / (th * th) - (1.0 + math.cos(th)) / (2.0 * th * math.sin(th))
        # K = skew(r); Jinv = I + K/2 + coef K^2, K^2 = r r^T - th^2 I
        Jinv[0, 0] = 1.0 + coef * (rx * rx - th * th)
        Jinv[1, 1] = 1.0 + coef * (ry * ry - th * th)
        Jinv[2, 2] = 1.0 + coef * (rz * rz - th * th)
        Jinv[0, 1] = -0.5 * rz + coef * rx * ry
        Jinv[1, 0] = 0.5 * rz + coef * rx * ry
        Jinv[0, 2] = 0.5 * ry + coef * rx * rz
        Jinv[2, 0] = -0.5 * ry + coef * rx * rz
        Jinv[1, 2] = -0.5 * rx + coef * ry * rz
        Jinv[2, 1] = 0.5 * rx + coef * ry * rz
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for m in range(3):
                    acc += Jinv[a, m] * MT[f, m, b]
                JJ[3 + a, 3 + b] = acc
                JJ[3 + a, 9 + b] = -Jinv[b, a]
        for a in range(6):
            for c in range(12):
                acc = 0.0
                for b in range(a + 1):
                    acc += W[f, a, b] * JJ[b, c]
                J_out[f, a, c] = kw * acc
    return cost


@njit(cache=True)
def retract(P, Q, free_rows, delta):
    """In-place ``p += dp`` and ``q <- canonical(q * exp(dtheta))`` on free rows."""
    for k in range(free_rows.shape[0]):
        i = free_rows[k]
        P[i, 0] += delta[k, 0]
        P[i, 1] += delta[k, 1]
        P[i, 2] += delta[k, 2]
        px, py, pz = delta[k, 3], delta[k, 4], delta[k, 5]
        th = math.sqrt(px * px + py * py + pz * pz)
        half = 0.5 * th
        if th < 1e-8:
            s = 0.5 - th * th / 48.0
        else:
            s = math.sin(half) / th
        bw, bx, by, bz = math.cos(half), s * px, s * py, s * pz
        aw, ax, ay, az = Q[i, 0], Q[i, 1], Q[i, 2], Q[i, 3]
        w = aw * bw - ax * bx - ay * by - az * bz
        x = aw * bx + ax * bw + ay * bz - az * by
        y = aw * by - ax * bz + ay * bw + az * bx
        z = aw * bz + ax * by - ay * bx + az * bw
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if w < 0.0 or (w == 0.0 and _lead(x, y, z) < 0.0):
            n = -n
        Q[i, 0] = w / n
        Q[i, 1] = x / n
        Q[i, 2] = y / n
        Q[i, 3] = z / n


@njit(cache=True)
def _lead(x, y, z):
    ax, ay, az = abs(x), abs(y), abs(z)
    if ay > ax and ay >= az:
        return y
    if az > ax and az > ay:
        return z
    return x
