"""Independent reference implementations for the metric checks.

Alignment uses Horn's quaternion method rather than an SVD, nearest
neighbours use a full distance matrix.
"""

import numpy as np
from scipy.spatial.distance import cdist


def horn_rotation(src, dst):
    """Rotation maximizing sum dst_i . R src_i for centred point sets."""
    M = src.T @ dst
    Sxx, Sxy, Sxz = M[0]
    Syx, Syy, Syz = M[1]
    Szx, Szy, Szz = M[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, np.argmax(w)]
    return np.array([
        [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
    ])


def similarity(src, dst, with_scale=True):
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - ms, dst - md
    R = horn_rotation(a, b)
    s = float(np.sum(b * (a @ R.T)) / np.sum(a * a)) if with_scale else 1.0
    return s, R, md - s * R @ ms


def ate(est, gt, alignment="sim3"):
    s, R, t = similarity(est, gt, alignment == "sim3")
    err = gt - (s * est @ R.T + t)
    total = 0.0
    for e in err:
        total += e @ e
    return (total / len(err)) ** 0.5


def scale_windows(est, gt, window, stride):
    raw = []
    start = 0
    while start + window <= len(est):
        raw.append(similarity(gt[start:start + window], est[start:start + window])[0])
        start += stride
    raw = np.array(raw)
    return raw / raw[0]


def cloud(est, gt):
    d = cdist(est, gt)
    acc = d.min(axis=1).mean()
    comp = d.min(axis=0).mean()
    return acc, comp, 0.5 * (acc + comp)
