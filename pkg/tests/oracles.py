"""Independent reference implementations used by the tests."""

import numpy as np

STEP_MM = 0.01


def _rot(alpha, beta):
    a, b = np.radians(alpha), np.radians(beta)
    rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    return rz @ ry


def ray_march(alpha, beta, Y, Z, radius=135.0, reach=140.0):
    """First point of the impact line inside the sphere, by stepping 0.01 mm then bisecting.

    The line is walked in the global frame (head at the origin, impactor
    moving along +x), then the hit is rotated into the head frame.
    """
    start = np.array([-reach, -Y, -Z])
    d = np.array([1.0, 0.0, 0.0])
    t = np.arange(0.0, 2 * reach, STEP_MM)
    inside = np.linalg.norm(start[None, :] + t[:, None] * d, axis=1) <= radius
    if not inside.any():
        return None
    k = int(np.argmax(inside))
    lo, hi = t[k - 1], t[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(start + mid * d) <= radius:
            hi = mid
        else:
            lo = mid
    p_global = start + hi * d
    return _rot(alpha, beta).T @ p_global


def region_of_point(p):
    """Region rule written out independently, with closed lower edges."""
    r = np.linalg.norm(p)
    eta = np.degrees(np.arcsin(p[2] / r))
    theta = np.degrees(np.arctan2(p[1], p[0]))
    if eta < -34.0:
        return "Top"
    if -45.0 <= theta < 45.0:
        return "Facemask"
    if 45.0 <= theta < 135.0:
        return "Right"
    if -135.0 <= theta < -45.0:
        return "Left"
    return "Back"


def mae(p, r):
    p, r = np.ravel(p), np.ravel(r)
    return sum(abs(a - b) for a, b in zip(p, r)) / len(p)


def rmse(p, r):
    p, r = np.ravel(p), np.ravel(r)
    return (sum((a - b) ** 2 for a, b in zip(p, r)) / len(p)) ** 0.5


def r2(p, r):
    p, r = np.ravel(p), np.ravel(r)
    mean = sum(r) / len(r)
    ss_res = sum((a - b) ** 2 for a, b in zip(p, r))
    ss_tot = sum((b - mean) ** 2 for b in r)
    return 1.0 - ss_res / ss_tot


def peaks(profiles):
    return [max(row) for row in np.asarray(profiles).tolist()]


def confusion_counts(pred, ref, labels):
    counts = [[0] * len(labels) for _ in labels]
    for p, r in zip(pred, ref):
        counts[labels.index(r)][labels.index(p)] += 1
    return counts


def numeric_gradients(params, f, eps=1e-6):
    """Central differences of scalar f(params) for every parameter entry."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f(params)
            flat[i] = old - eps
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def relative_error(a, n):
    """Norm-wise relative error of an analytic gradient against a numeric one."""
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)
