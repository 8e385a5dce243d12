"""Independent reference implementations used by the test-suite."""
import numpy as np


def naive_conv2d(x, w, b, stride=1, padding=0):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(n):
        for o in range(k):
            for y in range(ho):
                for z in range(wo):
                    acc = b[o]
                    for ci in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ci, y * stride + dy, z * stride + dx] * w[o, ci, dy, dx]
                    out[i, o, y, z] = acc
    return out


def naive_maxpool(x, size, stride):
    n, c, h, w = x.shape
    ho, wo = (h - size) // stride + 1, (w - size) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for i in range(n):
        for ci in range(c):
            for y in range(ho):
                for z in range(wo):
                    best = -np.inf
                    for dy in range(size):
                        for dx in range(size):
                            best = max(best, x[i, ci, y * stride + dy, z * stride + dx])
                    out[i, ci, y, z] = best
    return out


def numeric_grad(f, arrays, h=1e-3):
    """Central differences of scalar ``f()`` w.r.t. each array (perturbed in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            up = f()
            a[idx] = old - h
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale
