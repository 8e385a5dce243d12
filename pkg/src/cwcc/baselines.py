"""Statistics-based illuminant estimators (Grey-World family)."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

SATURATION = 1.0


def _check(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3 or img.shape[0] * img.shape[1] == 0:
        raise ValueError(f"expected a non-empty HxWx3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0:
        raise ValueError("image must be finite and non-negative")
    return img


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0 or np.any(v <= 0):
        raise ValueError(f"degenerate estimate {v}: image has no usable content "
                         "in at least one channel")
    return v / n


def _pixels(img: np.ndarray, exclude_saturated: bool, saturation: float) -> np.ndarray:
    px = img.reshape(-1, 3)
    if exclude_saturated:
        px = px[np.all(px < saturation, axis=1)]
        if px.size == 0:
            raise ValueError("every pixel is saturated")
    return px


def minkowski_mean(values: np.ndarray, p: float, axis=0) -> np.ndarray:
    """``(mean(v**p))**(1/p)`` computed relative to the max so large p cannot overflow."""
    values = np.asarray(values, dtype=np.float64)
    if p == 1:
        return values.mean(axis=axis)
    top = values.max(axis=axis, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    scaled = np.mean((values / safe) ** p, axis=axis) ** (1.0 / p)
    return scaled * np.squeeze(top, axis=axis)


def grey_world(image) -> np.ndarray:
    img = _check(image)
    return _normalize(img.reshape(-1, 3).mean(axis=0))


def white_patch(image, exclude_saturated: bool = True,
                saturation: float = SATURATION) -> np.ndarray:
    img = _check(image)
    return _normalize(_pixels(img, exclude_saturated, saturation).max(axis=0))


def shades_of_grey(image, p: float = 6.0, exclude_saturated: bool = True,
                   saturation: float = SATURATION) -> np.ndarray:
    if p < 1:
        raise ValueError(f"Minkowski order p must be >= 1, got {p}")
    img = _check(image)
    return _normalize(minkowski_mean(_pixels(img, exclude_saturated, saturation), p))


def derivative_magnitude(channel: np.ndarray, order: int) -> np.ndarray:
    """Central-difference gradient magnitude (order 1) or |Laplacian| (order 2).

    Borders use replicate padding.
    """
    c = np.pad(channel, 1, mode="edge")
    centre = c[1:-1, 1:-1]
    up, down = c[:-2, 1:-1], c[2:, 1:-1]
    left, right = c[1:-1, :-2], c[1:-1, 2:]
    if order == 1:
        dy = (down - up) / 2.0
        dx = (right - left) / 2.0
        return np.hypot(dx, dy)
    if order == 2:
        return np.abs(up + down + left + right - 4.0 * centre)
    raise ValueError(f"derivative order must be 1 or 2, got {order}")


def grey_edge(image, order: int = 1, p: float = 6.0, sigma: float = 2.0) -> np.ndarray:
    """Minkowski-p mean of per-channel edge magnitude after Gaussian smoothing."""
    if p < 1:
        raise ValueError(f"Minkowski order p must be >= 1, got {p}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    img = _check(image)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"image {img.shape[:2]} smaller than the 3x3 derivative stencil")
    est = np.empty(3)
    for ch in range(3):
        plane = img[..., ch]
        if sigma > 0:
            plane = gaussian_filter(plane, sigma, mode="nearest")
        est[ch] = minkowski_mean(derivative_magnitude(plane, order).ravel(), p)
    return _normalize(est)


METHODS = {
    "grey_world": grey_world,
    "white_patch": white_patch,
    "shades_of_grey": shades_of_grey,
    "grey_edge": grey_edge,
}


def estimate(method: str, image, **params) -> np.ndarray:
    """Dispatch by name; unknown hyperparameters for a method are ignored."""
    if method not in METHODS:
        raise ValueError(f"unknown baseline {method!r}; choose from {sorted(METHODS)}")
    allowed = {
        "grey_world": (),
        "white_patch": ("exclude_saturated",),
        "shades_of_grey": ("p", "exclude_saturated"),
        "grey_edge": ("order", "p", "sigma"),
    }[method]
    kwargs = {k: v for k, v in params.items() if k in allowed and v is not None}
    return METHODS[method](image, **kwargs)
