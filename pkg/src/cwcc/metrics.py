"""Angular error metrics and the five-statistic error summary."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

GREY = np.full(3, 1.0 / math.sqrt(3.0))


def _as_illuminants(e, name: str) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != 3:
        raise ValueError(f"{name}: expected RGB triplet(s), got shape {e.shape}")
    if not np.all(np.isfinite(e)):
        raise ValueError(f"{name}: non-finite illuminant {e}")
    if np.any(np.linalg.norm(e, axis=-1) == 0):
        raise ValueError(f"{name}: zero illuminant vector")
    return e


def _angle_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # atan2(|a x b|, a . b) equals the clamped arccos of the cosine but stays
    # well conditioned near 0 degrees, where arccos amplifies one ulp to ~1e-6.
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    sin = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.degrees(np.arctan2(sin, np.sum(a * b, axis=-1)))


def recovery_error(e_gt, e_est):
    """Angle in degrees between ground-truth and estimated illuminants.

    Accepts single triplets or ``[N, 3]`` arrays; magnitude is ignored.
    """
    e_gt = _as_illuminants(e_gt, "e_gt")
    e_est = _as_illuminants(e_est, "e_est")
    out = _angle_deg(e_gt, e_est)
    return float(out) if out.ndim == 0 else out


def reproduction_error(e_gt, e_est):
    """Angle in degrees between ``e_gt / e_est`` and the neutral grey axis."""
    e_gt = _as_illuminants(e_gt, "e_gt")
    e_est = _as_illuminants(e_est, "e_est")
    if np.any(e_est == 0):
        raise ValueError(f"e_est has a zero component: {e_est}")
    out = _angle_deg(e_gt / e_est, np.broadcast_to(GREY, np.broadcast_shapes(e_gt.shape, e_est.shape)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ErrorSummary:
    best25_mean: float
    mean: float
    median: float
    trimean: float
    worst25_mean: float

    FIELDS = ("best25_mean", "mean", "median", "trimean", "worst25_mean")

    def as_dict(self) -> dict:
        return asdict(self)

    def format(self, decimals: int = 4) -> str:
        return "  ".join(f"{k}={getattr(self, k):.{decimals}f}" for k in self.FIELDS)

    @classmethod
    def average(cls, summaries) -> "ErrorSummary":
        summaries = list(summaries)
        if not summaries:
            raise ValueError("cannot average zero summaries")
        return cls(**{k: float(np.mean([getattr(s, k) for s in summaries]))
                      for k in cls.FIELDS})


def summarize(errors) -> ErrorSummary:
    """Best 25 %, mean, median, trimean and worst 25 % of a list of errors.

    The 25 % tails hold ``ceil(n / 4)`` elements each.  Quartiles for the
    trimean use linear interpolation between order statistics.
    """
    x = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("summarize() needs at least one error value")
    if not np.all(np.isfinite(x)) or x[0] < 0:
        raise ValueError("errors must be finite and non-negative")
    k = math.ceil(x.size / 4)
    q1, q2, q3 = np.percentile(x, [25, 50, 75])
    return ErrorSummary(
        best25_mean=float(x[:k].mean()),
        mean=float(x.mean()),
        median=float(np.median(x)),
        trimean=float((q1 + 2 * q2 + q3) / 4),
        worst25_mean=float(x[-k:].mean()),
    )


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError(f"pearson needs two equal-length sequences of length >= 2, "
                         f"got {x.size} and {y.size}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for a zero-variance sequence")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))
