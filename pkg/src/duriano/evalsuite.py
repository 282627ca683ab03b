"""Objective pitch evaluation: contour correlation and mean-normalized Gaussian fits."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .pitch import PitchContour

SYSTEMS = ("original", "score", "f0_based")


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float


@dataclass
class EvalReport:
    labels: list[str]
    matrix: np.ndarray  # [n, n] Pearson coefficients, nan where degenerate
    fits: dict[str, GaussianFit]

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("\t" + "\t".join(self.labels) + "\n")
        for label, row in zip(self.labels, self.matrix):
            buf.write(label + "\t" + "\t".join(f"{v:.4f}" for v in row) + "\n")
        buf.write("\nsystem\tmu\tsigma\n")
        for label in self.labels:
            fit = self.fits[label]
            buf.write(f"{label}\t{fit.mu:.4f}\t{fit.sigma:.4f}\n")
        return buf.getvalue()


def _values(x) -> np.ndarray:
    if isinstance(x, PitchContour):
        x = x.f0
    return np.asarray(x, dtype=np.float64)


def pearson(x, y) -> float:
    """Sample Pearson coefficient over frames voiced (nonzero) in both contours."""
    x, y = _values(x), _values(y)
    if x.shape != y.shape or x.ndim != 1:
        raise EvalError(f"contours must be 1-D and equal length, got {x.shape} and {y.shape}")
    both = (x != 0) & (y != 0)
    x, y = x[both], y[both]
    if len(x) < 2:
        raise EvalError("degenerate contour: fewer than 2 mutually voiced frames")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise EvalError("degenerate contour: zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def resample_contour(x, target_length: int) -> np.ndarray:
    """Linear interpolation inside voiced spans; unvoiced frames stay 0 (nearest source frame)."""
    x = _values(x)
    if target_length < 2:
        raise EvalError("target_length must be >= 2")
    n = len(x)
    if n == target_length:
        return x.copy()
    if n == 1:
        return np.full(target_length, x[0])
    pos = np.linspace(0.0, n - 1, target_length)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    voiced = x != 0
    nearest = np.where(frac < 0.5, lo, hi)
    out = (1 - frac) * x[lo] + frac * x[hi]
    # one side unvoiced: hold the voiced neighbour instead of blending toward zero
    out = np.where(voiced[lo] & ~voiced[hi], x[lo], out)
    out = np.where(~voiced[lo] & voiced[hi], x[hi], out)
    return np.where(voiced[nearest], out, 0.0)


def normalize_mean_one(x) -> np.ndarray:
    """Voiced frames divided by their mean; unvoiced frames are dropped."""
    x = _values(x)
    voiced = x[x > 0]
    if len(voiced) == 0:
        raise EvalError("no voiced frames to normalize")
    return voiced / voiced.mean()


def fit_gaussian(samples) -> GaussianFit:
    """Maximum-likelihood single Gaussian (population standard deviation)."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if len(s) < 2:
        raise EvalError("fit_gaussian needs at least 2 samples")
    return GaussianFit(float(s.mean()), float(s.std(ddof=0)))


def eval_report(contours: dict, strict: bool = False) -> EvalReport:
    """Correlation matrix and per-system fits over contours resampled to the shortest length.

    With ``strict`` a degenerate pair raises; otherwise its coefficient is nan.
    """
    labels = list(contours)
    if len(labels) < 2:
        raise EvalError("at least two systems are required")
    raw = [_values(contours[k]) for k in labels]
    n = min(len(v) for v in raw)
    series = [resample_contour(v, n) for v in raw]
    k = len(labels)
    matrix = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            try:
                r = pearson(series[i], series[j])
            except EvalError:
                if strict:
                    raise
                r = float("nan")
            matrix[i, j] = matrix[j, i] = r
    fits = {label: fit_gaussian(normalize_mean_one(v)) for label, v in zip(labels, raw)}
    return EvalReport(labels, matrix, fits)


def read_report(text: str) -> EvalReport:
    """Parse the TSV written by ``EvalReport.to_tsv``."""
    head, _, tail = text.strip("\n").partition("\n\n")
    rows = [line.split("\t") for line in head.splitlines()]
    labels = rows[0][1:]
    matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    fits = {}
    for line in tail.splitlines()[1:]:
        label, mu, sigma = line.split("\t")
        fits[label] = GaussianFit(float(mu), float(sigma))
    return EvalReport(labels, matrix, fits)
