"""Spectral filters and hand-crafted target transformations.

A filter is a scalar map on singular values. Online filters act through the
symmetric matrix ``V g(S) V^T`` built from a batch's thin SVD; target filters
rescale the batch's singular values directly, ``U diag(s h(s)) V^T``. Both are
computed outside of any gradient path.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import (
    ConfigError,
    DegenerateSpectrumError,
    FilterDomainError,
    FilterUsageWarning,
    InvalidInputError,
)
from .spectral import CLAMP_TOL, as_batch, correlation, spectrum

FLOOR_SIGMA = 1e-6
MONO_TOL = 1e-9
DEFAULT_GRID = np.geomspace(0.05, 20.0, 64)


class FilterKind(str, enum.Enum):
    LOW_PASS = "LowPass"
    HIGH_PASS = "HighPass"
    CONSTANT = "Constant"
    NON_MONOTONE = "NonMonotone"


@dataclass(frozen=True)
class SpectralFilter:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    params: tuple = ()

    def __call__(self, sigma):
        return np.asarray(self.fn(np.asarray(sigma, dtype=np.float64)), dtype=np.float64)

    def evaluate(self, sigma):
        """Evaluate on floored singular values, raising on non-finite output."""
        s = np.maximum(np.asarray(sigma, dtype=np.float64), FLOOR_SIGMA)
        with np.errstate(all="ignore"):
            out = self(s) * np.ones_like(s)
        bad = ~np.isfinite(out)
        if np.any(bad):
            raise FilterDomainError(self.name, s[bad][0])
        return out


@dataclass(frozen=True)
class FilterClass:
    kind: FilterKind
    grid: np.ndarray = field(repr=False)


def constant(c=1.0):
    return SpectralFilter(f"const:{c:g}", lambda s: np.full_like(s, c), (float(c),))


identity = SpectralFilter("id", np.ones_like, (1.0,))
directpred = SpectralFilter("directpred", lambda s: s)
log = SpectralFilter("log", np.log)
log1p = SpectralFilter("log1p", np.log1p)
log1psq = SpectralFilter("log1psq", lambda s: np.log1p(s * s))


def power(p):
    """``h(s) = s**p``; high-pass for ``p < 0``."""
    p = float(p)
    return SpectralFilter(f"pow:{p:g}", lambda s: np.power(s, p), (p,))


def classify(filt, grid=DEFAULT_GRID, mono_tol=MONO_TOL):
    """Monotonicity verdict from consecutive differences on an ascending grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 3:
        raise InvalidInputError("classification grid needs at least 3 points")
    if np.any(np.diff(grid) <= 0):
        raise InvalidInputError("classification grid must be strictly ascending")
    if grid[0] <= FLOOR_SIGMA:
        raise InvalidInputError(f"grid must lie above floor_sigma={FLOOR_SIGMA}")
    diffs = np.diff(filt.evaluate(grid))
    if np.all(diffs > mono_tol):
        kind = FilterKind.LOW_PASS
    elif np.all(diffs < -mono_tol):
        kind = FilterKind.HIGH_PASS
    elif np.all(np.abs(diffs) <= mono_tol):
        kind = FilterKind.CONSTANT
    else:
        kind = FilterKind.NON_MONOTONE
    return FilterClass(kind, grid)


def filter_matrix(batch, filt):
    """``V g(S) V^T`` from the thin SVD of ``batch``, identity off its row span.

    Singular values are floored at ``FLOOR_SIGMA`` before filtering.
    """
    z = as_batch(batch)
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    if not s[0] > 0:
        raise InvalidInputError("batch has rank zero")
    g = filt.evaluate(s)
    k = z.shape[1]
    w = (vt.T * g) @ vt + (np.eye(k) - vt.T @ vt)
    return 0.5 * (w + w.T)


def _warn_if(filt, allowed, branch):
    kind = classify(filt).kind
    if kind not in allowed:
        warnings.warn(
            f"{filt.name} is {kind.value}; {branch} filters are expected to be "
            + " or ".join(a.value for a in allowed),
            FilterUsageWarning,
            stacklevel=3,
        )


def apply_online_filter(batch, filt):
    """Filtered online output ``batch @ W`` with ``W`` built from the batch itself."""
    _warn_if(filt, (FilterKind.LOW_PASS, FilterKind.CONSTANT), "online")
    z = as_batch(batch)
    return z @ filter_matrix(z, filt)


def apply_target_filter(batch, filt):
    """Target output ``U diag(s h(s)) V^T``; zero singular values stay zero.

    Singular values below the usual numerical-rank cutoff
    (``max(n, k) * eps * s_max``) count as zero.
    """
    _warn_if(filt, (FilterKind.HIGH_PASS, FilterKind.CONSTANT), "target")
    z = as_batch(batch)
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    live = s > max(z.shape) * np.finfo(np.float64).eps * s[0]
    scaled = np.where(live, s * filt.evaluate(s), 0.0)
    return (u * scaled) @ vt


def _sinkhorn_rounds(q, iters):
    n, k = q.shape
    for _ in range(iters):
        q = q / q.sum(axis=0, keepdims=True) / k
        yield "col", q
        q = q / q.sum(axis=1, keepdims=True) / n
        yield "row", q


def _sinkhorn_init(scores, eps):
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps!r}")
    x = as_batch(scores, "scores") / eps
    # global shift cancels under normalization
    with np.errstate(over="ignore", under="ignore"):
        q = np.exp(x - x.max())
    if not np.all(np.isfinite(q)) or np.any(q <= 0):
        raise InvalidInputError(
            f"exp(scores/eps) leaves the floating-point range at eps={eps!r}; use a larger eps"
        )
    return q


def sinkhorn_knopp(scores, iters=3, eps=0.05):
    """Sinkhorn-Knopp equipartition of ``exp(scores / eps)``.

    Each round normalizes columns to sum ``1/k`` and then rows to ``1/n``.
    The result is returned with rows rescaled to sum to one.
    """
    if iters < 0:
        raise InvalidInputError("iters must be non-negative")
    q = _sinkhorn_init(scores, eps)
    for _, q in _sinkhorn_rounds(q, int(iters)):
        pass
    return q / q.sum(axis=1, keepdims=True)


def center_sharpen(batch, center, temperature):
    """Row-wise ``softmax((z - center) / temperature)``."""
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature!r}")
    z = as_batch(batch)
    c = np.asarray(center, dtype=np.float64).reshape(-1)
    if c.size != z.shape[1]:
        raise InvalidInputError(f"center has length {c.size}, expected {z.shape[1]}")
    return special.softmax((z - c) / temperature, axis=1)


@dataclass(frozen=True)
class TransformationFilter:
    """Target filter ``h_i = sqrt(lam_z_i / lam_p_i)`` read off two batches."""

    kind: FilterKind
    lam_p: np.ndarray
    h: np.ndarray
    spearman: float


def extract_transformation_filter(online, target, const_tol=1e-8, trend=0.5):
    """Recover the target-side filter relating two branch outputs.

    Eigenvalues of both correlations are paired by rank. The verdict is
    ``Constant`` when all ``h_i`` agree to ``const_tol`` (relative), otherwise
    it follows the sign of the Spearman correlation between ``lam_p`` and ``h``
    beyond ``trend``.
    """
    p = as_batch(online, "online")
    z = as_batch(target, "target")
    if p.shape != z.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {z.shape}")
    lp = spectrum(correlation(p)).values
    lz = spectrum(correlation(z)).values
    if not lp.sum() > 0 or not lz.sum() > 0:
        raise DegenerateSpectrumError("branch output has an all-zero spectrum")
    keep = lp > CLAMP_TOL
    lp, lz = lp[keep], lz[keep]
    h = np.sqrt(lz / lp)
    order = np.argsort(lp, kind="stable")
    lp, h = lp[order], h[order]
    if h.size < 2 or np.ptp(h) <= const_tol * max(np.abs(h).max(), 1.0):
        return TransformationFilter(FilterKind.CONSTANT, lp, h, math.nan)
    rho = float(stats.spearmanr(lp, h).statistic)
    if rho < -trend:
        kind = FilterKind.HIGH_PASS
    elif rho > trend:
        kind = FilterKind.LOW_PASS
    else:
        kind = FilterKind.NON_MONOTONE
    return TransformationFilter(kind, lp, h, rho)


# Filter spec strings ------------------------------------------------------

_ONLINE = {"id": identity, "directpred": directpred, "log": log, "log1p": log1p, "log1psq": log1psq}


@dataclass(frozen=True)
class FilterSpec:
    """A parsed filter spec string.

    ``location`` is ``"online"``, ``"target"`` or ``"transform"``; transforms
    carry their parameters in ``args``.
    """

    text: str
    location: str
    filter: SpectralFilter | None = None
    args: tuple = ()

    def transform(self, batch):
        z = as_batch(batch)
        name = self.text.split(":", 1)[0]
        if name == "sinkhorn":
            iters, eps = self.args
            return sinkhorn_knopp(z, iters, eps)
        if name == "centersharp":
            (t,) = self.args
            return center_sharpen(z, z.mean(axis=0), t)
        raise InvalidInputError(f"{self.text} is not a transform")


def parse_filter(text):
    """Parse ``id``, ``directpred``, ``log``, ``log1p``, ``log1psq``,
    ``pow:<p>``, ``sinkhorn:<iters>:<eps>`` or ``centersharp:<t>``."""
    raw = str(text).strip()
    parts = raw.lower().split(":")
    head, rest = parts[0], parts[1:]
    try:
        if head in _ONLINE and not rest:
            return FilterSpec(head, "online", _ONLINE[head])
        if head == "pow" and len(rest) == 1:
            p = float(rest[0])
            if not math.isfinite(p):
                raise ValueError(p)
            return FilterSpec(f"pow:{rest[0]}", "target", power(p), (p,))
        if head == "sinkhorn" and len(rest) == 2:
            iters, eps = int(rest[0]), float(rest[1])
            if iters < 0 or not eps > 0:
                raise ValueError(raw)
            return FilterSpec(f"sinkhorn:{rest[0]}:{rest[1]}", "transform", None, (iters, eps))
        if head == "centersharp" and len(rest) == 1:
            t = float(rest[0])
            if not t > 0:
                raise ValueError(raw)
            return FilterSpec(f"centersharp:{rest[0]}", "transform", None, (t,))
    except ValueError as exc:
        raise ConfigError(f"bad parameters in filter spec {raw!r}") from exc
    raise ConfigError(f"unknown filter spec {raw!r}")


def online_spectrum(lam_z, g):
    """Eigenvalues ``g(lam)^2 * lam`` of the online correlation after filtering
    the target correlation's spectrum with ``g``.

    ``g`` is a :class:`SpectralFilter` or any vectorized callable.
    """
    lam = np.asarray(lam_z, dtype=np.float64)
    vals = g.evaluate(lam) if isinstance(g, SpectralFilter) else np.asarray(g(lam), dtype=np.float64)
    return vals**2 * lam
