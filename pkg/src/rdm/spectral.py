"""Dense symmetric spectral analysis of feature correlations.

Feature batches are plain ``(n, k)`` float arrays whose rows are per-sample
feature vectors. Correlations are uncentered second moments, ``E f f^T``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirectionWarning, DegenerateSpectrumError, InvalidInputError

CLAMP_TOL = 1e-10
TIE_TOL = 1e-9
DEFAULT_COVERAGE = 0.9999


def as_batch(batch, name="batch"):
    """Validate and return a feature batch as a 2-D float64 array."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty (n, k) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted in non-increasing order.

    Values in ``(-clamp_tol, 0)`` are round-off and clamped to zero; anything
    more negative is rejected. ``signed=True`` skips the clamp for spectra of
    matrices that need not be PSD (symmetrized cross-correlations).
    """

    values: np.ndarray
    clamp_tol: float = CLAMP_TOL
    signed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size == 0:
            raise InvalidInputError("empty spectrum")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("spectrum has non-finite values")
        v = np.sort(v)[::-1]
        if not self.signed:
            if v[-1] < -self.clamp_tol:
                raise InvalidInputError(
                    f"eigenvalue {v[-1]!r} is below -clamp_tol={self.clamp_tol!r}"
                )
            v = np.where(v < 0, 0.0, v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def scaled(self, c):
        return Spectrum(self.values * c, self.clamp_tol, self.signed)

    def to_rows(self):
        return [(i + 1, float(v)) for i, v in enumerate(self.values)]


@dataclass(frozen=True)
class CorrelationEstimate:
    """A symmetric ``k x k`` correlation; ``sample_count == 0`` means exact."""

    matrix: np.ndarray
    sample_count: int = 0
    psd: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInputError(f"correlation must be square, got shape {m.shape}")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def k(self):
        return self.matrix.shape[0]


def _matrix(c):
    if isinstance(c, CorrelationEstimate):
        return c.matrix
    return np.asarray(c, dtype=np.float64)


def correlation(batch):
    """Uncentered feature correlation ``(1/n) sum_x f(x) f(x)^T``."""
    z = as_batch(batch)
    return CorrelationEstimate(z.T @ z / z.shape[0], sample_count=z.shape[0])


def cross_correlation(batch_a, batch_b):
    """Symmetrized correlation between paired rows of two batches.

    Row ``i`` of ``batch_a`` and ``batch_b`` form a positive pair. Because the
    pair distribution is symmetric, the estimate is ``(1/2n) sum (a b^T + b a^T)``.
    """
    a = as_batch(batch_a, "batch_a")
    b = as_batch(batch_b, "batch_b")
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    m = a.T @ b / a.shape[0]
    return CorrelationEstimate(m, sample_count=a.shape[0], psd=False)


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)  # first maximal component on ties
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _order_ties(vals, vecs, tol=TIE_TOL):
    """Within groups of (near-)equal eigenvalues, order vectors lexicographically.

    Groups are anchored at their first member so a group never spans more than
    ``tol``. Values keep their sorted order; only the vectors are permuted.
    """
    k = vals.size
    out = vecs.copy()
    start = 0
    while start < k:
        stop = start + 1
        while stop < k and abs(vals[start] - vals[stop]) < tol:
            stop += 1
        if stop - start > 1:
            block = out[:, start:stop]
            cols = sorted(range(stop - start), key=lambda j: tuple(block[:, j]), reverse=True)
            out[:, start:stop] = block[:, cols]
        start = stop
    return out


def eigh(c, clamp_tol=CLAMP_TOL):
    """Eigendecomposition with descending eigenvalues and deterministic signs.

    Returns ``(Spectrum, V)`` where the columns of ``V`` are unit eigenvectors
    matching the spectrum order, each with its largest-magnitude component
    positive.
    """
    m = _matrix(c)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    vals = vals[::-1]
    vecs = _order_ties(vals, _fix_signs(vecs[:, ::-1]))
    signed = isinstance(c, CorrelationEstimate) and not c.psd
    return Spectrum(vals, clamp_tol=clamp_tol, signed=signed), vecs


def spectrum(c):
    return eigh(c)[0]


def _entropy(q):
    q = q[q > 0]
    return float(-np.sum(q * np.log(q)))


def effective_rank(s):
    """``exp`` of the Shannon entropy of the normalized eigenvalues.

    Accepts a :class:`Spectrum` or any array of non-negative values. The result
    lies in ``[1, k]`` and is invariant to scaling of the spectrum.
    """
    v = s.values if isinstance(s, Spectrum) else np.asarray(s, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("empty spectrum")
    if np.any(v < 0):
        raise InvalidInputError("effective rank needs a non-negative spectrum")
    total = v.sum()
    if not total > 0:
        raise DegenerateSpectrumError("all-zero spectrum has no effective rank")
    er = np.exp(_entropy(v / total))
    return float(min(max(er, 1.0), v.size))


def coverage_count(s, coverage=DEFAULT_COVERAGE):
    """Smallest ``m`` whose top-``m`` eigenvalues hold ``coverage`` of the trace."""
    if not 0.0 < coverage <= 1.0:
        raise InvalidInputError(f"coverage must lie in (0, 1], got {coverage!r}")
    v = s.values if isinstance(s, Spectrum) else np.sort(np.asarray(s, dtype=float))[::-1]
    total = v.sum()
    if not total > 0:
        raise DegenerateSpectrumError("cannot take coverage of an all-zero spectrum")
    csum = np.cumsum(v)
    m = int(np.searchsorted(csum, coverage * total * (1 - 1e-14))) + 1
    return min(m, v.size)


def eigenspace_alignment(c_p, c_z, coverage=DEFAULT_COVERAGE):
    """Mean cosine between top eigenvectors ``u_i`` of ``c_z`` and ``c_p u_i``.

    ``m`` top eigenvectors are used, the fewest whose eigenvalues cover
    ``coverage`` of the trace of ``c_z``. A direction with ``c_p u_i = 0``
    contributes zero and emits :class:`DegenerateDirectionWarning`.
    """
    mp, mz = _matrix(c_p), _matrix(c_z)
    if mp.shape != mz.shape:
        raise InvalidInputError(f"shape mismatch: {mp.shape} vs {mz.shape}")
    sz, u = eigh(mz)
    m = coverage_count(sz, coverage)
    u = u[:, :m]
    pu = mp @ u
    norms = np.linalg.norm(pu, axis=0)
    scale = max(np.abs(mp).max(), np.finfo(float).tiny)
    dead = norms <= 1e-14 * scale
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} eigen-direction(s) of c_z are annihilated by c_p",
            DegenerateDirectionWarning,
            stacklevel=2,
        )
    cos = np.zeros(m)
    live = ~dead
    cos[live] = np.einsum("ij,ij->j", u[:, live], pu[:, live]) / norms[live]
    return float(np.clip(cos.mean(), -1.0, 1.0))


def empirical_filter(spec_p, spec_z, clamp_tol=CLAMP_TOL):
    """Online filter values ``g_i = sqrt(lam_p_i / lam_z_i)`` by rank pairing.

    Returns ``(lam_z, g)`` sorted by ``lam_z`` ascending; indices with
    ``lam_z_i <= clamp_tol`` are dropped.
    """
    lp = np.asarray(spec_p, dtype=float)
    lz = np.asarray(spec_z, dtype=float)
    if lp.shape != lz.shape:
        raise InvalidInputError(f"length mismatch: {lp.size} vs {lz.size}")
    lp = np.sort(lp)[::-1]
    lz = np.sort(lz)[::-1]
    keep = lz > clamp_tol
    lz, lp = lz[keep], lp[keep]
    g = np.sqrt(np.maximum(lp, 0.0) / lz)
    order = np.argsort(lz, kind="stable")
    return lz[order], g[order]


def write_spectrum_csv(path, s):
    """One row per eigen-index: ``index,eigenvalue`` (1-based, 17 digits)."""
    if not isinstance(s, Spectrum):
        s = Spectrum(s)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "eigenvalue"])
        for i, v in s.to_rows():
            w.writerow([i, f"{v:.17g}"])


def read_spectrum_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Spectrum([float(r["eigenvalue"]) for r in rows])


def write_matrix_csv(path, c):
    m = _matrix(c)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{j + 1}" for j in range(m.shape[1])])
        for row in m:
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return CorrelationEstimate(np.array([[float(v) for v in r] for r in rows]))


def entropy(q):
    """Shannon entropy (natural log) of a probability vector, ``0 log 0 = 0``."""
    return _entropy(np.asarray(q, dtype=np.float64))


def transport(q, i, j, delta):
    """Move ``delta`` of mass from index ``j`` to index ``i``."""
    q = np.array(q, dtype=np.float64)
    if not 0 < delta < q[j]:
        raise InvalidInputError(f"delta must lie in (0, q[j]={q[j]!r})")
    q[i] += delta
    q[j] -= delta
    return q


def entropy_transport_path(q_from, q_to, tol=1e-13):
    """Move mass from the tail of ``q_from`` to its head until it equals ``q_to``.

    Both inputs are descending probability vectors where ``q_to`` dominates at
    the head and is dominated at the tail. Returns the list of intermediate
    distributions, starting with ``q_from``. Each move sends mass from a later
    index to an earlier one, so entropy falls at every step.
    """
    q = np.array(q_from, dtype=np.float64)
    target = np.asarray(q_to, dtype=np.float64)
    path = [q.copy()]
    i, j = 0, q.size - 1
    while i < j:
        delta = min(target[i] - q[i], q[j] - target[j])
        if delta > tol:
            q[i] += delta
            q[j] -= delta
            path.append(q.copy())
        if abs(target[i] - q[i]) <= tol:
            i += 1
        else:
            j -= 1
    return path
