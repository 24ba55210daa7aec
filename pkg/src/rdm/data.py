"""Synthetic positive pairs and their correlation bundles.

Two settings are covered. :class:`IsotropicAugModel` is the linear-encoder
model: natural points ``xbar ~ N(0, I_d)``, augmentations ``xbar + s*xi``, and
features ``W_f x``. :class:`FinitePopulation` is a finite sample space with
explicit augmentation probabilities and a feature table, on which every
correlation is an exact enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .errors import InvalidInputError
from .spectral import CorrelationEstimate, correlation, cross_correlation

PROB_TOL = 1e-12
MC_BATCHES = 10


@dataclass(frozen=True)
class IsotropicAugModel:
    d: int
    k: int
    aug_std: float
    encoder: np.ndarray
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.encoder, dtype=np.float64)
        if w.shape != (self.k, self.d):
            raise InvalidInputError(f"encoder must be {self.k}x{self.d}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("encoder has non-finite entries")
        if self.aug_std < 0:
            raise InvalidInputError("aug_std must be non-negative")
        object.__setattr__(self, "encoder", w)

    @classmethod
    def random(cls, d, k, aug_std, rng, seed=0):
        """Gaussian encoder with entries ``N(0, 1/d)``."""
        w = rng.standard_normal((k, d)) / np.sqrt(d)
        return cls(d, k, float(aug_std), w, seed)


def sample_pairs(model, n, rng):
    """Draw ``n`` positive pairs; returns ``(x, x_plus, xbar)`` each ``(n, d)``."""
    xbar = rng.standard_normal((n, model.d))
    xi = rng.standard_normal((n, model.d))
    xi_plus = rng.standard_normal((n, model.d))
    s = model.aug_std
    return xbar + s * xi, xbar + s * xi_plus, xbar


def sample_pair(model, rng):
    """One positive pair ``(x, x_plus)`` from a shared natural point."""
    x, x_plus, _ = sample_pairs(model, 1, rng)
    return x[0], x_plus[0]


def encode(model, x):
    return np.asarray(x) @ model.encoder.T


@dataclass(frozen=True)
class CorrelationBundle:
    """``C_z``, ``C_plus``, ``C_bar`` and the conditional covariance ``V_cond``.

    ``stderr`` maps bundle field names to per-entry standard errors for
    Monte-Carlo bundles and is empty for exact ones.
    """

    C_z: CorrelationEstimate
    C_plus: CorrelationEstimate
    C_bar: CorrelationEstimate
    V_cond: CorrelationEstimate
    stderr: dict = field(default_factory=dict)


def exact_correlations_linear(model):
    a = model.encoder @ model.encoder.T
    s2 = model.aug_std**2
    return CorrelationBundle(
        C_z=CorrelationEstimate((1 + s2) * a),
        C_plus=CorrelationEstimate(a),
        C_bar=CorrelationEstimate(a),
        V_cond=CorrelationEstimate(s2 * a),
    )


def _batch_stderr(parts):
    parts = np.stack(parts)
    if parts.shape[0] < 2:
        return np.full(parts.shape[1:], np.nan)
    return parts.std(axis=0, ddof=1) / np.sqrt(parts.shape[0])


def monte_carlo_correlations(model, samples, rng, chunk=200_000):
    """Estimate a bundle from ``samples`` sampled pairs.

    ``C_z`` pools both members of each pair; ``C_plus`` is the symmetrized
    cross-correlation. Standard errors use batch means over ``MC_BATCHES``
    contiguous batches.
    """
    samples = int(samples)
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    nb = min(MC_BATCHES, samples)
    bounds = np.linspace(0, samples, nb + 1).astype(int)
    k = model.k
    sums = {name: np.zeros((k, k)) for name in ("C_z", "C_plus", "C_bar", "V_cond")}
    per_batch = {name: [] for name in sums}
    for b in range(nb):
        acc = {name: np.zeros((k, k)) for name in sums}
        left = bounds[b + 1] - bounds[b]
        while left > 0:
            m = min(chunk, left)
            x, xp, xbar = sample_pairs(model, m, rng)
            z, zp, zb = encode(model, x), encode(model, xp), encode(model, xbar)
            acc["C_z"] += 0.5 * (z.T @ z + zp.T @ zp)
            acc["C_plus"] += 0.5 * (z.T @ zp + zp.T @ z)
            acc["C_bar"] += zb.T @ zb
            acc["V_cond"] += 0.5 * ((z - zb).T @ (z - zb) + (zp - zb).T @ (zp - zb))
            left -= m
        size = bounds[b + 1] - bounds[b]
        for name in sums:
            sums[name] += acc[name]
            per_batch[name].append(acc[name] / size)
    est = {name: CorrelationEstimate(sums[name] / samples, samples) for name in sums}
    est["C_plus"] = CorrelationEstimate(est["C_plus"].matrix, samples, psd=False)
    stderr = {name: _batch_stderr(per_batch[name]) for name in sums}
    return CorrelationBundle(stderr=stderr, **est)


def pair_batches(model, n, rng):
    """Encoded positive-pair batches ``(z, z_plus)``, each ``(n, k)``."""
    x, xp, _ = sample_pairs(model, n, rng)
    return encode(model, x), encode(model, xp)


# Finite populations -------------------------------------------------------

POPULATION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["naturals"],
    "properties": {
        "naturals": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["augmentations"],
                "properties": {
                    "prob": {"type": "number", "minimum": 0},
                    "augmentations": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["prob", "feature"],
                            "properties": {
                                "prob": {"type": "number", "minimum": 0},
                                "feature": {
                                    "type": "array",
                                    "minItems": 1,
                                    "items": {"type": "number"},
                                },
                            },
                        },
                    },
                },
            },
        }
    },
}


@dataclass(frozen=True)
class FinitePopulation:
    """Natural points with per-point augmentation distributions.

    ``aug_probs[j]`` is the conditional distribution over the augmentations of
    natural point ``j`` and ``features[j]`` holds their feature vectors, one
    row each. Every augmentation entry is a distinct sample-space point.
    """

    nat_probs: np.ndarray
    aug_probs: tuple
    features: tuple

    def __post_init__(self):
        p = np.asarray(self.nat_probs, dtype=np.float64)
        aug = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.aug_probs)
        feats = tuple(np.atleast_2d(np.asarray(f, dtype=np.float64)) for f in self.features)
        if p.ndim != 1 or p.size == 0 or len(aug) != p.size or len(feats) != p.size:
            raise InvalidInputError("population needs one augmentation list per natural point")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise InvalidInputError(f"natural probabilities must sum to 1, got {p.sum()!r}")
        k = feats[0].shape[1]
        for j, (a, f) in enumerate(zip(aug, feats)):
            if a.size == 0 or f.shape != (a.size, k):
                raise InvalidInputError(f"natural point {j}: features must be {a.size}x{k}")
            if np.any(a < 0) or abs(a.sum() - 1.0) > PROB_TOL:
                raise InvalidInputError(
                    f"natural point {j}: augmentation probabilities sum to {a.sum()!r}"
                )
            if not np.all(np.isfinite(f)):
                raise InvalidInputError(f"natural point {j}: non-finite feature")
        object.__setattr__(self, "nat_probs", p)
        object.__setattr__(self, "aug_probs", aug)
        object.__setattr__(self, "features", feats)

    @property
    def k(self):
        return self.features[0].shape[1]

    def point_table(self):
        """Flatten to ``(Z, P_aug)``: all features and the ``n_bar x n`` matrix
        of ``A(x | xbar)``."""
        z = np.vstack(self.features)
        offsets = np.cumsum([0] + [a.size for a in self.aug_probs])
        a = np.zeros((self.nat_probs.size, z.shape[0]))
        for j, probs in enumerate(self.aug_probs):
            a[j, offsets[j] : offsets[j + 1]] = probs
        return z, a

    def joint(self):
        """``P(x, x+) = sum_xbar P(xbar) A(x|xbar) A(x+|xbar)``."""
        _, a = self.point_table()
        return a.T @ (self.nat_probs[:, None] * a)

    @classmethod
    def from_dict(cls, doc):
        try:
            jsonschema.validate(doc, POPULATION_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise InvalidInputError(f"invalid population document: {exc.message}") from exc
        nats = doc["naturals"]
        has = ["prob" in nat for nat in nats]
        if any(has) and not all(has):
            raise InvalidInputError("either every natural point has 'prob' or none does")
        if all(has):
            p = [nat["prob"] for nat in nats]
        else:
            p = [1.0 / len(nats)] * len(nats)
        aug = [[a["prob"] for a in nat["augmentations"]] for nat in nats]
        feats = [[a["feature"] for a in nat["augmentations"]] for nat in nats]
        widths = {len(f) for fs in feats for f in fs}
        if len(widths) != 1:
            raise InvalidInputError("all features must have the same length")
        return cls(np.array(p), tuple(aug), tuple(feats))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "naturals": [
                {
                    "prob": float(p),
                    "augmentations": [
                        {"prob": float(q), "feature": [float(v) for v in row]}
                        for q, row in zip(a, f)
                    ],
                }
                for p, a, f in zip(self.nat_probs, self.aug_probs, self.features)
            ]
        }


def random_population(n_naturals, n_augs, k, rng):
    """Random population with Dirichlet augmentation weights."""
    p = rng.dirichlet(np.ones(n_naturals))
    aug = tuple(rng.dirichlet(np.ones(n_augs)) for _ in range(n_naturals))
    centers = rng.standard_normal((n_naturals, k))
    feats = tuple(c + 0.5 * rng.standard_normal((n_augs, k)) for c in centers)
    # renormalize after float64 draw so sums are within PROB_TOL
    p = p / p.sum()
    aug = tuple(a / a.sum() for a in aug)
    return FinitePopulation(p, aug, feats)


def empirical_correlations(pop):
    """Exact bundle for a finite population by enumeration.

    ``C_plus`` comes from the explicit pair joint, ``C_bar`` from the
    conditional means; the two are computed independently.
    """
    z, a = pop.point_table()
    marginal = pop.nat_probs @ a
    c_z = z.T @ (marginal[:, None] * z)
    c_plus = z.T @ pop.joint() @ z
    zbar = a @ z
    c_bar = zbar.T @ (pop.nat_probs[:, None] * zbar)
    v = np.zeros_like(c_z)
    for j, (probs, f) in enumerate(zip(pop.aug_probs, pop.features)):
        dev = f - zbar[j]
        v += pop.nat_probs[j] * (dev.T @ (probs[:, None] * dev))
    bundle = CorrelationBundle(
        C_z=CorrelationEstimate(c_z),
        C_plus=CorrelationEstimate(c_plus),
        C_bar=CorrelationEstimate(c_bar),
        V_cond=CorrelationEstimate(v),
    )
    scale = max(1.0, float(np.abs(c_z).max()))
    if max(population_residuals(bundle)) > 1e-10 * scale:
        raise AssertionError(f"C_plus/C_bar/V_cond identities broken: {population_residuals(bundle)}")
    return bundle


def population_residuals(bundle):
    """``(max|C_plus - C_bar|, max|C_z - C_bar - V_cond|)``."""
    r1 = np.abs(bundle.C_plus.matrix - bundle.C_bar.matrix).max()
    r2 = np.abs(bundle.C_z.matrix - bundle.C_bar.matrix - bundle.V_cond.matrix).max()
    return float(r1), float(r2)


def batch_bundle(z, z_plus):
    """Sample correlations of paired batches (no ``C_bar``/``V_cond`` available)."""
    c_z = correlation(np.vstack([z, z_plus]))
    c_plus = cross_correlation(z, z_plus)
    return c_z, c_plus


def random_orthogonal(k, rng):
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def aligned_pair_batches(lam_z, overlap, n, rng, basis=None):
    """Paired batches whose correlations share one eigenbasis exactly.

    Returns ``(z, z_pair, V)`` with ``correlation(z) == correlation(z_pair)
    == V diag(lam_z) V^T`` and ``z^T z_pair / n == V diag(overlap * lam_z) V^T``.
    ``overlap`` (scalar or per-index, in ``[0, 1]``) sets ``lam_plus / lam_z``.
    Needs ``n >= 2k``.
    """
    lam = np.asarray(lam_z, dtype=np.float64).ravel()
    k = lam.size
    c = np.broadcast_to(np.asarray(overlap, dtype=np.float64), (k,))
    if n < 2 * k:
        raise InvalidInputError(f"need n >= 2k = {2 * k}, got {n}")
    if np.any(lam < 0) or np.any(c < 0) or np.any(c > 1):
        raise InvalidInputError("need lam_z >= 0 and overlap in [0, 1]")
    v = random_orthogonal(k, rng) if basis is None else np.asarray(basis, dtype=np.float64)
    u, _ = np.linalg.qr(rng.standard_normal((n, 2 * k)))
    u1, u2 = u[:, :k], u[:, k:]
    root = np.sqrt(n * lam)
    z = (u1 * root) @ v.T
    z_pair = ((u1 * c + u2 * np.sqrt(1 - c**2)) * root) @ v.T
    return z, z_pair, v
