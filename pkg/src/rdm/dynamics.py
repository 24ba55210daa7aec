"""Training dynamics of linear predictors and unconstrained features.

Covers the closed-form predictor gradient and optimum in the isotropic linear
setting, the per-eigenvalue recursion of online-branch gradient descent,
feature-space gradient descent with and without stop-gradient, and the
centered symmetric (SymSimSiam) objective.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidInputError, SingularMatrixError
from .filters import FLOOR_SIGMA
from .spectral import (
    CLAMP_TOL,
    CorrelationEstimate,
    as_batch,
    correlation,
    effective_rank,
    eigenspace_alignment,
    eigh,
)

DEFAULT_ALPHA = 0.1
DEFAULT_ETA = 0.01
DEFAULT_MOMENTUM = 0.9
DEFAULT_TOP_R = 8
NORM_TOL = 1e-9
LAM_FLOOR = FLOOR_SIGMA**2
PREDICTOR_MODES = ("track", "refit", "fixed")


def _m(c):
    return c.matrix if isinstance(c, CorrelationEstimate) else np.asarray(c, dtype=np.float64)


# Losses --------------------------------------------------------------------


def alignment_loss_mse(p, z_target):
    """``(1/n) sum_x 0.5 * ||p_x - z_x||^2``; ``z_target`` is a constant."""
    p = as_batch(p, "p")
    z = as_batch(z_target, "z_target")
    if p.shape != z.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {z.shape}")
    return float(0.5 * np.sum((p - z) ** 2) / p.shape[0])


# Linear predictor ----------------------------------------------------------


@dataclass(frozen=True)
class LinearModel:
    """Linear encoder ``W_f`` (k x d) with linear predictor ``W`` (k x k)."""

    W_f: np.ndarray
    W: np.ndarray
    eta: float = DEFAULT_ETA
    alpha: float = DEFAULT_ALPHA
    aug_std: float = 0.0

    def __post_init__(self):
        wf = np.asarray(self.W_f, dtype=np.float64)
        w = np.asarray(self.W, dtype=np.float64)
        k = wf.shape[0]
        if wf.ndim != 2 or w.shape != (k, k):
            raise InvalidInputError(f"predictor must be {k}x{k}, got {w.shape}")
        if not (np.all(np.isfinite(wf)) and np.all(np.isfinite(w))):
            raise InvalidInputError("model has non-finite entries")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"step size must lie in (0, 1), got {self.alpha!r}")
        if self.eta < 0 or self.aug_std < 0:
            raise InvalidInputError("eta and aug_std must be non-negative")
        object.__setattr__(self, "W_f", wf)
        object.__setattr__(self, "W", w)

    @property
    def gram(self):
        return self.W_f @ self.W_f.T

    def with_predictor(self, w):
        return replace(self, W=w)


def predictor_loss(model):
    """Expected MSE alignment loss of the isotropic model plus ``eta/2 ||W||^2``."""
    a = model.gram
    s = 1.0 + model.aug_std**2
    w = model.W
    quad = s * np.trace(w.T @ w @ a) - 2.0 * np.trace(w @ a) + s * np.trace(a)
    return float(0.5 * quad + 0.5 * model.eta * np.sum(w * w))


def predictor_gradient(model):
    """Closed-form ``dL/dW = (1+s^2) W W_f W_f^T - W_f W_f^T + eta W``."""
    a = model.gram
    return (1.0 + model.aug_std**2) * model.W @ a - a + model.eta * model.W


def optimal_predictor(c_plus, c_z, eta=0.0):
    """``C_plus C_z^{-1}``, or ``C_plus (C_z + eta I)^{-1}`` when ``eta > 0``.

    A near-singular ``C_z`` without regularization is an error; no
    pseudo-inverse is taken. When the inputs commute, the predictor's
    eigenvalues must lie in ``[0, 1]``.
    """
    cp, cz = _m(c_plus), _m(c_z)
    if cp.shape != cz.shape:
        raise InvalidInputError(f"shape mismatch: {cp.shape} vs {cz.shape}")
    k = cz.shape[0]
    if eta < 0:
        raise InvalidInputError("eta must be non-negative")
    if eta == 0:
        lo = np.linalg.eigvalsh(0.5 * (cz + cz.T))[0]
        if lo <= 1e-10:
            raise SingularMatrixError(
                f"C_z is singular (smallest eigenvalue {lo:.3g}); pass eta > 0"
            )
    reg = cz + eta * np.eye(k)
    w = np.linalg.solve(reg.T, cp.T).T
    scale = max(np.abs(cp).max(), np.abs(cz).max(), 1e-300)
    if np.abs(cp @ cz - cz @ cp).max() <= 1e-10 * scale**2:
        omega = np.linalg.eigvals(w).real
        if omega.min() < -1e-9 or omega.max() > 1 + 1e-9:
            raise InvalidInputError(
                f"predictor eigenvalues {omega.min():.3g}..{omega.max():.3g} leave [0, 1]; "
                "C_plus is not dominated by C_z"
            )
    return w


def isotropic_optimum(model):
    """``W_f W_f^T ((1+s^2) W_f W_f^T + eta I)^{-1}``."""
    a = model.gram
    reg = (1.0 + model.aug_std**2) * a + model.eta * np.eye(a.shape[0])
    return np.linalg.solve(reg.T, a.T).T


def fit_predictor(model, tol=1e-12, max_steps=100_000):
    """Plain gradient descent on ``W`` with step ``model.alpha`` until the
    gradient norm drops below ``tol`` (relative to ``||W_f W_f^T||``)."""
    w = model.W
    ref = max(np.linalg.norm(model.gram), 1e-300)
    for step in range(max_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            g = predictor_gradient(model.with_predictor(w))
        if not np.all(np.isfinite(g)):
            raise DivergenceError(step, "predictor gradient")
        if np.linalg.norm(g) <= tol * ref:
            break
        w = w - model.alpha * g
    return model.with_predictor(w), step


# Eigenvalue recursion ------------------------------------------------------


@dataclass(frozen=True)
class UnconstrainedState:
    """Per-index eigenvalues of the online, target and positive-pair correlations.

    Index ``i`` refers to the same shared eigenvector in all three arrays.
    ``lam_w`` holds frozen predictor eigenvalues for ``predictor_mode="fixed"``.
    """

    lam_p: np.ndarray
    lam_z: np.ndarray
    lam_plus: np.ndarray
    lam_w: np.ndarray | None = None

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=np.float64).ravel() for a in (self.lam_p, self.lam_z, self.lam_plus)]
        if len({a.size for a in arrs}) != 1:
            raise InvalidInputError("eigenvalue arrays must have equal length")
        lp, lz, lplus = arrs
        if np.any(lz <= 0) or np.any(lp < 0) or np.any(lplus < -1e-12):
            raise InvalidInputError("need lam_z > 0, lam_p >= 0, lam_plus >= 0")
        if np.any(lplus > lz * (1 + 1e-12)):
            raise InvalidInputError("lam_plus may not exceed lam_z")
        object.__setattr__(self, "lam_p", lp)
        object.__setattr__(self, "lam_z", lz)
        object.__setattr__(self, "lam_plus", lplus)
        if self.lam_w is not None:
            object.__setattr__(self, "lam_w", np.asarray(self.lam_w, dtype=np.float64).ravel())

    @property
    def h(self):
        """Target-side filter values ``sqrt(lam_z / lam_p)``."""
        return np.sqrt(self.lam_z / np.maximum(self.lam_p, LAM_FLOOR))


def _predictor_eigs(state, predictor_mode):
    if predictor_mode == "track":
        return 1.0 / state.h
    if predictor_mode == "refit":
        return state.lam_plus / state.lam_z
    if predictor_mode == "fixed":
        if state.lam_w is None:
            raise InvalidInputError("predictor_mode='fixed' needs state.lam_w")
        return state.lam_w
    raise InvalidInputError(f"predictor_mode must be one of {PREDICTOR_MODES}")


def update_factor(state, alpha, predictor_mode="track"):
    """``lam_p[t+1] / lam_p[t]`` for each index.

    In ``track`` mode the predictor eigenvalue is ``1/h`` with
    ``h = sqrt(lam_z/lam_p)``, giving
    ``(1-a)^2 + a^2 h^2 + 2a(1-a) h lam_plus/lam_z``.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"step size must lie in (0, 1), got {alpha!r}")
    lp = np.maximum(state.lam_p, LAM_FLOOR)
    w = _predictor_eigs(state, predictor_mode)
    return (1 - alpha) ** 2 + alpha**2 * state.lam_z / lp + 2 * alpha * (1 - alpha) * w * state.lam_plus / lp


def unconstrained_step(state, alpha, predictor_mode="track"):
    """One gradient step of the online eigenvalues; target quantities fixed."""
    lp = state.lam_p * update_factor(state, alpha, predictor_mode)
    return replace(state, lam_p=lp)


def gd_correlation_update(c_p, c_z, c_plus, w, alpha):
    """``(1-a)^2 C_p + a^2 C_z + a(1-a)(W C_plus + C_plus W^T)``."""
    cp, cz, cplus, w = _m(c_p), _m(c_z), _m(c_plus), np.asarray(w, dtype=np.float64)
    return (1 - alpha) ** 2 * cp + alpha**2 * cz + alpha * (1 - alpha) * (w @ cplus + cplus @ w.T)


# Trajectories --------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-step measurements; row 0 is the state before any update."""

    step: np.ndarray
    loss: np.ndarray
    erank_online: np.ndarray
    erank_target: np.ndarray
    alignment: np.ndarray
    ev_online: np.ndarray
    ev_target: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.step.size

    @property
    def top_r(self):
        return self.ev_online.shape[1]

    def header(self):
        r = self.top_r
        return (
            ["step", "loss", "erank_online", "erank_target", "alignment"]
            + [f"ev_online_{i}" for i in range(1, r + 1)]
            + [f"ev_target_{i}" for i in range(1, r + 1)]
        )

    def rows(self):
        for t in range(len(self)):
            yield [int(self.step[t])] + [
                float(v)
                for v in (
                    self.loss[t],
                    self.erank_online[t],
                    self.erank_target[t],
                    self.alignment[t],
                    *self.ev_online[t],
                    *self.ev_target[t],
                )
            ]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


class _Recorder:
    def __init__(self, top_r):
        self.top_r = top_r
        self.cols = {k: [] for k in ("step", "loss", "eo", "et", "al", "evo", "evt")}

    def add(self, step, loss, c_online, c_target):
        mats = [_m(c_online), _m(c_target)]
        if not (np.isfinite(loss) and all(np.all(np.isfinite(m)) for m in mats)):
            raise DivergenceError(step)
        # clamp round-off relative to the matrix scale
        so, st = (eigh(m, CLAMP_TOL * max(1.0, np.abs(m).max()))[0] for m in mats)
        r = min(self.top_r, so.values.size)
        c = self.cols
        c["step"].append(step)
        c["loss"].append(loss)
        c["eo"].append(effective_rank(so))
        c["et"].append(effective_rank(st))
        c["al"].append(eigenspace_alignment(c_online, c_target))
        c["evo"].append(so.values[:r])
        c["evt"].append(st.values[:r])

    def freeze(self, **meta):
        c = self.cols
        arrs = [np.asarray(c[k]) for k in ("step", "loss", "eo", "et", "al", "evo", "evt")]
        for a in arrs:
            a.setflags(write=False)
        return TrajectoryRecord(*arrs, meta=meta)


def _quiet_overflow(fn):
    # non-finite values are caught and raised as DivergenceError instead
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(*args, **kwargs)

    return wrapper


def _recorded(step, steps, stride):
    return step % stride == 0 or step == steps


@_quiet_overflow
def simulate_feature_gd(
    p0, z, z_pair, alpha, steps, stop_gradient=True, stride=1, top_r=DEFAULT_TOP_R
):
    """Gradient descent directly on the online outputs.

    The online row ``p_x`` is pulled toward its positive partner
    ``z_pair[x]`` under the MSE alignment loss: ``p <- (1-a) p + a z_pair``.
    With ``stop_gradient=False`` the target rows receive the opposite
    gradient and move toward ``p``. The target branch's correlation pools
    ``z`` and ``z_pair`` (both are target outputs); ``z`` itself never moves.
    """
    p = as_batch(p0, "p0").copy()
    z = as_batch(z, "z")
    zp = as_batch(z_pair, "z_pair").copy()
    if not (p.shape == z.shape == zp.shape):
        raise InvalidInputError(f"shape mismatch: {p.shape}, {z.shape}, {zp.shape}")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"step size must lie in (0, 1), got {alpha!r}")
    if steps < 0 or stride < 1:
        raise InvalidInputError("steps must be >= 0 and stride >= 1")
    rec = _Recorder(top_r)
    for t in range(steps + 1):
        if _recorded(t, steps, stride):
            rec.add(t, alignment_loss_mse(p, zp), correlation(p), correlation(np.vstack([z, zp])))
        if t == steps:
            break
        grad = p - zp
        p = p - alpha * grad
        if not stop_gradient:
            zp = zp + alpha * grad
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(zp))):
            raise DivergenceError(t + 1)
    return rec.freeze(stop_gradient=bool(stop_gradient), alpha=float(alpha), p_final=p, z_pair_final=zp)


@_quiet_overflow
def linear_training_run(model, steps, stride=1, top_r=DEFAULT_TOP_R):
    """Gradient descent on the predictor of an isotropic linear model.

    Each recorded step measures the exact online correlation ``W C_z W^T``
    against ``C_z``. ``meta`` carries the final predictor, the optimum and
    their relative Frobenius distance.
    """
    if steps < 0 or stride < 1:
        raise InvalidInputError("steps must be >= 0 and stride >= 1")
    a = model.gram
    cz = (1.0 + model.aug_std**2) * a
    w_star = isotropic_optimum(model)
    rec = _Recorder(top_r)
    m = model
    for t in range(steps + 1):
        if _recorded(t, steps, stride):
            rec.add(t, predictor_loss(m), m.W @ cz @ m.W.T, cz)
        if t == steps:
            break
        w = m.W - m.alpha * predictor_gradient(m)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(t + 1, "predictor")
        m = m.with_predictor(w)
    err = np.linalg.norm(m.W - w_star) / np.linalg.norm(w_star)
    return rec.freeze(W=m.W, W_star=w_star, rel_error=float(err))


# Centered symmetric objective -----------------------------------------------


@dataclass(frozen=True)
class CenterState:
    center: np.ndarray
    momentum: float = DEFAULT_MOMENTUM

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).ravel()
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("center has non-finite entries")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")
        object.__setattr__(self, "center", c)

    @classmethod
    def zeros(cls, k, momentum=DEFAULT_MOMENTUM):
        return cls(np.zeros(k), momentum)


def l2_normalize(batch):
    z = as_batch(batch)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("cannot normalize a zero row")
    return z / norms


def symsimsiam_step(batch1, batch2, cs):
    """EMA-update the center on both views, then score the centered alignment.

    Returns ``(loss, new_state)`` with
    ``loss = -(1/n) sum_x (z1_x - c)^T (z2_x - c)`` using the updated center.
    """
    z1, z2 = l2_normalize(batch1), l2_normalize(batch2)
    if z1.shape != z2.shape:
        raise InvalidInputError(f"shape mismatch: {z1.shape} vs {z2.shape}")
    m = cs.momentum
    c = m * cs.center + (1 - m) * np.vstack([z1, z2]).mean(axis=0)
    loss = -float(np.mean(np.sum((z1 - c) * (z2 - c), axis=1)))
    return loss, CenterState(c, m)


def _check_unit_rows(z, name):
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise InvalidInputError(f"{name} rows must be l2-normalized")


def verify_theorem1(batch1, batch2, mu):
    """Residual of the centered-objective identity for unit-norm features.

    ``-E (f(x)-mu)^T (f(x+)-mu)`` versus ``-E f(x)^T f(x+) - (1 - ||mu||^2) + 1``;
    the two agree exactly when ``mu`` is the pooled mean of both views.
    """
    z1 = as_batch(batch1, "batch1")
    z2 = as_batch(batch2, "batch2")
    if z1.shape != z2.shape:
        raise InvalidInputError(f"shape mismatch: {z1.shape} vs {z2.shape}")
    _check_unit_rows(z1, "batch1")
    _check_unit_rows(z2, "batch2")
    mu = np.asarray(mu, dtype=np.float64).ravel()
    lhs = -np.mean(np.sum((z1 - mu) * (z2 - mu), axis=1))
    var = 1.0 - mu @ mu
    rhs = -np.mean(np.sum(z1 * z2, axis=1)) - var + 1.0
    return float(abs(lhs - rhs))
