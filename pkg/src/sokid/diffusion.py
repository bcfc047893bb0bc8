"""Diffusion-squared estimation as a sum-of-squares semidefinite program.

Given a drift estimate, the squared residual of each increment,
``z_i = E[(x_{t_i} - x_{t_{i-1}} - int f(x_t) dt)^2]``, equals
``int E[sigma^2(x_t)] dt``.  ``sigma^2`` is modelled as
``phi(x)^T Q phi(x)`` with ``Q`` PSD, so it is a sum of squares and never
negative.  With ``M_i = int E[phi phi^T] dt`` the fit minimizes

    (1/N) sum_i (<M_i, Q> - z_i)^2 + lambda ||Q||_F^2,   Q PSD,

over ``Q = sum_i alpha_i M_i``.  In ``alpha`` this is the convex quadratic
``alpha^T A alpha + b^T alpha + c`` (times ``1/N``) under an LMI, solved
through the epigraph/Schur-complement pencil in :mod:`sokid.sdp`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import sdp
from .dataset import SnapshotEnsemble
from .kernels import FeatureMapSpec, features, kernel_from_dict

__all__ = [
    "DiffusionFitError",
    "ResidualTargets",
    "MomentMatrices",
    "DiffusionModel",
    "residual_targets",
    "moment_matrices",
    "assemble_qp",
    "qp_cost",
    "direct_cost",
    "solve_sos_qp",
    "fit_diffusion",
    "eval_diffusion_sq",
    "eval_diffusion",
    "sos_decomposition",
    "save_diffusion_model",
    "load_diffusion_model",
]

log = logging.getLogger(__name__)

RANGE_TOL = 1e-12  # relative eigenvalue cut for span{M_i}


class DiffusionFitError(RuntimeError):
    """The SDP solver did not reach an optimal point."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class ResidualTargets:
    z: np.ndarray
    index: tuple[tuple[int, int], ...] = field(repr=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValueError("residual targets must be finite and non-negative")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class MomentMatrices:
    mats: np.ndarray  # (N, p, p)
    gram: np.ndarray  # (N, N), gram[i, j] = trace(M_i M_j)

    @classmethod
    def from_mats(cls, mats) -> "MomentMatrices":
        mats = np.asarray(mats, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError(f"expected an (N, p, p) stack, got shape {mats.shape}")
        flat = mats.reshape(mats.shape[0], -1)
        gram = flat @ flat.T
        return cls(mats, 0.5 * (gram + gram.T))


def residual_targets(ensemble: SnapshotEnsemble, drift: Callable) -> ResidualTargets:
    """Mean squared increment residual after removing the drift integral.

    ``drift`` is any vectorized callable (a fitted :class:`DriftModel` or the
    true drift).  The drift integral uses each trajectory's own endpoints.
    """
    widths = ensemble.grid.widths
    parts = []
    for grp in ensemble.groups:
        y = grp.snapshots
        fy = np.asarray(drift(y), dtype=float).reshape(y.shape)
        integral = 0.5 * widths * (fy[:, :-1] + fy[:, 1:])
        resid = np.diff(y, axis=1) - integral
        parts.append((resid * resid).mean(axis=0))
    index = tuple((u, i) for u in range(ensemble.num_groups)
                  for i in range(1, ensemble.n + 1))
    return ResidualTargets(np.concatenate(parts), index)


def moment_matrices(ensemble: SnapshotEnsemble, spec: FeatureMapSpec) -> MomentMatrices:
    """Trapezoid-rule ``M_i = int E[phi(x_t) phi(x_t)^T] dt`` per interval."""
    widths = ensemble.grid.widths
    mats = []
    for grp in ensemble.groups:
        phi = features(spec, grp.snapshots)  # (k, n + 1, p)
        outer = np.einsum("jap,jaq->apq", phi, phi) / grp.k  # (n + 1, p, p)
        mats.append(0.5 * widths[:, None, None] * (outer[:-1] + outer[1:]))
    return MomentMatrices.from_mats(np.concatenate(mats))


def assemble_qp(moments: MomentMatrices, z, lam: float):
    """``(A, b, c)`` with ``N J(alpha) = alpha^T A alpha + b^T alpha + c``."""
    G = moments.gram
    z = np.asarray(getattr(z, "z", z), dtype=float)
    N = z.size
    if G.shape != (N, N):
        raise ValueError(f"gram shape {G.shape} does not match {N} targets")
    A = G @ G + N * lam * G
    A = 0.5 * (A + A.T)
    b = -2.0 * (G @ z)
    c = float(z @ z)
    return A, b, c


def qp_cost(A, b, c, alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return float(alpha @ A @ alpha + b @ alpha + c)


def direct_cost(mats, z, lam: float, Q) -> float:
    """``sum_i (<M_i, Q> - z_i)^2 + N lam ||Q||_F^2`` (i.e. ``N J``)."""
    mats = np.asarray(mats, dtype=float)
    z = np.asarray(z, dtype=float)
    Q = np.asarray(Q, dtype=float)
    fit = np.einsum("ipq,pq->i", mats, Q) - z
    return float(fit @ fit + z.size * lam * np.sum(Q * Q))


def sos_decomposition(Q, tol: float = 1e-10) -> list[np.ndarray]:
    """Vectors ``u_i`` with ``sum_i u_i u_i^T = Q``, one per retained eigenvalue."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Q = 0.5 * (Q + Q.T)
    evals, evecs = np.linalg.eigh(Q)
    top = max(evals[-1], 0.0)
    if evals[0] < -tol * max(top, 1e-300):
        raise ValueError(f"Q is indefinite: min eigenvalue {evals[0]:.3e}, max {top:.3e}")
    keep = evals > tol * top
    if top == 0.0:
        return []
    return [np.sqrt(evals[i]) * evecs[:, i] for i in np.flatnonzero(keep)[::-1]]


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """``sigma^2(x) = phi(x)^T Q phi(x)`` with ``Q`` PSD."""

    alpha: np.ndarray
    Q: np.ndarray
    spec: FeatureMapSpec
    lam: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (self.spec.p, self.spec.p):
            raise ValueError(f"Q has shape {Q.shape}, features have p={self.spec.p}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).reshape(-1))
        factors = sos_decomposition(Q)
        U = np.array(factors).reshape(len(factors), self.spec.p)
        object.__setattr__(self, "_U", U)

    @classmethod
    def zero(cls, spec: FeatureMapSpec) -> "DiffusionModel":
        return cls(np.zeros(0), np.zeros((spec.p, spec.p)), spec, 0.0)

    def __call__(self, x):
        return eval_diffusion(self, x)


def eval_diffusion_sq(model: DiffusionModel, x):
    """``sum_i (u_i^T phi(x))^2``; exactly non-negative."""
    phi = features(model.spec, x)
    proj = phi @ model._U.T
    out = (proj * proj).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def eval_diffusion(model: DiffusionModel, x):
    return np.sqrt(eval_diffusion_sq(model, x))


def _project_psd(Q: np.ndarray):
    Q = 0.5 * (Q + Q.T)
    evals, evecs = np.linalg.eigh(Q)
    clamped = np.clip(evals, 0.0, None)
    return (evecs * clamped) @ evecs.T, float(evals.min())


def solve_sos_qp(mats, z, lam: float, tol: float = 1e-7, max_iter: int = 2000,
                 debug_path=None):
    """Minimize ``sum_i (<M_i, Q> - z_i)^2 + N lam ||Q||^2`` over PSD ``Q`` in span{M_i}.

    Returns ``(alpha, Q_raw, info)`` where ``Q_raw = sum_i alpha_i M_i`` before any
    PSD projection.

    Only the component of ``alpha`` in the range of the moment Gram matrix
    changes ``Q``, so the epigraph LMI is posed over coordinates ``gamma`` of a
    Frobenius-orthonormal basis of span{M_i} (``alpha = T gamma``).  Targets
    are divided by ``max |z|`` so the solver sees unit-scale data.
    """
    mats = np.asarray(mats, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1)
    N = z.size
    if mats.shape[0] != N:
        raise ValueError(f"{mats.shape[0]} moment matrices for {N} targets")
    moments = MomentMatrices.from_mats(mats)
    scale_z = float(np.abs(z).max(initial=0.0)) or 1.0
    A, b, c = assemble_qp(moments, z / scale_z, lam)

    mu, V = np.linalg.eigh(moments.gram)
    keep = mu > RANGE_TOL * max(mu[-1], 0.0)
    if not keep.any():
        raise DiffusionFitError("all moment matrices vanish; nothing to fit")
    T = V[:, keep] / np.sqrt(mu[keep])
    basis = np.tensordot(T.T, mats, axes=1)  # orthonormal in the Frobenius product
    start = np.sqrt(mu[keep]) * V[:, keep].sum(axis=0)  # coordinates of sum_i M_i
    A_r = T.T @ A @ T
    b_r = T.T @ b
    P = sdp.psd_factor(A_r)
    pencil = sdp.assemble_schur_lmi(P, b_r, c, basis, start=start)
    iterates = [] if debug_path else None
    sol = sdp.solve(pencil, tol=tol, max_iter=max_iter, debug=iterates)
    if debug_path:
        sdp.dump_debug(debug_path, pencil, sol, iterates)
    if not sol.optimal:
        raise DiffusionFitError(
            f"SDP solver stopped with status {sol.status} after {sol.newton_steps} Newton "
            f"steps (gap {sol.gap:.3e}, block min eigenvalues {sol.block_min_eigs})", sol)

    alpha = (T @ sol.x[1:]) * scale_z
    Q_raw = np.tensordot(alpha, mats, axes=1)
    info = {
        "status": sol.status,
        "iterations": sol.iterations,
        "newton_steps": sol.newton_steps,
        "gap": sol.gap,
        "objective": float(sol.objective * scale_z**2),
        "block_min_eigs": list(sol.block_min_eigs),
        "span_dim": int(keep.sum()),
        "rank_A": int(P.shape[0]),
        "notes": list(pencil.notes),
    }
    return alpha, Q_raw, info


def fit_diffusion(ensemble: SnapshotEnsemble, spec: FeatureMapSpec, drift: Callable,
                  lam: float = 1e-6, tol: float = 1e-7, max_iter: int = 2000,
                  debug_path=None) -> DiffusionModel:
    """Fit ``sigma^2`` given a drift (fitted model or any vectorized callable)."""
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam!r}")
    targets = residual_targets(ensemble, drift)
    moments = moment_matrices(ensemble, spec)
    return fit_diffusion_from_moments(moments, targets.z, spec, lam, tol, max_iter, debug_path)


def fit_diffusion_from_moments(moments: MomentMatrices, z, spec: FeatureMapSpec,
                               lam: float = 1e-6, tol: float = 1e-7, max_iter: int = 2000,
                               debug_path=None) -> DiffusionModel:
    alpha, Q_raw, info = solve_sos_qp(moments.mats, z, lam, tol, max_iter, debug_path)
    Q, before = _project_psd(Q_raw)
    clamp = max(0.0, -before)
    if clamp > 0:
        log.info("PSD projection of Q clamped eigenvalue %.3e", before)
    info["min_eig_Q_before_clamp"] = before
    info["clamp"] = clamp
    A, b, c = assemble_qp(moments, z, lam)
    info["cost"] = qp_cost(A, b, c, alpha) / max(1, len(np.atleast_1d(z)))
    return DiffusionModel(alpha, Q, spec, float(lam), info)


def save_diffusion_model(model: DiffusionModel, path) -> None:
    doc = {
        "kind": "diffusion",
        "features": model.spec.to_dict(),
        "lambda": model.lam,
        "alpha": [float(a) for a in model.alpha],
        "Q": [float(format(v, ".17g")) for v in model.Q.ravel()],
        "diagnostics": model.diagnostics,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_diffusion_model(path) -> DiffusionModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "diffusion":
        raise ValueError(f"{path}: not a diffusion model file")
    spec = kernel_from_dict(doc["features"])
    Q = np.array(doc["Q"], dtype=float).reshape(spec.p, spec.p)
    return DiffusionModel(np.array(doc["alpha"], dtype=float), Q, spec,
                          float(doc["lambda"]), doc.get("diagnostics", {}))
