"""Dense semidefinite programming for small block-diagonal LMIs.

Problems have the form::

    minimize  x[0]
    subject to  F_b(x) = F_b0 + sum_i x[i] F_bi  is PSD for every block b

and are solved with a path-following log-det barrier method: for an increasing
weight ``s`` the centering problem ``s x[0] - sum_b log det F_b(x)`` is
minimized by damped Newton steps, then ``s`` grows by 10x.  After exact
centering the duality gap is ``sum_b dim(F_b) / s``.

The Newton system is built per block from ``G_bi = L_b^{-1} F_bi L_b^{-T}``
(``L_b`` the Cholesky factor of ``F_b(x)``) so the Hessian is ``G^T G``.  Steps
use the pseudo-inverse of that Gram matrix, which is the minimum-norm Newton
step when some variable directions leave every block unchanged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "SdpError",
    "Block",
    "MatrixPencil",
    "SdpSolution",
    "psd_factor",
    "assemble_schur_lmi",
    "solve",
    "min_eig",
    "MAX_BLOCK_DIM",
]

log = logging.getLogger(__name__)

MAX_BLOCK_DIM = 2000
ARMIJO = 0.25
SHRINK = 0.5
FULL_STEP_DECREMENT = 0.0625  # Newton decrement^2 below (1/4)^2


class SdpError(ValueError):
    pass


def min_eig(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(scipy.linalg.eigh(M, eigvals_only=True, subset_by_index=[0, 0])[0])


def psd_factor(A, rank_tol: float = 1e-10) -> np.ndarray:
    """Factor a PSD matrix as ``A = P^T P`` with ``P`` of shape ``(r, N)``.

    ``r`` counts eigenvalues above ``rank_tol * lambda_max``; the rows of ``P``
    are ``sqrt(lambda_i) v_i^T``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SdpError(f"expected a square matrix, got shape {A.shape}")
    A = 0.5 * (A + A.T)
    evals, evecs = np.linalg.eigh(A)
    top = max(evals[-1], 0.0)
    if evals[0] < -rank_tol * top - 1e-300:
        raise SdpError(
            f"matrix is indefinite: min eigenvalue {evals[0]:.3e} < "
            f"-{rank_tol:g} * {top:.3e}")
    keep = evals > rank_tol * top
    if top == 0.0:
        keep[:] = False
    return (evecs[:, keep] * np.sqrt(evals[keep])).T[::-1].copy()


@dataclass(frozen=True, eq=False)
class Block:
    """One diagonal block ``F0 + sum_i x_i F[i]``; ``F`` has shape ``(m, d, d)``."""

    F0: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        F0 = np.atleast_2d(np.asarray(self.F0, dtype=float))
        F = np.asarray(self.F, dtype=float)
        d = F0.shape[0]
        if F0.shape != (d, d) or F.ndim != 3 or F.shape[1:] != (d, d):
            raise SdpError(f"inconsistent block shapes {F0.shape} and {F.shape}")
        if d > MAX_BLOCK_DIM:
            raise SdpError(f"block dimension {d} exceeds the dense limit {MAX_BLOCK_DIM}")
        object.__setattr__(self, "F0", 0.5 * (F0 + F0.T))
        object.__setattr__(self, "F", 0.5 * (F + F.transpose(0, 2, 1)))

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def at(self, x: np.ndarray) -> np.ndarray:
        return self.F0 + np.tensordot(x, self.F, axes=1)


@dataclass(frozen=True, eq=False)
class MatrixPencil:
    """Block-diagonal affine pencil in ``m`` variables; the objective is ``x[0]``.

    ``x0`` optionally carries a strictly feasible starting point.
    """

    blocks: tuple[Block, ...]
    x0: np.ndarray | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise SdpError("pencil has no blocks")
        m = blocks[0].F.shape[0]
        if any(b.F.shape[0] != m for b in blocks):
            raise SdpError("blocks disagree on the variable count")
        object.__setattr__(self, "blocks", blocks)
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float).reshape(-1)
            if x0.size != m:
                raise SdpError(f"x0 has {x0.size} entries, pencil has {m} variables")
            object.__setattr__(self, "x0", x0)

    @property
    def num_vars(self) -> int:
        return self.blocks[0].F.shape[0]

    @property
    def barrier_dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def evaluate(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        return [b.at(x) for b in self.blocks]

    def min_eigs(self, x) -> list[float]:
        return [min_eig(F) for F in self.evaluate(x)]

    def is_psd(self, x, tol: float = 0.0) -> bool:
        return all(e >= -tol for e in self.min_eigs(x))

    def to_dict(self) -> dict:
        return {
            "num_vars": self.num_vars,
            "blocks": [{"F0": b.F0.tolist(), "F": b.F.tolist()} for b in self.blocks],
            "x0": None if self.x0 is None else self.x0.tolist(),
            "notes": list(self.notes),
        }


@dataclass(frozen=True, eq=False)
class SdpSolution:
    x: np.ndarray
    objective: float
    status: str  # "optimal" | "max_iterations" | "infeasible_start"
    gap: float
    block_min_eigs: tuple[float, ...]
    iterations: int = 0
    newton_steps: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "gap": self.gap,
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
            "block_min_eigs": list(self.block_min_eigs),
        }


def assemble_schur_lmi(P, b, c: float, mats: Sequence, ridge: float | None = None,
                       start=None) -> MatrixPencil:
    """LMI form of ``min_{t, alpha} t`` s.t. ``t >= |P alpha|^2 + b.alpha + c`` and
    ``sum_i alpha_i M_i`` PSD.

    Variables are ``(t, alpha_1 .. alpha_N)``.  Block 1 (size ``r + 1``) is
    ``[[t - b.alpha - c, (P alpha)^T], [P alpha, I_r]]``, which is PSD exactly
    when the epigraph inequality holds; block 2 (size ``p``) is
    ``sum_i alpha_i M_i``.

    The start point ``alpha = 1`` (or ``start``) makes block 2 equal to
    ``sum_i M_i``, which is PSD when every ``M_i`` is.  If it is singular,
    ``ridge`` (default ``1e-8`` times its scale) is added to block 2 so the
    start is interior; ``t`` starts one unit above the epigraph.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    mats = np.asarray(mats, dtype=float)
    N = b.size
    if P.size == 0:
        P = np.zeros((0, N))
    if P.shape[1] != N:
        raise SdpError(f"P has {P.shape[1]} columns, b has {N} entries")
    if mats.ndim != 3 or mats.shape[0] != N or mats.shape[1] != mats.shape[2]:
        raise SdpError(f"expected {N} square moment matrices, got array of shape {mats.shape}")
    r = P.shape[0]
    p = mats.shape[1]
    m = N + 1

    F0 = np.zeros((r + 1, r + 1))
    F0[0, 0] = -float(c)
    F0[1:, 1:] = np.eye(r)
    F = np.zeros((m, r + 1, r + 1))
    F[0, 0, 0] = 1.0
    F[1:, 0, 0] = -b
    F[1:, 0, 1:] = P.T
    F[1:, 1:, 0] = P.T
    block1 = Block(F0, F)

    G0 = np.zeros((p, p))
    G = np.zeros((m, p, p))
    G[1:] = mats
    notes = []
    alpha0 = np.ones(N) if start is None else np.asarray(start, dtype=float).reshape(N)
    start2 = np.tensordot(alpha0, mats, axes=1)
    scale = max(np.abs(np.diag(start2)).max(initial=0.0), 1.0)
    if ridge is None:
        if p and min_eig(start2) <= 1e-12 * scale:
            ridge = 1e-8 * scale
        else:
            ridge = 0.0
    if ridge:
        G0 += ridge * np.eye(p)
        notes.append(f"ridge {ridge:.3e} added to the PSD block (sum of moment matrices singular)")
        log.info(notes[-1])
    block2 = Block(G0, G)

    Pa = P @ alpha0
    t0 = float(Pa @ Pa + b @ alpha0 + c + 1.0)
    x0 = np.concatenate([[t0], alpha0])
    return MatrixPencil((block1, block2), x0, tuple(notes))


def _chol(F: np.ndarray):
    try:
        return np.linalg.cholesky(F)
    except np.linalg.LinAlgError:
        return None


def _barrier(pencil: MatrixPencil, x: np.ndarray, s: float):
    """Barrier value at ``x`` or ``None`` outside the interior."""
    val = s * x[0]
    for blk in pencil.blocks:
        L = _chol(blk.at(x))
        if L is None:
            return None
        val -= 2.0 * np.log(np.diag(L)).sum()
    return val


def _newton(pencil: MatrixPencil, x: np.ndarray, s: float):
    m = x.size
    grad = np.zeros(m)
    grad[0] = s
    cols = []
    for blk in pencil.blocks:
        L = np.linalg.cholesky(blk.at(x))
        Li = scipy.linalg.solve_triangular(L, np.eye(blk.dim), lower=True)
        Gi = Li @ blk.F @ Li.T  # (m, d, d)
        grad -= np.trace(Gi, axis1=1, axis2=2)
        cols.append(Gi.reshape(m, -1))
    G = np.concatenate(cols, axis=1).T  # (D, m); hessian = G^T G
    U, sv, Vt = np.linalg.svd(G, full_matrices=False)
    keep = sv > 1e-13 * sv.max(initial=0.0)
    proj = Vt[keep] @ grad
    step = -Vt[keep].T @ (proj / sv[keep] ** 2)
    return step, grad


def solve(pencil: MatrixPencil, tol: float = 1e-7, max_iter: int = 2000,
          x0=None, s0: float | None = None, debug: list | None = None) -> SdpSolution:
    """Minimize ``x[0]`` over the interior of the pencil's PSD region.

    Parameters
    ----------
    tol
        Stop once the barrier gap ``sum_b dim_b / s`` is at most ``tol``.
    max_iter
        Budget of Newton steps over all outer iterations.
    x0
        Strictly feasible start; defaults to ``pencil.x0``.
    debug
        If a list is given, one record per outer iteration is appended.
    """
    start = pencil.x0 if x0 is None else np.asarray(x0, dtype=float)
    m_bar = pencil.barrier_dim
    if start is None or _barrier(pencil, start, 0.0) is None:
        x = np.zeros(pencil.num_vars) if start is None else start
        eigs = tuple(pencil.min_eigs(x))
        return SdpSolution(x, float(x[0]), "infeasible_start", np.inf, eigs)

    x = start.copy()
    s = s0 if s0 is not None else m_bar / max(1.0, abs(x[0]))
    history = []
    steps = 0
    outer = 0
    status = "max_iterations"
    while True:
        outer += 1
        # centering
        while steps < max_iter:
            dx, grad = _newton(pencil, x, s)
            dec2 = -grad @ dx
            if dec2 / 2.0 <= 1e-10:
                break
            steps += 1
            if dec2 < FULL_STEP_DECREMENT:
                # quadratic-convergence region of a self-concordant barrier:
                # the full step stays interior; skip Armijo, whose test is below
                # floating-point resolution here
                trial = x + dx
                if _barrier(pencil, trial, s) is not None:
                    x = trial
                    continue
            f0 = _barrier(pencil, x, s)
            h = 1.0
            while True:
                trial = x + h * dx
                f1 = _barrier(pencil, trial, s)
                if f1 is not None and f1 <= f0 - ARMIJO * h * dec2:
                    break
                h *= SHRINK
                if h < 1e-12:
                    break
            if h < 1e-12:
                # no progress possible at working precision; treat as centered
                break
            x = trial
        else:
            break
        history.append(float(x[0]))
        if debug is not None:
            debug.append({"outer": outer, "s": s, "objective": float(x[0]),
                          "newton_steps": steps, "x": x.tolist()})
        if m_bar / s <= tol:
            status = "optimal"
            break
        s *= 10.0

    eigs = tuple(pencil.min_eigs(x))
    return SdpSolution(x, float(x[0]), status, m_bar / s, eigs, outer, steps, tuple(history))


def dump_debug(path, pencil: MatrixPencil, solution: SdpSolution, iterates: list) -> None:
    doc = {"pencil": pencil.to_dict(), "solution": solution.to_dict(), "iterates": iterates}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")
