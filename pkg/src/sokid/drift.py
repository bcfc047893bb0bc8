"""Drift estimation by occupation-kernel ridge regression on mean increments.

For each observation interval ``I_i = [t_{i-1}, t_i]`` of a group the
functional ``L_i f = int_{I_i} E[f(x_t)] dt`` is represented in the Gaussian
RKHS by ``L_i^*(x) = int_{I_i} E[K(x, x_t)] dt``.  Integrals are replaced by the
trapezoid rule on the interval endpoints and expectations by trajectory
averages.  The fitted drift is ``f^* = sum_i alpha_i L_i^*`` where
``(L^* + lambda N I) alpha = mean increments``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .dataset import SnapshotEnsemble, file_sha256, load_ensemble, mean_increments
from .kernels import GaussianKernel, kernel_from_dict

__all__ = [
    "SingularSystemError",
    "OccupationGram",
    "DriftModel",
    "PAIRINGS",
    "expected_kernel",
    "occupation_gram",
    "representer_eval",
    "fit_drift",
    "solve_ridge",
    "eval_drift",
    "drift_cost",
    "save_drift_model",
    "load_drift_model",
]

log = logging.getLogger(__name__)

PAIRINGS = ("distinct", "all")

PIVOT_TOL = 1e-14
_CHUNK = 4_000_000  # floats per kernel evaluation block


class SingularSystemError(np.linalg.LinAlgError):
    pass


def _cross_kernel_sum(kern, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``S[s, t] = sum_{j1, j2} K(a[j1, s], b[j2, t])`` for ``a: (ka, m)``, ``b: (kb, m')``."""
    ka, m = a.shape
    kb, m2 = b.shape
    out = np.zeros((m, m2))
    step = max(1, _CHUNK // max(1, m * kb * m2))
    for lo in range(0, ka, step):
        blk = a[lo:lo + step]
        vals = kern(blk[:, :, None, None], b[None, None, :, :])  # (c, m, kb, m')
        out += vals.sum(axis=(0, 2))
    return out


def expected_kernel(ensemble: SnapshotEnsemble, kern, pairing: str = "distinct") -> np.ndarray:
    """Empirical ``E[K(x_s, x_t)]`` over independent copies, for all snapshot pairs.

    Returns an ``(S, S)`` matrix with ``S = g (n + 1)``; row ``u (n + 1) + a`` is
    group ``u`` at time ``t_a``.  Within a group, ``pairing="distinct"`` averages
    over ordered trajectory pairs ``j1 != j2``; ``"all"`` includes ``j1 == j2``.
    Across groups all ``k_u k_v`` pairs are used.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}, got {pairing!r}")
    groups = [g.snapshots for g in ensemble.groups]
    if pairing == "distinct":
        for u, y in enumerate(groups):
            if y.shape[0] < 2:
                raise ValueError(
                    f"group {u} has k={y.shape[0]} trajectories; the independent-copy "
                    f"estimator needs k >= 2")
    w = ensemble.n + 1
    g = len(groups)
    E = np.empty((g * w, g * w))
    for u in range(g):
        yu = groups[u]
        ku = yu.shape[0]
        for v in range(u, g):
            yv = groups[v]
            total = _cross_kernel_sum(kern, yu, yv)
            if u == v and pairing == "distinct":
                diag = kern(yu[:, :, None], yu[:, None, :]).sum(axis=0)
                blk = (total - diag) / (ku * (ku - 1))
            else:
                blk = total / (ku * yv.shape[0])
            E[u * w:(u + 1) * w, v * w:(v + 1) * w] = blk
            if v != u:
                E[v * w:(v + 1) * w, u * w:(u + 1) * w] = blk.T
    return E


def _trapezoid_pairs(E: np.ndarray, widths: np.ndarray, g: int) -> np.ndarray:
    """Corner-rule double trapezoid: collapse snapshot pairs to interval pairs."""
    n = widths.size
    w = n + 1
    E4 = E.reshape(g, w, g, w)
    corners = E4[:, :-1, :, :-1] + E4[:, :-1, :, 1:] + E4[:, 1:, :, :-1] + E4[:, 1:, :, 1:]
    half = widths / 2.0
    out = corners * half[None, :, None, None] * half[None, None, None, :]
    return out.reshape(g * n, g * n)


@dataclass(frozen=True)
class OccupationGram:
    matrix: np.ndarray
    index: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def occupation_gram(ensemble: SnapshotEnsemble, kern: GaussianKernel,
                    pairing: str = "distinct") -> OccupationGram:
    """Gram matrix ``<L_i^*, L_j^*>`` of the occupation-kernel representers."""
    E = expected_kernel(ensemble, kern, pairing)
    M = _trapezoid_pairs(E, ensemble.grid.widths, ensemble.num_groups)
    M = 0.5 * (M + M.T)
    index = tuple((u, i) for u in range(ensemble.num_groups)
                  for i in range(1, ensemble.n + 1))
    return OccupationGram(M, index)


def _kernel_means(ensemble: SnapshotEnsemble, kern, x: np.ndarray, group: int) -> np.ndarray:
    """``mean_j K(x, y_a^(j))`` for all ``a``; shape ``(len(x), n + 1)``."""
    y = ensemble.groups[group].snapshots
    return kern(x[:, None, None], y[None, :, :]).mean(axis=1)


def representer_eval(ensemble: SnapshotEnsemble, kern, index: int, x, exclude: int | None = None):
    """Evaluate the representer ``L_i^*`` at ``x``.

    ``exclude`` drops one trajectory of the functional's group from the
    average (leave-one-out form used by the distinct-pair estimator).
    """
    u, i = ensemble.functional_location(index)
    y = ensemble.groups[u].snapshots
    if exclude is not None:
        y = np.delete(y, exclude, axis=0)
    x = np.asarray(x, dtype=float)
    dt = ensemble.grid.widths[i - 1]
    lo = kern(x[..., None], y[:, i - 1]).mean(axis=-1)
    hi = kern(x[..., None], y[:, i]).mean(axis=-1)
    return 0.5 * dt * (lo + hi)


@dataclass(frozen=True, eq=False)
class DriftModel:
    """Fitted drift ``f^* = sum_i alpha_i L_i^*``.

    ``gram`` and ``targets`` are kept from the fit when available; they are not
    serialized and are recomputed on demand after loading.
    """

    alpha: np.ndarray
    kernel: GaussianKernel
    ensemble: SnapshotEnsemble
    lam: float
    pairing: str = "distinct"
    gram: np.ndarray | None = field(default=None, repr=False)
    targets: np.ndarray | None = field(default=None, repr=False)
    solver: str = "cholesky"

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if alpha.size != self.ensemble.num_functionals:
            raise ValueError(
                f"alpha has {alpha.size} entries, ensemble has {self.ensemble.num_functionals} functionals")
        object.__setattr__(self, "alpha", alpha)
        # per-group snapshot weights: f*(x) = sum_u sum_a w[u, a] mean_j K(x, y_a^(j))
        n = self.ensemble.n
        half = self.ensemble.grid.widths / 2.0
        a = alpha.reshape(self.ensemble.num_groups, n) * half
        w = np.zeros((self.ensemble.num_groups, n + 1))
        w[:, :-1] += a
        w[:, 1:] += a
        object.__setattr__(self, "_weights", w)

    def __call__(self, x):
        return eval_drift(self, x)

    def ensure_gram(self) -> np.ndarray:
        if self.gram is None:
            object.__setattr__(self, "gram",
                               occupation_gram(self.ensemble, self.kernel, self.pairing).matrix)
        return self.gram

    def ensure_targets(self) -> np.ndarray:
        if self.targets is None:
            object.__setattr__(self, "targets", mean_increments(self.ensemble).mean_increments)
        return self.targets


def solve_ridge(gram: np.ndarray, targets: np.ndarray, ridge: float) -> tuple[np.ndarray, str]:
    """Solve ``(gram + ridge I) alpha = targets``.

    Uses a Cholesky factorization; if it fails (or a pivot drops below
    ``PIVOT_TOL`` relative) falls back to an eigendecomposition least-squares
    solve.  A numerically singular system with ``ridge == 0`` raises
    :class:`SingularSystemError`.
    """
    n = gram.shape[0]
    system = gram + ridge * np.eye(n)
    if not np.all(np.isfinite(system)) or not np.all(np.isfinite(targets)):
        raise ValueError("non-finite entries in the ridge system")
    try:
        c, low = scipy.linalg.cho_factor(system, lower=True)
        piv = np.diag(c) ** 2
        if piv.min() <= PIVOT_TOL * piv.max():
            raise np.linalg.LinAlgError("small pivot")
        return scipy.linalg.cho_solve((c, low), targets), "cholesky"
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(system)
    top = np.abs(evals).max()
    keep = np.abs(evals) > PIVOT_TOL * top
    if ridge == 0 and not keep.all():
        raise SingularSystemError(
            f"occupation Gram matrix is numerically singular "
            f"(min eigenvalue {evals.min():.3e}, max {top:.3e}) and lambda = 0")
    log.warning("Cholesky failed on the ridge system; using eigendecomposition least squares "
                "(%d of %d directions kept)", int(keep.sum()), n)
    coef = (evecs[:, keep].T @ targets) / evals[keep]
    return evecs[:, keep] @ coef, "eigh_lstsq"


def fit_drift(ensemble: SnapshotEnsemble, kern: GaussianKernel, lam: float = 1e-6,
              pairing: str = "distinct") -> DriftModel:
    """Fit the occupation-kernel drift estimate with ridge ``lam * N``."""
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam!r}")
    gram = occupation_gram(ensemble, kern, pairing).matrix
    targets = mean_increments(ensemble).mean_increments
    N = ensemble.num_functionals
    alpha, how = solve_ridge(gram, targets, lam * N)
    return DriftModel(alpha, kern, ensemble, float(lam), pairing, gram, targets, how)


def eval_drift(model: DriftModel, x):
    """``f^*(x)``; accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    out = np.zeros(flat.size)
    w = model._weights
    ens = model.ensemble
    k_max = max(g.k for g in ens.groups)
    step = max(1, _CHUNK // (k_max * (ens.n + 1)))
    for lo in range(0, flat.size, step):
        xs = flat[lo:lo + step]
        acc = np.zeros(xs.size)
        for u in range(ens.num_groups):
            acc += (_kernel_means(ens, model.kernel, xs, u) * w[u]).sum(axis=-1)
        out[lo:lo + step] = acc
    if x.ndim == 0:
        return float(out[0])
    return out.reshape(x.shape)


def drift_cost(model: DriftModel, ensemble: SnapshotEnsemble | None = None,
               alpha: np.ndarray | None = None) -> float:
    """``(1/N) ||L^* alpha - dy||^2 + lambda alpha^T L^* alpha``.

    ``alpha`` overrides the model coefficients (for perturbation checks).
    """
    if ensemble is None or ensemble is model.ensemble:
        gram = model.ensure_gram()
        dy = model.ensure_targets()
    else:
        gram = occupation_gram(ensemble, model.kernel, model.pairing).matrix
        dy = mean_increments(ensemble).mean_increments
    a = model.alpha if alpha is None else np.asarray(alpha, dtype=float)
    r = gram @ a - dy
    return float(r @ r / dy.size + model.lam * (a @ gram @ a))


def save_drift_model(model: DriftModel, path, ensemble_path) -> None:
    """Write the model JSON; the ensemble is referenced by path and content hash."""
    path = Path(path)
    ensemble_path = Path(ensemble_path)
    doc = {
        "kind": "drift",
        "kernel": model.kernel.to_dict(),
        "lambda": model.lam,
        "pairing": model.pairing,
        "solver": model.solver,
        "alpha": [float(a) for a in model.alpha],
        "ensemble": {
            "path": str(ensemble_path.resolve()),
            "sha256": file_sha256(ensemble_path),
        },
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_drift_model(path) -> DriftModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "drift":
        raise ValueError(f"{path}: not a drift model file")
    ref = doc["ensemble"]
    ens_path = Path(ref["path"])
    digest = file_sha256(ens_path)
    if digest != ref["sha256"]:
        raise ValueError(
            f"{path}: reference ensemble {ens_path} changed (hash {digest[:12]} != "
            f"{ref['sha256'][:12]})")
    ensemble = load_ensemble(ens_path)
    kern = kernel_from_dict(doc["kernel"])
    return DriftModel(np.array(doc["alpha"], dtype=float), kern, ensemble,
                      float(doc["lambda"]), doc.get("pairing", "distinct"),
                      solver=doc.get("solver", "cholesky"))
