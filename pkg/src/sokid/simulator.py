"""Euler-Maruyama generation of snapshot ensembles.

Every trajectory draws its Brownian increments from its own random stream,
derived from the root seed and the ``(group, trajectory)`` index pair.  Output
therefore depends only on the inputs, never on evaluation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import SnapshotEnsemble, TimeGrid, TrajectoryGroup

__all__ = [
    "SimulationError",
    "SdeSpec",
    "SimPlan",
    "simulate_ensemble",
    "builtin_sde",
    "sde_from_expressions",
    "draw_initial_conditions",
    "BUILTIN_SDES",
]

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when a trajectory leaves the finite range."""


@dataclass(frozen=True)
class SdeSpec:
    """Scalar SDE ``dx = drift(x) dt + diffusion(x) dW``.

    Both callables must accept a numpy array of states and return an array of
    the same shape (a scalar result is broadcast).
    """

    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def eval_drift(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.drift(x), dtype=float), x.shape)

    def eval_diffusion(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.diffusion(x), dtype=float), x.shape)


@dataclass(frozen=True)
class SimPlan:
    grid: TimeGrid
    initial_conditions: tuple[float, ...]
    trajectories_per_ic: int
    substeps: int = 10
    seed: int = 1

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be a positive integer, got {self.substeps!r}")
        if int(self.trajectories_per_ic) != self.trajectories_per_ic or self.trajectories_per_ic < 1:
            raise ValueError(
                f"trajectories_per_ic must be a positive integer, got {self.trajectories_per_ic!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        ics = tuple(float(c) for c in self.initial_conditions)
        if not ics:
            raise ValueError("at least one initial condition is required")
        if not all(np.isfinite(ics)):
            raise ValueError("initial conditions must be finite")
        object.__setattr__(self, "initial_conditions", ics)


def _stream(seed: int, group: int, traj: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(group, traj)))


def simulate_ensemble(sde: SdeSpec, plan: SimPlan) -> SnapshotEnsemble:
    """Integrate ``sde`` with Euler-Maruyama and record the state at the grid times.

    Each snapshot interval ``[t_{i-1}, t_i]`` is split into ``plan.substeps``
    equal steps of width ``delta``; one step is
    ``x <- x + f(x) delta + sigma(x) sqrt(delta) xi`` with ``xi`` standard normal.
    """
    g = len(plan.initial_conditions)
    k = plan.trajectories_per_ic
    n = plan.grid.n
    s = plan.substeps
    total = g * k

    # noise[row, step]; row = group * k + traj
    noise = np.empty((total, n * s))
    for u in range(g):
        for j in range(k):
            noise[u * k + j] = _stream(plan.seed, u, j).standard_normal(n * s)

    x = np.repeat(np.asarray(plan.initial_conditions, dtype=float), k)
    out = np.empty((total, n + 1))
    out[:, 0] = x
    widths = plan.grid.widths
    step = 0
    for i in range(1, n + 1):
        delta = widths[i - 1] / s
        root = np.sqrt(delta)
        for _ in range(s):
            x = x + sde.eval_drift(x) * delta + sde.eval_diffusion(x) * root * noise[:, step]
            step += 1
            bad = np.flatnonzero(~np.isfinite(x))
            if bad.size:
                u, j = divmod(int(bad[0]), k)
                t = plan.grid.times[i - 1] + (step - (i - 1) * s) * delta
                raise SimulationError(
                    f"non-finite state in group {u}, trajectory {j} near t={t:.6g} "
                    f"(snapshot interval {i})")
        out[:, i] = x

    groups = tuple(
        TrajectoryGroup(plan.initial_conditions[u], out[u * k:(u + 1) * k])
        for u in range(g)
    )
    return SnapshotEnsemble(plan.grid, groups)


def draw_initial_conditions(count: int, low: float = 0.1, high: float = 0.9,
                            seed: int = 1) -> list[float]:
    """``count`` i.i.d. uniform draws on ``[low, high]``."""
    if not low < high:
        raise ValueError(f"need low < high, got [{low}, {high}]")
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(int(seed))
    return [float(v) for v in rng.uniform(low, high, size=int(count))]


def _paper_quadratic():
    return SdeSpec(lambda x: x * x - x, lambda x: x / 10.0, "paper_quadratic")


def _ou(theta: float = 1.0, sigma: float = 0.3):
    return SdeSpec(lambda x: -theta * x, lambda x: np.full_like(x, sigma), "ou",
                   {"theta": theta, "sigma": sigma})


def _gbm(mu: float = 1.0, s: float = 0.1):
    return SdeSpec(lambda x: mu * x, lambda x: s * x, "gbm", {"mu": mu, "s": s})


def _constant_sigma(s: float = 0.5):
    return SdeSpec(lambda x: np.zeros_like(x), lambda x: np.full_like(x, s),
                   "constant_sigma", {"s": s})


BUILTIN_SDES: dict[str, Callable[..., SdeSpec]] = {
    "paper_quadratic": _paper_quadratic,
    "ou": _ou,
    "gbm": _gbm,
    "constant_sigma": _constant_sigma,
}


def builtin_sde(name: str, **params) -> SdeSpec:
    """Look up a named SDE.

    ``paper_quadratic``: f(x) = x^2 - x, sigma(x) = x / 10.
    ``ou``: f(x) = -theta x, sigma = const (theta=1, sigma=0.3).
    ``gbm``: f(x) = mu x, sigma(x) = s x (mu=1, s=0.1).
    ``constant_sigma``: f = 0, sigma = s (s=0.5).
    """
    try:
        factory = BUILTIN_SDES[name]
    except KeyError:
        raise KeyError(f"unknown SDE {name!r}; known: {sorted(BUILTIN_SDES)}") from None
    return factory(**params)


def sde_from_expressions(drift: str, diffusion: str, name: str = "inline") -> SdeSpec:
    """Build an SDE from expressions in the state variable ``x``, e.g. ``"x**2 - x"``."""
    import sympy

    x = sympy.Symbol("x")

    def compile_(expr: str):
        parsed = sympy.sympify(expr, locals={"x": x})
        extra = parsed.free_symbols - {x}
        if extra:
            raise ValueError(f"expression {expr!r} uses unknown symbols {sorted(map(str, extra))}")
        return sympy.lambdify(x, parsed, modules="numpy")

    return SdeSpec(compile_(drift), compile_(diffusion), name,
                   {"drift": drift, "diffusion": diffusion})


def make_plan(times: Sequence[float], initial_conditions: Sequence[float], k: int,
              substeps: int = 10, seed: int = 1) -> SimPlan:
    return SimPlan(TimeGrid(times), tuple(initial_conditions), k, substeps, seed)
