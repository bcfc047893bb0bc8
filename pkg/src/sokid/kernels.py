"""Kernels for the two estimation steps.

The drift lives in the RKHS of a translation-invariant Gaussian kernel.  The
diffusion-squared is a quadratic form in an explicit polynomial feature map
``phi(x) = (1, x, ..., x^{p-1})``; its kernel is ``(phi(x)^T phi(y))^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianKernel",
    "FeatureMapSpec",
    "eval_gaussian",
    "features",
    "eval_explicit",
    "eval_squared",
    "kernel_from_dict",
]


@dataclass(frozen=True)
class GaussianKernel:
    """``K(x, y) = exp(-(x - y)^2 / (2 h^2))`` with bandwidth ``h``."""

    bandwidth: float = 1.0

    def __post_init__(self):
        h = float(self.bandwidth)
        if not (h > 0 and np.isfinite(h)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = (x - y) / self.bandwidth
        return np.exp(-0.5 * d * d)

    def to_dict(self) -> dict:
        return {"type": "gaussian", "bandwidth": self.bandwidth}


@dataclass(frozen=True)
class FeatureMapSpec:
    """Monomial features of degree ``< p``."""

    p: int = 2
    kind: str = "polynomial"

    def __post_init__(self):
        if self.kind != "polynomial":
            raise ValueError(f"unsupported feature family {self.kind!r}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"feature count p must be a positive integer, got {self.p!r}")
        object.__setattr__(self, "p", int(self.p))

    def __call__(self, x):
        return features(self, x)

    def to_dict(self) -> dict:
        return {"type": "polynomial_features", "p": self.p}


def eval_gaussian(kern: GaussianKernel, x, y):
    return kern(x, y)


def features(spec: FeatureMapSpec, x) -> np.ndarray:
    """Feature vectors; shape ``(p,)`` for scalar ``x``, ``x.shape + (p,)`` otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (spec.p,))
    out[..., 0] = 1.0
    for m in range(1, spec.p):
        out[..., m] = out[..., m - 1] * x
    return out


def eval_explicit(spec: FeatureMapSpec, x, y):
    """``phi(x)^T phi(y)``."""
    return np.sum(features(spec, x) * features(spec, y), axis=-1)


def eval_squared(spec: FeatureMapSpec, x, y):
    """``(phi(x)^T phi(y))^2``."""
    v = eval_explicit(spec, x, y)
    return v * v


def kernel_from_dict(doc: dict):
    """Inverse of ``to_dict`` for both kernel families."""
    kind = doc.get("type")
    if kind == "gaussian":
        return GaussianKernel(doc.get("bandwidth", 1.0))
    if kind == "polynomial_features":
        return FeatureMapSpec(doc.get("p", 2))
    raise ValueError(f"unknown kernel type {kind!r}")
