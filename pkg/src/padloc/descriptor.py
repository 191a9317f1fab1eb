"""Global descriptor head: NetVLAD aggregation followed by context gating.

Per-keypoint features are softly assigned to k learned cluster centers;
the assignment-weighted residuals against each center are intra-normalized,
flattened, normalized again, and reduced to length g. The gating layer
works with a square weight matrix while the flattened VLAD vector has
length k*f, so the learned linear reduction to g sits before the gate.
The gate rescales each component through a logistic sigmoid and the
result is L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from . import tensorio

#: Norms below this are treated as zero; the guard substitutes a basis vector.
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class Descriptor:
    """Fixed-length global fingerprint of one scan, unit L2 norm."""

    values: NDArray[np.float64]
    degenerate: bool = False

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.isfinite(v).all():
            raise ValueError("descriptor entries must be finite")
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("descriptor must have unit L2 norm")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def descriptor_distance(a: Descriptor, b: Descriptor) -> float:
    return float(np.linalg.norm(a.values - b.values))


@dataclass(frozen=True)
class VladWeights:
    """NetVLAD cluster centers, assignment, reduction, and gating weights."""

    centers: NDArray[np.float64]      # (k, f)
    assign_w: NDArray[np.float64]     # (f, k)
    assign_b: NDArray[np.float64]     # (k,)
    reduce_w: NDArray[np.float64]     # (g, k*f)
    reduce_b: NDArray[np.float64]     # (g,)
    gate_w: NDArray[np.float64]       # (g, g)
    gate_b: NDArray[np.float64]       # (g,)

    def __post_init__(self) -> None:
        k, f = self.centers.shape
        g = self.reduce_w.shape[0]
        checks = {
            "assign_w": (self.assign_w.shape, (f, k)),
            "assign_b": (self.assign_b.shape, (k,)),
            "reduce_w": (self.reduce_w.shape, (g, k * f)),
            "reduce_b": (self.reduce_b.shape, (g,)),
            "gate_w": (self.gate_w.shape, (g, g)),
            "gate_b": (self.gate_b.shape, (g,)),
        }
        for name, (got, want) in checks.items():
            if got != want:
                raise ValueError(f"weight shape mismatch: {name} is {got}, expected {want}")

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def f(self) -> int:
        return self.centers.shape[1]

    @property
    def g(self) -> int:
        return self.reduce_w.shape[0]

    @staticmethod
    def random(f: int, k: int, g: int, seed: int = 0) -> "VladWeights":
        """Seeded untrained weights: Gaussian scale 1/sqrt(f), unit-Gaussian centers."""
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(f)
        return VladWeights(
            centers=rng.normal(size=(k, f)),
            assign_w=rng.normal(scale=scale, size=(f, k)),
            assign_b=np.zeros(k),
            reduce_w=rng.normal(scale=scale, size=(g, k * f)),
            reduce_b=np.zeros(g),
            gate_w=rng.normal(scale=scale, size=(g, g)),
            gate_b=np.zeros(g),
        )

    def to_tensors(self) -> dict[str, NDArray]:
        return {
            "vlad.centers": self.centers,
            "vlad.assign_w": self.assign_w,
            "vlad.assign_b": self.assign_b,
            "vlad.reduce_w": self.reduce_w,
            "vlad.reduce_b": self.reduce_b,
            "gate.w": self.gate_w,
            "gate.b": self.gate_b,
        }

    def save(self, path: str | Path) -> None:
        tensorio.save_tensors(path, self.to_tensors())

    @staticmethod
    def load(path: str | Path, f: int, k: int, g: int) -> "VladWeights":
        t = tensorio.load_tensors(path)
        return VladWeights(
            centers=tensorio.expect_shape(t, "vlad.centers", (k, f)),
            assign_w=tensorio.expect_shape(t, "vlad.assign_w", (f, k)),
            assign_b=tensorio.expect_shape(t, "vlad.assign_b", (k,)),
            reduce_w=tensorio.expect_shape(t, "vlad.reduce_w", (g, k * f)),
            reduce_b=tensorio.expect_shape(t, "vlad.reduce_b", (g,)),
            gate_w=tensorio.expect_shape(t, "gate.w", (g, g)),
            gate_b=tensorio.expect_shape(t, "gate.b", (g,)),
        )


def _row_softmax(scores: NDArray) -> NDArray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def netvlad(features: NDArray, weights: VladWeights) -> NDArray[np.float64]:
    """Aggregate (n, f) features into the pre-gating descriptor of length g."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("no keypoints")
    if feats.shape[1] != weights.f:
        raise ValueError(f"feature dimension {feats.shape[1]} does not match weights ({weights.f})")

    assign = _row_softmax(feats @ weights.assign_w + weights.assign_b)  # (n, k)
    mass = assign.sum(axis=0)                                          # (k,)
    vlad = assign.T @ feats - mass[:, None] * weights.centers          # (k, f)

    # Intra-normalization per cluster; fully cancelled clusters stay zero.
    norms = np.linalg.norm(vlad, axis=1, keepdims=True)
    vlad = np.where(norms > ZERO_NORM, vlad / np.where(norms > ZERO_NORM, norms, 1.0), 0.0)

    flat = vlad.reshape(-1)
    total = np.linalg.norm(flat)
    if total > ZERO_NORM:
        flat = flat / total
    return weights.reduce_w @ flat + weights.reduce_b


def context_gate(v: NDArray, weights: VladWeights) -> Descriptor:
    """Sigmoid-gate each component of v, then L2-normalize."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != weights.g:
        raise ValueError(f"vector length {v.shape[0]} does not match gate ({weights.g})")
    gated = expit(weights.gate_w @ v + weights.gate_b) * v
    norm = np.linalg.norm(gated)
    if norm < ZERO_NORM:
        fallback = np.zeros(weights.g)
        fallback[0] = 1.0
        return Descriptor(values=fallback, degenerate=True)
    return Descriptor(values=gated / norm)


def describe(features: NDArray, weights: VladWeights) -> Descriptor:
    """Full descriptor head: NetVLAD then context gating."""
    return context_gate(netvlad(features, weights), weights)
