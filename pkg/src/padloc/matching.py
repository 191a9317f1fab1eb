"""Cross-attention point matching with diversity-based confidence weights.

A single encoder layer attends from source features (queries) to target
features (keys) while the target coordinates ride along as values. The
mean per-head attention matrix is the soft matching: each row is a
probability distribution over target points. Row sharpness, measured by a
diversity index (Shannon entropy, Hill number, or Berger-Parker), is
normalized into a per-match confidence weight in [0, 1].

In pure-attention mode the projected target points are exactly
``matching @ Q_t`` (convex combinations of the target points); full-TEL
mode runs the complete post-norm encoder layer (value lift 3 -> f,
residuals, feed-forward) followed by the learned projection back to 3D.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import tensorio

PURE_ATTENTION = "pure-attention"
FULL_TEL = "full-tel"

#: Confidence values this close to an endpoint snap to exactly 0 or 1, so
#: uniform and one-hot rows hit the endpoints despite rounding.
ENDPOINT_SNAP = 1e-12

_LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# Confidence weighting
# ---------------------------------------------------------------------------

def parse_confidence_metric(name: str) -> str:
    """Canonicalize a metric name; Hill accepts an order, e.g. ``hill(2)``."""
    text = name.strip().lower().replace("_", "-").replace(" ", "-")
    if text in ("uniform", "column-sum", "shannon", "berger-parker"):
        return text
    m = re.fullmatch(r"hill[(-]?(\d+(?:\.\d+)?)\)?", text)
    if m:
        r = float(m.group(1))
        if r == 1.0:
            raise ValueError("Hill order r must differ from 1")
        return f"hill({m.group(1)})"
    raise ValueError(f"unknown confidence metric {name!r}")


def _snap(w: float) -> float:
    if abs(w) < ENDPOINT_SNAP:
        return 0.0
    if abs(w - 1.0) < ENDPOINT_SNAP:
        return 1.0
    return float(min(max(w, 0.0), 1.0))


def row_confidence(p: NDArray, metric: str) -> float:
    """Confidence of one matching row: 0 for uniform, 1 for one-hot."""
    p = np.maximum(np.asarray(p, dtype=np.float64).reshape(-1), 0.0)
    n = p.shape[0]
    metric = parse_confidence_metric(metric)
    if metric == "column-sum":
        raise ValueError("column-sum is a matrix-level weighting; use confidence_weights")
    if n == 1 or metric == "uniform":
        return 1.0

    if metric == "shannon":
        pos = p[p > 0]
        entropy = float(-(pos * np.log(pos)).sum())
        return _snap(1.0 - entropy / np.log(n))
    if metric == "berger-parker":
        bp = float(p.max())
        return _snap((bp - 1.0 / n) / (1.0 - 1.0 / n))
    r = float(metric[5:-1])
    hill = float(np.sum(p ** r) ** (1.0 / (1.0 - r)))
    return _snap((n - hill) / (n - 1.0))


def confidence_weights(matching: NDArray, metric: str) -> NDArray[np.float64]:
    """Per-source-row confidence weights for a matching matrix.

    ``column-sum`` reproduces the weighting where each pair inherits the
    total incoming mass of its best target column; column sums are divided
    by the source count to land in [0, 1], which leaves the registration
    result unchanged (weights enter it scale-invariantly).
    """
    m = np.asarray(matching, dtype=np.float64)
    metric = parse_confidence_metric(metric)
    if metric == "column-sum":
        col_mass = m.sum(axis=0) / m.shape[0]
        best = np.argmax(m, axis=1)
        return np.array([_snap(col_mass[j]) for j in best])
    return np.array([row_confidence(row, metric) for row in m])


# ---------------------------------------------------------------------------
# Encoder weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderWeights:
    """Single-layer encoder parameters for cross-attention matching."""

    wq: NDArray[np.float64]          # (h, f, d_k)
    wk: NDArray[np.float64]          # (h, f, d_k)
    value_w: NDArray[np.float64]     # (3, f)  value lift
    value_b: NDArray[np.float64]     # (f,)
    out_w: NDArray[np.float64]       # (f, f)
    out_b: NDArray[np.float64]       # (f,)
    ffn_w1: NDArray[np.float64]      # (f, 2f)
    ffn_b1: NDArray[np.float64]      # (2f,)
    ffn_w2: NDArray[np.float64]      # (2f, f)
    ffn_b2: NDArray[np.float64]      # (f,)
    ln1_scale: NDArray[np.float64]   # (f,)
    ln1_offset: NDArray[np.float64]  # (f,)
    ln2_scale: NDArray[np.float64]   # (f,)
    ln2_offset: NDArray[np.float64]  # (f,)
    proj_w: NDArray[np.float64]      # (3, f)  output projection to 3D
    proj_b: NDArray[np.float64]      # (3,)
    mode: str = PURE_ATTENTION

    def __post_init__(self) -> None:
        h, f, d_k = self.wq.shape
        if d_k * h != f:
            raise ValueError(f"head count {h} must divide feature dimension {f}")
        expected = {
            "wk": (self.wk.shape, (h, f, d_k)),
            "value_w": (self.value_w.shape, (3, f)),
            "value_b": (self.value_b.shape, (f,)),
            "out_w": (self.out_w.shape, (f, f)),
            "out_b": (self.out_b.shape, (f,)),
            "ffn_w1": (self.ffn_w1.shape, (f, 2 * f)),
            "ffn_b1": (self.ffn_b1.shape, (2 * f,)),
            "ffn_w2": (self.ffn_w2.shape, (2 * f, f)),
            "ffn_b2": (self.ffn_b2.shape, (f,)),
            "ln1_scale": (self.ln1_scale.shape, (f,)),
            "ln1_offset": (self.ln1_offset.shape, (f,)),
            "ln2_scale": (self.ln2_scale.shape, (f,)),
            "ln2_offset": (self.ln2_offset.shape, (f,)),
            "proj_w": (self.proj_w.shape, (3, f)),
            "proj_b": (self.proj_b.shape, (3,)),
        }
        for name, (got, want) in expected.items():
            if got != want:
                raise ValueError(f"weight shape mismatch: {name} is {got}, expected {want}")
        if self.mode not in (PURE_ATTENTION, FULL_TEL):
            raise ValueError(f"unknown matching mode {self.mode!r}")

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def f(self) -> int:
        return self.wq.shape[1]

    @staticmethod
    def random(f: int, h: int = 4, seed: int = 0, mode: str = PURE_ATTENTION) -> "EncoderWeights":
        """Seeded untrained weights (Gaussian, scale 1/sqrt(f); zero biases)."""
        if f % h != 0:
            raise ValueError(f"head count {h} must divide feature dimension {f}")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(f)
        d_k = f // h
        return EncoderWeights(
            wq=rng.normal(scale=scale, size=(h, f, d_k)),
            wk=rng.normal(scale=scale, size=(h, f, d_k)),
            value_w=rng.normal(scale=scale, size=(3, f)),
            value_b=np.zeros(f),
            out_w=rng.normal(scale=scale, size=(f, f)),
            out_b=np.zeros(f),
            ffn_w1=rng.normal(scale=scale, size=(f, 2 * f)),
            ffn_b1=np.zeros(2 * f),
            ffn_w2=rng.normal(scale=scale, size=(2 * f, f)),
            ffn_b2=np.zeros(f),
            ln1_scale=np.ones(f),
            ln1_offset=np.zeros(f),
            ln2_scale=np.ones(f),
            ln2_offset=np.zeros(f),
            proj_w=rng.normal(scale=scale, size=(3, f)),
            proj_b=np.zeros(3),
            mode=mode,
        )

    def to_tensors(self) -> dict[str, NDArray]:
        return {
            "enc.wq": self.wq, "enc.wk": self.wk,
            "enc.value_w": self.value_w, "enc.value_b": self.value_b,
            "enc.out_w": self.out_w, "enc.out_b": self.out_b,
            "enc.ffn_w1": self.ffn_w1, "enc.ffn_b1": self.ffn_b1,
            "enc.ffn_w2": self.ffn_w2, "enc.ffn_b2": self.ffn_b2,
            "enc.ln1_scale": self.ln1_scale, "enc.ln1_offset": self.ln1_offset,
            "enc.ln2_scale": self.ln2_scale, "enc.ln2_offset": self.ln2_offset,
            "enc.proj_w": self.proj_w, "enc.proj_b": self.proj_b,
        }

    def save(self, path: str | Path) -> None:
        tensorio.save_tensors(path, self.to_tensors())

    @staticmethod
    def load(path: str | Path, f: int, h: int = 4, mode: str = PURE_ATTENTION) -> "EncoderWeights":
        t = tensorio.load_tensors(path)
        d_k = f // h
        shapes = {
            "enc.wq": (h, f, d_k), "enc.wk": (h, f, d_k),
            "enc.value_w": (3, f), "enc.value_b": (f,),
            "enc.out_w": (f, f), "enc.out_b": (f,),
            "enc.ffn_w1": (f, 2 * f), "enc.ffn_b1": (2 * f,),
            "enc.ffn_w2": (2 * f, f), "enc.ffn_b2": (f,),
            "enc.ln1_scale": (f,), "enc.ln1_offset": (f,),
            "enc.ln2_scale": (f,), "enc.ln2_offset": (f,),
            "enc.proj_w": (3, f), "enc.proj_b": (3,),
        }
        fields = {name.split(".", 1)[1]: tensorio.expect_shape(t, name, shape)
                  for name, shape in shapes.items()}
        return EncoderWeights(mode=mode, **fields)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchResult:
    """Soft matching matrix, projected target points, per-match confidence."""

    matching: NDArray[np.float64]    # (n_s, n_t), rows on the simplex
    projected: NDArray[np.float64]   # (n_s, 3)
    confidence: NDArray[np.float64]  # (n_s,) in [0, 1]

    def __post_init__(self) -> None:
        m = np.asarray(self.matching, dtype=np.float64)
        if (m < 0).any():
            raise ValueError("matching rows must be probability distributions")
        if m.shape[0] and np.abs(m.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("matching rows must be probability distributions")
        c = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if (c < 0).any() or (c > 1).any():
            raise ValueError("confidence entries must lie in [0, 1]")


def _feature_values(f) -> NDArray[np.float64]:
    values = getattr(f, "values", f)
    return np.asarray(values, dtype=np.float64)


def _row_softmax(scores: NDArray) -> NDArray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _layer_norm(x: NDArray, scale: NDArray, offset: NDArray) -> NDArray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * scale + offset


def _head_attentions(f_s: NDArray, f_t: NDArray, weights: EncoderWeights) -> NDArray:
    """Per-head row-softmax attention, stacked (h, n_s, n_t)."""
    d_k = weights.wq.shape[2]
    heads = []
    for wq, wk in zip(weights.wq, weights.wk):
        scores = (f_s @ wq) @ (f_t @ wk).T / np.sqrt(d_k)
        heads.append(_row_softmax(scores))
    return np.stack(heads)


def attention_matrix(f_s: NDArray, f_t: NDArray, weights: EncoderWeights) -> NDArray:
    """Mean of per-head attention; the mean keeps rows on the simplex."""
    return _head_attentions(f_s, f_t, weights).mean(axis=0)


def match(f_s, f_t, q_t: NDArray, weights: EncoderWeights,
          diversity: str = "berger-parker") -> MatchResult:
    """Match source features against target features and coordinates."""
    fs = _feature_values(f_s)
    ft = _feature_values(f_t)
    q_t = np.asarray(q_t, dtype=np.float64).reshape(-1, 3)

    if ft.shape[0] == 0:
        raise ValueError("empty target")
    if not (np.isfinite(fs).all() and np.isfinite(ft).all()):
        raise ValueError("non-finite features")
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"feature dimensions differ: {fs.shape[1]} vs {ft.shape[1]}")
    if fs.shape[1] != weights.f:
        raise ValueError(f"features are {fs.shape[1]}-dimensional, weights expect {weights.f}")
    if q_t.shape[0] != ft.shape[0]:
        raise ValueError("target coordinates and features disagree in length")

    heads = _head_attentions(fs, ft, weights)
    matching = heads.mean(axis=0)

    if weights.mode == PURE_ATTENTION:
        projected = matching @ q_t
    else:
        h = weights.heads
        d_k = weights.f // h
        values = q_t @ weights.value_w + weights.value_b          # (n_t, f)
        per_head = values.reshape(-1, h, d_k)
        concat = np.concatenate([heads[i] @ per_head[:, i, :] for i in range(h)], axis=1)
        attended = concat @ weights.out_w + weights.out_b
        x1 = _layer_norm(fs + attended, weights.ln1_scale, weights.ln1_offset)
        hidden = np.maximum(x1 @ weights.ffn_w1 + weights.ffn_b1, 0.0)
        x2 = _layer_norm(x1 + hidden @ weights.ffn_w2 + weights.ffn_b2,
                         weights.ln2_scale, weights.ln2_offset)
        projected = x2 @ weights.proj_w.T + weights.proj_b

    return MatchResult(matching=matching, projected=projected,
                       confidence=confidence_weights(matching, diversity))
