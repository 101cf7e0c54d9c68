"""Condition embeddings for quality scores.

The main strategy is GCC (Gaussian-weighted Cluster Centroids): each scalar
score is softly assigned to a grid of fixed anchors through a Gaussian RBF
kernel, and the embedding is the weight-averaged sum of learnable centroid
tokens. Three ablation strategies (linear interpolation between endpoint
tokens, discrete binning, Fourier features + MLP) sit behind the same
interface so the trainer can swap them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .signals import ATTRIBUTES, QualityVector


@dataclass(frozen=True)
class AttributeAnchorSpec:
    """Fixed anchor grid for one attribute.

    Anchors are strictly increasing and uniformly spaced; sigma is half the
    anchor spacing. Scores are clamped to [range_lo, range_hi] (or
    [0, clip_max] when clipping applies) before weighting.
    """

    attribute: str
    anchors: np.ndarray
    sigma: float
    range_lo: float
    range_hi: float
    clip_max: Optional[float] = None

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=np.float64)
        if a.ndim != 1 or len(a) < 2:
            raise ValueError("need at least two anchors")
        steps = np.diff(a)
        if not (steps > 0).all() or not np.allclose(steps, steps[0]):
            raise ValueError("anchors must be strictly increasing and uniform")
        if not np.isclose(self.sigma, steps[0] / 2.0):
            raise ValueError("sigma must equal half the anchor spacing")
        object.__setattr__(self, "anchors", a)

    @property
    def n(self) -> int:
        return len(self.anchors)

    def clamp(self, s: float) -> float:
        if self.clip_max is not None:
            return float(min(max(s, 0.0), self.clip_max))
        return float(min(max(s, self.range_lo), self.range_hi))


def default_anchor_specs() -> Dict[str, AttributeAnchorSpec]:
    """Default anchor grids: 10 tokens for aes/wat/cla/luma, 8 for ent;
    clarity clipped at 3000."""
    return {
        "aes": AttributeAnchorSpec("aes", np.arange(10) + 0.5, 0.5, 0.0, 10.0),
        "wat": AttributeAnchorSpec("wat", (np.arange(10) + 0.5) / 10.0, 0.05, 0.0, 1.0),
        "cla": AttributeAnchorSpec(
            "cla", 150.0 + 300.0 * np.arange(10), 150.0, 0.0, 3000.0, clip_max=3000.0
        ),
        "ent": AttributeAnchorSpec("ent", np.arange(8) + 0.5, 0.5, 0.0, 8.0),
        "luma": AttributeAnchorSpec("luma", (np.arange(10) + 0.5) / 10.0, 0.05, 0.0, 1.0),
    }


def rbf_weights(s_k: float, spec: AttributeAnchorSpec) -> np.ndarray:
    """Normalized Gaussian RBF affinities of a score to the anchor grid.

    u_i = exp(-(s - p_i)^2 / (2 sigma^2)), w_i = u_i / sum_j u_j.
    """
    s = spec.clamp(s_k)
    u = np.exp(-((s - spec.anchors) ** 2) / (2.0 * spec.sigma**2))
    return u / u.sum()


def embed_attribute(
    s_k: float, spec: AttributeAnchorSpec, centroids: np.ndarray
) -> np.ndarray:
    """Weighted sum of centroid tokens: e = sum_i w_i c_i."""
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != spec.n:
        raise ValueError(
            f"centroid block for {spec.attribute!r} must have {spec.n} rows, got {c.shape}"
        )
    return rbf_weights(s_k, spec) @ c


class CentroidTable:
    """Learnable centroid tokens, one (N_k, d) block per attribute."""

    def __init__(self, blocks: Dict[str, np.ndarray]):
        dims = {b.shape[1] for b in blocks.values()}
        if len(dims) != 1:
            raise ValueError("all centroid blocks must share the embedding width")
        for b in blocks.values():
            if not np.isfinite(b).all():
                raise ValueError("centroid entries must be finite")
        self.blocks = {k: np.asarray(v, dtype=np.float64) for k, v in blocks.items()}
        self.d = dims.pop()

    @classmethod
    def init(cls, specs: Dict[str, AttributeAnchorSpec], d: int, rng) -> "CentroidTable":
        bound = 1.0 / np.sqrt(d)
        return cls(
            {k: rng.uniform(-bound, bound, size=(specs[k].n, d)) for k in ATTRIBUTES}
        )


def embed_vector(
    s: QualityVector, table: CentroidTable, specs: Dict[str, AttributeAnchorSpec]
) -> np.ndarray:
    """Per-attribute embeddings stacked as a (5, d) array, order (aes, wat,
    cla, ent, luma)."""
    if set(specs) != set(ATTRIBUTES):
        raise ValueError(f"specs must cover exactly {ATTRIBUTES}")
    return np.stack(
        [embed_attribute(getattr(s, k), specs[k], table.blocks[k]) for k in ATTRIBUTES]
    )


def backprop_to_centroids(
    s: QualityVector,
    grad_embedding: np.ndarray,
    specs: Dict[str, AttributeAnchorSpec],
    table: CentroidTable,
) -> Dict[str, np.ndarray]:
    """Gradient of a scalar loss w.r.t. the centroid table.

    The embedding is linear in the centroids with coefficients w_i, so each
    centroid row receives w_i * g_k.
    """
    g = np.asarray(grad_embedding, dtype=np.float64)
    if g.shape != (len(ATTRIBUTES), table.d):
        raise ValueError(f"upstream gradient must be (5, {table.d}), got {g.shape}")
    grads = {}
    for k_idx, k in enumerate(ATTRIBUTES):
        w = rbf_weights(getattr(s, k), specs[k])
        grads[k] = np.outer(w, g[k_idx])
    return grads


# --- injection strategies --------------------------------------------------


class InjectionStrategy:
    """Interface: embed a QualityVector into (5, d) condition tokens, expose
    learnable parameters, and push gradients back into them."""

    kind = "base"

    def embed(self, s: QualityVector) -> np.ndarray:
        raise NotImplementedError

    def embed_batch(self, scores: np.ndarray) -> np.ndarray:
        """scores (B, 5) -> embeddings (B, 5, d)."""
        return np.stack([self.embed(QualityVector.from_array(row)) for row in scores])

    def params(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def grads_batch(self, scores: np.ndarray, grad: np.ndarray) -> Dict[str, np.ndarray]:
        """Accumulate parameter gradients for a batch; grad is (B, 5, d)."""
        raise NotImplementedError


class GccStrategy(InjectionStrategy):
    kind = "gcc"

    def __init__(self, table: CentroidTable, specs: Dict[str, AttributeAnchorSpec]):
        self.table = table
        self.specs = specs

    @classmethod
    def init(cls, specs, d: int, rng) -> "GccStrategy":
        return cls(CentroidTable.init(specs, d, rng), specs)

    def _weights_batch(self, scores: np.ndarray) -> Dict[str, np.ndarray]:
        return {
            k: np.stack([rbf_weights(v, self.specs[k]) for v in scores[:, i]])
            for i, k in enumerate(ATTRIBUTES)
        }

    def embed(self, s: QualityVector) -> np.ndarray:
        return embed_vector(s, self.table, self.specs)

    def embed_batch(self, scores: np.ndarray) -> np.ndarray:
        w = self._weights_batch(scores)
        return np.stack(
            [w[k] @ self.table.blocks[k] for k in ATTRIBUTES], axis=1
        )

    def params(self):
        return {f"centroid_{k}": self.table.blocks[k] for k in ATTRIBUTES}

    def grads_batch(self, scores, grad):
        w = self._weights_batch(scores)
        return {
            f"centroid_{k}": w[k].T @ grad[:, i, :] for i, k in enumerate(ATTRIBUTES)
        }


class LinearInterpolationStrategy(InjectionStrategy):
    """Two endpoint tokens per attribute, interpolated by the normalized score."""

    kind = "linear"

    def __init__(self, endpoints: Dict[str, np.ndarray], specs):
        self.endpoints = endpoints  # (2, d) per attribute: [c_min, c_max]
        self.specs = specs

    @classmethod
    def init(cls, specs, d: int, rng) -> "LinearInterpolationStrategy":
        bound = 1.0 / np.sqrt(d)
        return cls(
            {k: rng.uniform(-bound, bound, size=(2, d)) for k in ATTRIBUTES}, specs
        )

    def _alpha(self, k: str, v: float) -> float:
        spec = self.specs[k]
        lo = 0.0 if spec.clip_max is not None else spec.range_lo
        hi = spec.clip_max if spec.clip_max is not None else spec.range_hi
        return float(np.clip((v - lo) / (hi - lo), 0.0, 1.0))

    def embed(self, s: QualityVector) -> np.ndarray:
        rows = []
        for k in ATTRIBUTES:
            a = self._alpha(k, getattr(s, k))
            c = self.endpoints[k]
            rows.append((1.0 - a) * c[0] + a * c[1])
        return np.stack(rows)

    def params(self):
        return {f"endpoints_{k}": self.endpoints[k] for k in ATTRIBUTES}

    def grads_batch(self, scores, grad):
        out = {}
        for i, k in enumerate(ATTRIBUTES):
            alphas = np.array([self._alpha(k, v) for v in scores[:, i]])
            g = grad[:, i, :]
            out[f"endpoints_{k}"] = np.stack(
                [(1.0 - alphas) @ g, alphas @ g]
            )
        return out


class DiscreteBinningStrategy(InjectionStrategy):
    """One token per anchor cell; a score gets the token of its bin.

    Bins are the N uniform cells of the (clipped) score range; values landing
    exactly on a boundary fall in the lower bin.
    """

    kind = "binning"

    def __init__(self, tokens: Dict[str, np.ndarray], specs):
        self.tokens = tokens  # (N, d) per attribute
        self.specs = specs

    @classmethod
    def init(cls, specs, d: int, rng) -> "DiscreteBinningStrategy":
        bound = 1.0 / np.sqrt(d)
        return cls(
            {k: rng.uniform(-bound, bound, size=(specs[k].n, d)) for k in ATTRIBUTES},
            specs,
        )

    def bin_index(self, k: str, v: float) -> int:
        spec = self.specs[k]
        lo = 0.0 if spec.clip_max is not None else spec.range_lo
        hi = spec.clip_max if spec.clip_max is not None else spec.range_hi
        v = min(max(v, lo), hi)
        cell = (hi - lo) / spec.n
        idx = int(np.ceil((v - lo) / cell)) - 1
        return min(max(idx, 0), spec.n - 1)

    def embed(self, s: QualityVector) -> np.ndarray:
        return np.stack(
            [self.tokens[k][self.bin_index(k, getattr(s, k))] for k in ATTRIBUTES]
        )

    def params(self):
        return {f"bins_{k}": self.tokens[k] for k in ATTRIBUTES}

    def grads_batch(self, scores, grad):
        out = {}
        for i, k in enumerate(ATTRIBUTES):
            g = np.zeros_like(self.tokens[k])
            for b in range(scores.shape[0]):
                g[self.bin_index(k, scores[b, i])] += grad[b, i, :]
            out[f"bins_{k}"] = g
        return out


def _silu(z):
    sig = 1.0 / (1.0 + np.exp(-z))
    return z * sig


def _silu_grad(z):
    sig = 1.0 / (1.0 + np.exp(-z))
    return sig * (1.0 + z * (1.0 - sig))


class FourierFeatureStrategy(InjectionStrategy):
    """sin/cos features of the min-max-normalized score, projected to token
    space by a two-layer MLP (hidden width 4d) per attribute.

    Frequency bank: 8 log-spaced frequencies in [0.5, 16] cycles over the
    normalized range.
    """

    kind = "fourier"
    n_freq = 8

    def __init__(self, weights: Dict[str, Dict[str, np.ndarray]], specs):
        self.weights = weights  # per attribute: W1 (16, 4d), b1, W2 (4d, d), b2
        self.specs = specs
        self.freqs = np.geomspace(0.5, 16.0, self.n_freq)

    @classmethod
    def init(cls, specs, d: int, rng) -> "FourierFeatureStrategy":
        hidden = 4 * d
        weights = {}
        for k in ATTRIBUTES:
            weights[k] = {
                "W1": rng.normal(0.0, 1.0 / np.sqrt(2 * cls.n_freq), size=(2 * cls.n_freq, hidden)),
                "b1": np.zeros(hidden),
                "W2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, d)),
                "b2": np.zeros(d),
            }
        return cls(weights, specs)

    def _features(self, k: str, v: np.ndarray) -> np.ndarray:
        spec = self.specs[k]
        lo = 0.0 if spec.clip_max is not None else spec.range_lo
        hi = spec.clip_max if spec.clip_max is not None else spec.range_hi
        vhat = np.clip((np.asarray(v, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
        phase = 2.0 * np.pi * vhat[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)

    def embed(self, s: QualityVector) -> np.ndarray:
        return self.embed_batch(s.as_array()[None, :])[0]

    def embed_batch(self, scores):
        cols = []
        for i, k in enumerate(ATTRIBUTES):
            w = self.weights[k]
            f = self._features(k, scores[:, i])
            h = _silu(f @ w["W1"] + w["b1"])
            cols.append(h @ w["W2"] + w["b2"])
        return np.stack(cols, axis=1)

    def params(self):
        out = {}
        for k in ATTRIBUTES:
            for name, arr in self.weights[k].items():
                out[f"fourier_{k}_{name}"] = arr
        return out

    def grads_batch(self, scores, grad):
        out = {}
        for i, k in enumerate(ATTRIBUTES):
            w = self.weights[k]
            f = self._features(k, scores[:, i])
            z1 = f @ w["W1"] + w["b1"]
            h = _silu(z1)
            g2 = grad[:, i, :]
            out[f"fourier_{k}_W2"] = h.T @ g2
            out[f"fourier_{k}_b2"] = g2.sum(axis=0)
            gh = (g2 @ w["W2"].T) * _silu_grad(z1)
            out[f"fourier_{k}_W1"] = f.T @ gh
            out[f"fourier_{k}_b1"] = gh.sum(axis=0)
        return out


STRATEGY_KINDS = {
    "gcc": GccStrategy,
    "linear": LinearInterpolationStrategy,
    "binning": DiscreteBinningStrategy,
    "fourier": FourierFeatureStrategy,
}


def init_strategy(kind: str, specs, d: int, rng) -> InjectionStrategy:
    if kind not in STRATEGY_KINDS:
        raise ValueError(f"unknown strategy {kind!r}; expected one of {sorted(STRATEGY_KINDS)}")
    return STRATEGY_KINDS[kind].init(specs, d, rng)


def strategy_from_params(
    kind: str, specs: Dict[str, AttributeAnchorSpec], params: Dict[str, np.ndarray]
) -> InjectionStrategy:
    """Rebuild a strategy from its serialized parameter arrays."""
    if kind == "gcc":
        return GccStrategy(
            CentroidTable({k: params[f"centroid_{k}"] for k in ATTRIBUTES}), specs
        )
    if kind == "linear":
        return LinearInterpolationStrategy(
            {k: params[f"endpoints_{k}"] for k in ATTRIBUTES}, specs
        )
    if kind == "binning":
        return DiscreteBinningStrategy(
            {k: params[f"bins_{k}"] for k in ATTRIBUTES}, specs
        )
    if kind == "fourier":
        return FourierFeatureStrategy(
            {
                k: {name: params[f"fourier_{k}_{name}"] for name in ("W1", "b1", "W2", "b2")}
                for k in ATTRIBUTES
            },
            specs,
        )
    raise ValueError(f"unknown strategy {kind!r}")
