"""Toy conditional flow-matching model over tiny grayscale images.

The network is a fully connected velocity model v(x_t, t, y, s): the noisy
image, a small time embedding, a class embedding (with a null row for
classifier-free dropout), and the five condition tokens are concatenated
into one input vector. Training regresses the velocity target (eps - x)
with Adam; everything is plain numpy with hand-written backprop so runs are
bit-reproducible from the seed.
"""
from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .curation import Manifest, config_digest
from .encoder import (
    ATTRIBUTES,
    AttributeAnchorSpec,
    InjectionStrategy,
    _silu,
    _silu_grad,
    default_anchor_specs,
    init_strategy,
    strategy_from_params,
)
from .images import GrayImage, RgbImage, gray_to_rgb, load_png, to_gray
from .signals import QualityVector

CHECKPOINT_VERSION = 1

# Fourier time-embedding frequencies (cycles over [0, 1]) plus raw t.
TIME_FREQS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
N_TIME = 2 * len(TIME_FREQS) + 1


def interpolate(x: np.ndarray, eps: np.ndarray, t) -> np.ndarray:
    """Linear interpolation path x_t = (1 - t) x + t eps."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {eps.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    if t.ndim == 1:
        t = t[:, None]
    return (1.0 - t) * x + t * eps


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 128
    steps: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    p_drop: float = 0.1
    hidden: Tuple[int, ...] = (256, 256, 256)
    d: int = 8
    d_y: int = 8
    side: int = 16
    n_classes: int = 2
    strategy: str = "gcc"

    def __post_init__(self):
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must be in [0, 1)")
        if any(w <= 0 for w in self.hidden) or min(self.d, self.d_y, self.side) <= 0:
            raise ValueError("widths must be positive")

    def digest(self) -> str:
        return config_digest(asdict(self))


class VelocityNet:
    """MLP velocity field with class-embedding table and condition tokens.

    Input layout: [x_t (D) | time features (N_TIME) | class embedding (d_y)
    | five condition tokens flattened (5d)]. The class table has one extra
    null row (index n_classes) used for classifier-free dropout. A linear
    skip from the input concatenation to the output is added to the MLP
    head.
    """

    def __init__(self, cfg: TrainConfig, params: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.D = cfg.side * cfg.side
        self.in_width = self.D + N_TIME + cfg.d_y + 5 * cfg.d
        self.params = params
        self.n_layers = len(cfg.hidden) + 1

    @classmethod
    def init(cls, cfg: TrainConfig, rng) -> "VelocityNet":
        D = cfg.side * cfg.side
        widths = [D + N_TIME + cfg.d_y + 5 * cfg.d] + list(cfg.hidden) + [D]
        params: Dict[str, np.ndarray] = {}
        for i in range(len(widths) - 1):
            fan_in = widths[i]
            params[f"W{i}"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(widths[i], widths[i + 1]))
            params[f"b{i}"] = np.zeros(widths[i + 1])
        params["class_emb"] = rng.normal(0.0, 1.0, size=(cfg.n_classes + 1, cfg.d_y))
        # zero-initialized linear skip from the input to the output: the
        # optimal velocity has a large component linear in x_t, and learning
        # it through the skip frees the MLP for the residual structure
        params["Wskip"] = np.zeros((widths[0], D))
        return cls(cfg, params)

    @property
    def null_class(self) -> int:
        return self.cfg.n_classes

    def time_embedding(self, t: np.ndarray) -> np.ndarray:
        # Multi-frequency features: the velocity field changes sharply with
        # t near the data end of the path, and a single sin/cos pair is too
        # coarse for the net to resolve it.
        feats = [t]
        for f in TIME_FREQS:
            feats.append(np.sin(2 * np.pi * f * t))
            feats.append(np.cos(2 * np.pi * f * t))
        return np.stack(feats, axis=1)

    def forward(
        self,
        x_t: np.ndarray,
        t: np.ndarray,
        cls_idx: np.ndarray,
        cond: np.ndarray,
        cache: bool = False,
    ):
        """Velocity prediction for a batch; cond is (B, 5, d)."""
        B = x_t.shape[0]
        inp = np.concatenate(
            [x_t, self.time_embedding(t), self.params["class_emb"][cls_idx], cond.reshape(B, -1)],
            axis=1,
        )
        h = inp
        zs, hs = [], [h]
        for i in range(self.n_layers - 1):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = _silu(z)
            zs.append(z)
            hs.append(h)
        out = h @ self.params[f"W{self.n_layers - 1}"] + self.params[f"b{self.n_layers - 1}"]
        out = out + inp @ self.params["Wskip"]
        if not cache:
            return out
        return out, (inp, zs, hs, cls_idx)

    def backward(self, cache, d_out: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(out).

        Returns (parameter gradients, gradient w.r.t. cond as (B, 5, d)).
        """
        inp, zs, hs, cls_idx = cache
        grads: Dict[str, np.ndarray] = {}
        g = d_out
        last = self.n_layers - 1
        grads[f"W{last}"] = hs[-1].T @ g
        grads[f"b{last}"] = g.sum(axis=0)
        g = g @ self.params[f"W{last}"].T
        for i in range(last - 1, -1, -1):
            g = g * _silu_grad(zs[i])
            grads[f"W{i}"] = hs[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        # add the skip path, then g is the gradient w.r.t. the input
        grads["Wskip"] = inp.T @ d_out
        g = g + d_out @ self.params["Wskip"].T
        d_emb = g[:, self.D + N_TIME : self.D + N_TIME + self.cfg.d_y]
        grads["class_emb"] = np.zeros_like(self.params["class_emb"])
        np.add.at(grads["class_emb"], cls_idx, d_emb)
        d_cond = g[:, self.D + N_TIME + self.cfg.d_y :].reshape(-1, 5, self.cfg.d)
        return grads, d_cond


def fm_loss_given(
    net: VelocityNet,
    strategy: InjectionStrategy,
    x: np.ndarray,
    cls_idx: np.ndarray,
    scores: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    drop_mask: np.ndarray,
    want_grads: bool = True,
):
    """Flow-matching MSE loss with fixed (t, eps, dropout) draws.

    Loss = mean over batch and pixels of (v_pred - (eps - x))^2; gradients
    cover the network, the class table, and the strategy parameters
    (prefixed "strategy/").
    """
    B = x.shape[0]
    cls_eff = np.where(drop_mask, net.null_class, cls_idx)
    cond = strategy.embed_batch(scores)
    x_t = interpolate(x, eps, t)
    target = eps - x
    out, cache = net.forward(x_t, t, cls_eff, cond, cache=True)
    diff = out - target
    loss = float(np.mean(diff**2))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite flow-matching loss")
    if not want_grads:
        return loss, None
    d_out = 2.0 * diff / diff.size
    grads, d_cond = net.backward(cache, d_out)
    for name, g in strategy.grads_batch(scores, d_cond).items():
        grads[f"strategy/{name}"] = g
    return loss, grads


def fm_loss(net: VelocityNet, strategy: InjectionStrategy, x, cls_idx, scores, rng, p_drop: float):
    """fm_loss_given with (t, eps, dropout) drawn from rng."""
    B = x.shape[0]
    if B == 0:
        raise ValueError("batch must be nonempty")
    t = rng.random(B)
    eps = rng.standard_normal(x.shape)
    drop = rng.random(B) < p_drop
    return fm_loss_given(net, strategy, x, cls_idx, scores, t, eps, drop)


class Adam:
    """Adam with bias correction, no weight decay."""

    def __init__(self, param_names, cfg: TrainConfig):
        self.m = {n: None for n in param_names}
        self.v = {n: None for n in param_names}
        self.t = 0
        self.cfg = cfg

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, g in grads.items():
            if self.m[name] is None:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g**2
            params[name] -= c.lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + c.adam_eps)


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    config: dict
    specs: Dict[str, AttributeAnchorSpec]
    step: int

    def net_and_strategy(self) -> Tuple[VelocityNet, InjectionStrategy]:
        cfg = TrainConfig(**{**self.config, "hidden": tuple(self.config["hidden"])})
        net_params = {k: v for k, v in self.params.items() if not k.startswith("strategy/")}
        strat_params = {
            k[len("strategy/") :]: v for k, v in self.params.items() if k.startswith("strategy/")
        }
        net = VelocityNet(cfg, net_params)
        strategy = strategy_from_params(cfg.strategy, self.specs, strat_params)
        return net, strategy


def _spec_to_json(spec: AttributeAnchorSpec) -> dict:
    return {
        "attribute": spec.attribute,
        "anchors": list(spec.anchors),
        "sigma": spec.sigma,
        "range_lo": spec.range_lo,
        "range_hi": spec.range_hi,
        "clip_max": spec.clip_max,
    }


def _spec_from_json(obj: dict) -> AttributeAnchorSpec:
    return AttributeAnchorSpec(
        obj["attribute"],
        np.array(obj["anchors"]),
        obj["sigma"],
        obj["range_lo"],
        obj["range_hi"],
        obj["clip_max"],
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write of a JSON checkpoint with base64 float64 tensors."""
    tensors = {
        name: {
            "shape": list(arr.shape),
            "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode(),
        }
        for name, arr in ckpt.params.items()
    }
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config,
        "config_digest": config_digest(ckpt.config),
        "specs": {k: _spec_to_json(v) for k, v in ckpt.specs.items()},
        "step": ckpt.step,
        "tensors": tensors,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')}")
    params = {
        name: np.frombuffer(base64.b64decode(t["data"]), dtype="<f8").reshape(t["shape"]).copy()
        for name, t in payload["tensors"].items()
    }
    specs = {k: _spec_from_json(v) for k, v in payload["specs"].items()}
    return Checkpoint(params, payload["config"], specs, payload["step"])


def manifest_arrays(manifest: Manifest, side: int):
    """Load manifest images as flattened [-1, 1] grayscale vectors.

    Returns (X (n, side*side), class labels (n,), scores (n, 5))."""
    xs, ys, ss = [], [], []
    for r in manifest.records:
        img = load_png(r.image_ref)
        g = to_gray(img).data
        if g.shape != (side, side):
            raise ValueError(f"{r.id}: expected {side}x{side} image, got {g.shape}")
        xs.append(2.0 * g.ravel() - 1.0)
        ys.append(r.class_label)
        ss.append(r.quality.as_array())
    return np.stack(xs), np.array(ys, dtype=np.int64), np.stack(ss)


def train(
    manifest: Manifest,
    cfg: TrainConfig,
    specs: Optional[Dict[str, AttributeAnchorSpec]] = None,
) -> Tuple[Checkpoint, List[Tuple[int, float]]]:
    """Run the full training loop; returns the checkpoint and the loss curve.

    Deterministic given (manifest, cfg): one seeded generator drives
    initialization and every batch draw.
    """
    if not manifest.records:
        raise ValueError("manifest is empty")
    specs = specs or default_anchor_specs()
    X, y, S = manifest_arrays(manifest, cfg.side)
    rng = np.random.default_rng(cfg.seed)
    strategy = init_strategy(cfg.strategy, specs, cfg.d, rng)
    net = VelocityNet.init(cfg, rng)
    all_params = dict(net.params)
    for name, arr in strategy.params().items():
        all_params[f"strategy/{name}"] = arr
    opt = Adam(all_params.keys(), cfg)
    curve: List[Tuple[int, float]] = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(X), size=cfg.batch_size)
        loss, grads = fm_loss(net, strategy, X[idx], y[idx], S[idx], rng, cfg.p_drop)
        if loss > 1e6:
            raise FloatingPointError(f"training diverged at step {step}: loss={loss}")
        opt.step(all_params, grads)
        curve.append((step, loss))
    return Checkpoint(all_params, asdict(cfg), specs, cfg.steps), curve


# --- synthetic corpus ------------------------------------------------------


def make_synthetic_corpus(n: int, seed: int, side: int = 16):
    """Procedural tiny-image corpus spanning the quality space.

    Each sample is a smooth horizontal sinusoidal grating with a
    brightness offset (luminance), a blur radius (clarity), and an
    amplitude/tilt factor that controls pixel spread (entropy), plus an
    optional bright corner tag that triggers the stub watermark scorer.
    The class label is a localized feature — a dark tag in the
    bottom-right corner (class 1) or none (class 0) — so that amplified
    classifier-free guidance on the class moves only a small patch rather
    than rescaling the whole image. The family is deliberately smooth and
    low dimensional so a flat velocity net can fit it well enough to
    denoise cleanly at sampling time. Returns a list of
    (RgbImage, class_label).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    yy, xx = np.mgrid[0:side, 0:side]
    for _ in range(n):
        cls = int(rng.integers(0, 2))
        coord = yy
        # Grating amplitude drives pixel spread (hence the entropy signal);
        # squaring skews the draw toward flat images so the low-entropy
        # regime is well represented. The family is kept deliberately
        # low dimensional (amplitude, offset, blur, tag) so the flat
        # velocity net can fit it well enough to denoise cleanly.
        diversity = rng.uniform(0.0, 1.0) ** 2
        amp = 0.45 * diversity
        offset = rng.uniform(0.15, 0.85)
        # phase 2.5 makes the grating's first and last lines equal, so the
        # mean image gradient (the stub aesthetic signal) telescopes to
        # zero over the grating and stays independent of its amplitude
        img = offset + amp * np.sin(2.0 * np.pi * (coord + 2.5) / 8.0)
        # a diversity-scaled tilt spreads the handful of sine levels into a
        # continuum, extending the entropy range of the corpus upward
        ga, gb = rng.uniform(-1.0, 1.0, size=2)
        ramp = (ga * yy + gb * xx) / side
        img = img + 0.5 * diversity * (ramp - ramp.mean())
        blur = float(rng.choice([0.0, 0.6, 1.2, 2.0]))
        if blur > 0:
            img = gaussian_filter(img, blur, mode="nearest")
        img = np.clip(img, 0.0, 1.0)
        if rng.random() < 0.3:
            img[:4, :4] = 1.0
        if cls == 1:
            img[-2:, -2:] = 0.05
        out.append((gray_to_rgb(img), cls))
    return out
