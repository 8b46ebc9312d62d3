"""Differentiable encoder-decoder transformer with key/value prefix injection.

Pre-layer-norm residual blocks, GELU feed-forward, learned absolute
positions, normal(0, 0.02) init, float64 throughout. Prefixes are injected
into the self-attention of every layer as extra key/value rows that are
always attendable; cross-attention receives no prefix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericError

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    hidden: int = 32
    layers: int = 2
    heads: int = 4
    ffn: int = 64
    vocab_size: int = 0
    max_context: int = 256
    prefix_len: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.prefix_len < 1:
            raise ValueError("prefix_len must be >= 1")
        for name in ("hidden", "layers", "heads", "ffn", "max_context"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class PrefixPack:
    """Per-layer (K, V) prefix pairs, one pair per transformer layer."""

    layers: tuple[tuple[Tensor, Tensor], ...]

    def __post_init__(self) -> None:
        lengths = {k.shape[0] for k, v in self.layers} | {v.shape[0] for k, v in self.layers}
        if len(lengths) > 1:
            raise ValueError(f"inconsistent prefix lengths: {lengths}")

    def __len__(self) -> int:
        return len(self.layers)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    length, hidden = x.shape
    return x.reshape(length, heads, hidden // heads).transpose((1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    heads, length, dh = x.shape
    return x.transpose((1, 0, 2)).reshape(length, heads * dh)


def attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    additive_mask: np.ndarray | None = None,
    prefix: tuple[Tensor, Tensor] | None = None,
    heads: int = 1,
    prefix_mask: np.ndarray | None = None,
    capture: list | None = None,
) -> Tensor:
    """Scaled dot-product attention over [prefix keys ; keys].

    additive_mask has shape (Lq, Lk) with 0 at allowed and -inf at forbidden
    positions and covers only the non-prefix keys; prefix positions are
    always allowed unless an explicit prefix_mask says otherwise.
    """
    lq, hidden = queries.shape
    lk = keys.shape[0]
    if values.shape[0] != lk or keys.shape[1] != hidden or values.shape[1] != hidden:
        raise ValueError(f"shape mismatch: q{queries.shape} k{keys.shape} v{values.shape}")
    if hidden % heads != 0:
        raise ValueError(f"hidden {hidden} not divisible by heads {heads}")
    if additive_mask is not None and additive_mask.shape != (lq, lk):
        raise ValueError(f"mask shape {additive_mask.shape} != {(lq, lk)}")

    scale = 1.0 / math.sqrt(hidden // heads)
    q = _split_heads(queries, heads)
    k = _split_heads(keys, heads)
    v = _split_heads(values, heads)
    scores = (q @ k.transpose((0, 2, 1))) * scale
    if additive_mask is not None:
        scores = scores + Tensor(additive_mask)

    if prefix is None:
        weights = ad.softmax(scores, axis=-1)
        if capture is not None:
            capture.append(weights.data.copy())
        return _merge_heads(weights @ v)

    # The prefix block is scored separately and normalized jointly with the
    # real block, so a fully masked prefix is bit-neutral to the output.
    pk = _split_heads(prefix[0], heads)
    pv = _split_heads(prefix[1], heads)
    prefix_scores = (q @ pk.transpose((0, 2, 1))) * scale
    if prefix_mask is not None:
        prefix_scores = prefix_scores + Tensor(prefix_mask)
    weights = ad.block_softmax(prefix_scores, scores)
    if capture is not None:
        capture.append(weights.data.copy())
    n_prefix = prefix[0].shape[0]
    return _merge_heads(weights[:, :, :n_prefix] @ pv + weights[:, :, n_prefix:] @ v)


class Backbone:
    """Parameter store plus encoder/decoder forward passes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        if config.vocab_size <= 0:
            raise ValueError("vocab_size must be set before building the backbone")
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self._init_params(rng)

    # -- parameters ---------------------------------------------------------

    def _weight(self, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> None:
        self.params[name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    def _zeros(self, name: str, shape: tuple[int, ...]) -> None:
        self.params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def _ones(self, name: str, shape: tuple[int, ...]) -> None:
        self.params[name] = Tensor(np.ones(shape), requires_grad=True)

    def _init_attn(self, prefix: str, rng: np.random.Generator) -> None:
        h = self.config.hidden
        for proj in ("q", "k", "v", "o"):
            self._weight(f"{prefix}.w{proj}", (h, h), rng)
            self._zeros(f"{prefix}.b{proj}", (h,))

    def _init_block(self, prefix: str, rng: np.random.Generator, cross: bool) -> None:
        h, f = self.config.hidden, self.config.ffn
        self._ones(f"{prefix}.ln1.g", (h,))
        self._zeros(f"{prefix}.ln1.b", (h,))
        self._init_attn(f"{prefix}.self", rng)
        if cross:
            self._ones(f"{prefix}.lnx.g", (h,))
            self._zeros(f"{prefix}.lnx.b", (h,))
            self._init_attn(f"{prefix}.cross", rng)
        self._ones(f"{prefix}.ln2.g", (h,))
        self._zeros(f"{prefix}.ln2.b", (h,))
        self._weight(f"{prefix}.ffn.w1", (h, f), rng)
        self._zeros(f"{prefix}.ffn.b1", (f,))
        self._weight(f"{prefix}.ffn.w2", (f, h), rng)
        self._zeros(f"{prefix}.ffn.b2", (h,))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        self._weight("embed.tokens", (cfg.vocab_size, cfg.hidden), rng)
        self._weight("embed.positions", (cfg.max_context, cfg.hidden), rng)
        for i in range(cfg.layers):
            self._init_block(f"enc.{i}", rng, cross=False)
        self._ones("enc.final.g", (cfg.hidden,))
        self._zeros("enc.final.b", (cfg.hidden,))
        for i in range(cfg.layers):
            self._init_block(f"dec.{i}", rng, cross=True)
        self._ones("dec.final.g", (cfg.hidden,))
        self._zeros("dec.final.b", (cfg.hidden,))

    # -- forward ------------------------------------------------------------

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _proj(self, prefix: str, proj: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{prefix}.w{proj}"] + self.params[f"{prefix}.b{proj}"]

    def _attn(
        self,
        prefix: str,
        x: Tensor,
        memory: Tensor,
        mask: np.ndarray | None,
        kv_prefix: tuple[Tensor, Tensor] | None,
        capture: list | None,
    ) -> Tensor:
        q = self._proj(prefix, "q", x)
        k = self._proj(prefix, "k", memory)
        v = self._proj(prefix, "v", memory)
        ctx = attention(q, k, v, additive_mask=mask, prefix=kv_prefix, heads=self.config.heads, capture=capture)
        return self._proj(prefix, "o", ctx)

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        inner = ad.gelu(x @ self.params[f"{prefix}.w1"] + self.params[f"{prefix}.b1"])
        return inner @ self.params[f"{prefix}.w2"] + self.params[f"{prefix}.b2"]

    def embed_tokens(self, ids: Sequence[int]) -> Tensor:
        """Token plus learned absolute position embeddings."""
        if len(ids) > self.config.max_context:
            raise DataError(f"context overflow: {len(ids)} tokens > max_context {self.config.max_context}")
        tok = ad.embed(self.params["embed.tokens"], np.asarray(ids, dtype=np.intp))
        pos = self.params["embed.positions"][: len(ids)]
        return tok + pos

    def _check_prefix(self, pack: PrefixPack | None) -> None:
        if pack is not None and len(pack) != self.config.layers:
            raise ValueError(f"prefix pack has {len(pack)} layer pairs, expected {self.config.layers}")

    def encoder_forward(
        self,
        ids: Sequence[int],
        additive_mask: np.ndarray | None = None,
        prefix_pack: PrefixPack | None = None,
        capture: list | None = None,
    ) -> Tensor:
        self._check_prefix(prefix_pack)
        x = self.embed_tokens(ids)
        for i in range(self.config.layers):
            p = f"enc.{i}"
            kv = prefix_pack.layers[i] if prefix_pack is not None else None
            normed = self._ln(f"{p}.ln1", x)
            x = x + self._attn(f"{p}.self", normed, normed, additive_mask, kv, capture)
            x = x + self._ffn(f"{p}.ffn", self._ln(f"{p}.ln2", x))
        return self._ln("enc.final", x)

    def decoder_forward(
        self,
        x: Tensor,
        memory: Tensor,
        self_prefix: PrefixPack | None = None,
        additive_mask: np.ndarray | None = None,
        capture: list | None = None,
    ) -> Tensor:
        """Bidirectional refiner: self-attention (optionally prefixed) plus
        cross-attention over memory; no causal mask."""
        self._check_prefix(self_prefix)
        for i in range(self.config.layers):
            p = f"dec.{i}"
            kv = self_prefix.layers[i] if self_prefix is not None else None
            normed = self._ln(f"{p}.ln1", x)
            x = x + self._attn(f"{p}.self", normed, normed, additive_mask, kv, capture)
            x = x + self._attn(f"{p}.cross", self._ln(f"{p}.lnx", x), memory, None, None, capture)
            x = x + self._ffn(f"{p}.ffn", self._ln(f"{p}.ln2", x))
        return self._ln("dec.final", x)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-6,
    sample_size: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Checks a random subset of at least min(sample_size, total) coordinates.
    Relative error uses max(|analytic|, |numeric|, 1) as the denominator so
    near-zero gradients are compared absolutely.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon {epsilon} outside (0, 1e-2]")
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    ad.zero_grads(params)
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(pi, ci) for pi, p in enumerate(params) for ci in range(p.data.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > sample_size:
        picked = rng.choice(len(coords), size=sample_size, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for pi, ci in coords:
        p = params[pi]
        original = p.data.flat[ci]
        p.data.flat[ci] = original + epsilon
        hi = float(loss_fn().data)
        p.data.flat[ci] = original - epsilon
        lo = float(loss_fn().data)
        p.data.flat[ci] = original
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("loss is not finite during finite differencing")
        numeric = (hi - lo) / (2.0 * epsilon)
        exact = analytic[pi].flat[ci]
        rel = abs(numeric - exact) / max(abs(numeric), abs(exact), 1.0)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 2e-5,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        ad.zero_grads(self.params.values())

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor], meta: dict) -> None:
    """Versioned container: named float64 arrays plus a JSON metadata blob.
    Save/load round trips are bit-exact."""
    arrays = {f"param::{name}": p.data for name, p in params.items()}
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_VERSION
    arrays["__meta__"] = np.array(json.dumps(meta))
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version: {meta.get('format_version')}")
        params = {
            name[len("param::") :]: npz[name].copy() for name in npz.files if name.startswith("param::")
        }
    return params, meta
