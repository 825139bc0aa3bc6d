"""The recognition network: convolutional feature extractor, context-based
spatial attention with motion priors, adaptive pooling, frame embedding, a
causally masked transformer encoder, and the letters-plus-blank classifier.

Frame t never sees information from frames after t: the attention refiner
is masked to a trailing window of prior frames, the encoder mask is purely
causal, and the motion prior uses backward differences only.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .ctc import FrameDistributionSeq

MASK_OFF = -1e9

LAYERNORM_EPS = 1e-5

CKPT_MAGIC = b"CTSQCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feat_channels: int = 16
    feat_grid: tuple[int, int] = (8, 8)
    pooled_grid: tuple[int, int] = (4, 4)
    embed_dim: int = 32
    encoder_layers: int = 2
    heads: int = 2
    ffn_hidden: int = 64
    context_window: int = 5
    dropout_encoder: float = 0.3
    dropout_attention: float = 0.1
    num_classes: int = 5
    # fixed multiplier on the classifier output; keeps the head an affine
    # map while giving the logits usable dynamic range at small step sizes
    logit_scale: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "feat_grid", tuple(self.feat_grid))
        object.__setattr__(self, "pooled_grid", tuple(self.pooled_grid))
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if any(p > f for p, f in zip(self.pooled_grid, self.feat_grid)):
            raise ValueError(f"pooled grid {self.pooled_grid} exceeds feature grid {self.feat_grid}")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")
        if self.num_classes < 1:
            raise ValueError("need at least one letter class")


@dataclass
class AttentionState:
    """Intermediate attention tensors exposed for inspection and tests."""

    raw_maps: np.ndarray
    refined_maps: np.ndarray
    priors: np.ndarray
    blend_weight: float
    final_maps: np.ndarray


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if prefix else attr
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix=f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(prefix=f"{name}.{i}."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, scale: float | None = None):
        std = scale if scale is not None else 1.0 / math.sqrt(in_dim)
        self.weight = Parameter(rng.normal(0.0, std, size=(in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, padding: int = 1):
        std = math.sqrt(2.0 / (cin * kernel * kernel))
        self.weight = Parameter(rng.normal(0.0, std, size=(cout, cin, kernel, kernel)))
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    """Per-position standardization with learnable gain and offset."""

    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.offset = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        mu = ad.mean_(x, axis=-1, keepdims=True)
        centered = x - mu
        var = ad.mean_(centered * centered, axis=-1, keepdims=True)
        inv = ad.power(var + LAYERNORM_EPS, -0.5)
        return centered * inv * self.gain + self.offset


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """The standard fixed sin/cos position table."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2 + dim % 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim // 2])
    return pe


def causal_mask(length: int, window: int | None = None) -> np.ndarray:
    """Additive mask: frame t may attend to frames max(0, t-window)..t."""
    rows = np.arange(length)[:, None]
    cols = np.arange(length)[None, :]
    allowed = cols <= rows
    if window is not None:
        allowed &= cols >= rows - window
    return np.where(allowed, 0.0, MASK_OFF)


def pool_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Adaptive-average-pooling weights with floor/ceil bin boundaries."""
    if out_size > in_size:
        raise ValueError(f"adaptive pooling cannot upsample: {in_size} -> {out_size}")
    mat = np.zeros((out_size, in_size))
    for i in range(out_size):
        start = (i * in_size) // out_size
        end = -((-(i + 1) * in_size) // out_size)  # ceil division
        mat[i, start:end] = 1.0 / (end - start)
    return mat


def adaptive_pool(x: Tensor, out_grid: tuple[int, int]) -> Tensor:
    """Average-pool the trailing two axes of (T, D, H, W) to out_grid."""
    t, d, h, w = x.shape
    ph = Tensor(pool_matrix(h, out_grid[0]))
    pw = Tensor(pool_matrix(w, out_grid[1]))
    flat = ad.reshape(x, (t * d, h, w))
    pooled = ad.matmul(ad.matmul(ph, flat), ad.transpose(pw))
    return ad.reshape(pooled, (t, d, out_grid[0], out_grid[1]))


class FeatureExtractor(Module):
    """Four-layer strided conv stack emitting D x H x W maps per frame."""

    def __init__(self, cfg: ModelConfig, channels: int, rng: np.random.Generator):
        d = cfg.feat_channels
        self.conv1 = Conv2d(channels, d, rng, stride=2)
        self.conv2 = Conv2d(d, d, rng, stride=2)
        self.conv3 = Conv2d(d, d, rng, stride=1)
        self.conv4 = Conv2d(d, d, rng, stride=1)
        self.grid = cfg.feat_grid

    def __call__(self, frames: Tensor) -> Tensor:
        x = ad.relu(self.conv1(frames))
        x = ad.relu(self.conv2(x))
        x = ad.relu(self.conv3(x))
        x = ad.relu(self.conv4(x))
        if x.shape[2] < self.grid[0] or x.shape[3] < self.grid[1]:
            raise ValueError(
                f"input frames too small: conv output {x.shape[2]}x{x.shape[3]} "
                f"below feature grid {self.grid[0]}x{self.grid[1]}"
            )
        return adaptive_pool(x, self.grid)


class SpatialAttention(Module):
    """Position-wise two-layer ReLU scorer over each cell's channel vector."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.feat_channels
        self.w_a = Parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, 2 * d)))
        self.w_v = Parameter(rng.normal(0.0, 1.0 / math.sqrt(2 * d), size=(2 * d, 1)))

    def __call__(self, features: Tensor) -> Tensor:
        t, d, h, w = features.shape
        cells = ad.reshape(ad.transpose(features, (0, 2, 3, 1)), (t * h * w, d))
        hidden = ad.relu(ad.matmul(cells, self.w_a))
        scores = ad.relu(ad.matmul(hidden, self.w_v))
        return ad.reshape(scores, (t, h, w))


class AttentionRefiner(Module):
    """Single-head self-attention over flattened maps, masked to a trailing
    window of prior frames, with sinusoidal positions added first."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dim = cfg.feat_grid[0] * cfg.feat_grid[1]
        std = 1.0 / math.sqrt(dim)
        self.w_q = Parameter(rng.normal(0.0, std, size=(dim, dim)))
        self.w_k = Parameter(rng.normal(0.0, std, size=(dim, dim)))
        self.w_v = Parameter(rng.normal(0.0, std, size=(dim, dim)))
        self.window = cfg.context_window
        self.grid = cfg.feat_grid

    def __call__(self, maps: Tensor) -> Tensor:
        t, h, w = maps.shape
        dim = h * w
        tokens = ad.reshape(maps, (t, dim)) * math.sqrt(dim) + Tensor(sinusoidal_encoding(t, dim))
        q = ad.matmul(tokens, self.w_q)
        k = ad.matmul(tokens, self.w_k)
        v = ad.matmul(tokens, self.w_v)
        scores = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(dim)) + Tensor(causal_mask(t, self.window))
        weights = ad.softmax(scores, axis=-1)
        return ad.reshape(ad.matmul(weights, v), (t, h, w))


class MultiHeadSelfAttention(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        e = cfg.embed_dim
        std = 1.0 / math.sqrt(e)
        self.w_q = Parameter(rng.normal(0.0, std, size=(e, e)))
        self.w_k = Parameter(rng.normal(0.0, std, size=(e, e)))
        self.w_v = Parameter(rng.normal(0.0, std, size=(e, e)))
        self.w_o = Parameter(rng.normal(0.0, std, size=(e, e)))
        self.heads = cfg.heads

    def __call__(self, x: Tensor) -> Tensor:
        t, e = x.shape
        nh = self.heads
        hd = e // nh

        def split(m: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(m, (t, nh, hd)), (1, 0, 2))

        q, k, v = (split(ad.matmul(x, wm)) for wm in (self.w_q, self.w_k, self.w_v))
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(hd))
        scores = scores + Tensor(causal_mask(t)[None, :, :])
        weights = ad.softmax(scores, axis=-1)
        ctx = ad.reshape(ad.transpose(ad.matmul(weights, v), (1, 0, 2)), (t, e))
        return ad.matmul(ctx, self.w_o)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MultiHeadSelfAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.embed_dim)
        self.ffn_in = Linear(cfg.embed_dim, cfg.ffn_hidden, rng)
        self.ffn_out = Linear(cfg.ffn_hidden, cfg.embed_dim, rng)
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.dropout = cfg.dropout_encoder

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        a = self.attn(x)
        if training:
            a = ad.dropout(a, self.dropout, rng)
        x = self.norm1(x + a)
        f = self.ffn_out(ad.relu(self.ffn_in(x)))
        if training:
            f = ad.dropout(f, self.dropout, rng)
        return self.norm2(x + f)


class Recognizer(Module):
    """End-to-end network mapping frames to per-frame class distributions."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, channels: int = 3):
        rng = np.random.default_rng([0x6D6F64, seed])
        self.cfg = cfg
        self.channels = channels
        self.extractor = FeatureExtractor(cfg, channels, rng)
        self.spatial = SpatialAttention(cfg, rng)
        self.refiner = AttentionRefiner(cfg, rng)
        self.blend_raw = Parameter(np.zeros(()), name="blend_raw")
        h, w = cfg.feat_grid
        ph, pw = cfg.pooled_grid
        self.embed = Linear(cfg.feat_channels * ph * pw, cfg.embed_dim, rng)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.encoder_layers)]
        # near-uniform start: tiny classifier weights keep early CTC stable
        self.classifier = Linear(cfg.embed_dim, cfg.num_classes + 1, rng, scale=0.01)

    # -- pieces -----------------------------------------------------------

    def blend_weight(self) -> Tensor:
        """The prior mixing weight squashed into [0, 1]."""
        return ad.sigmoid(self.blend_raw)

    def blend_with_prior(self, refined: Tensor, priors: np.ndarray) -> Tensor:
        t, h, w = refined.shape
        sums = priors.reshape(t, -1).sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError("each prior map must be normalized to sum 1")
        att = ad.softmax(ad.reshape(refined, (t, h * w)), axis=-1)
        wp = self.blend_weight()
        blended = wp * Tensor(priors.reshape(t, h * w)) + (1.0 - wp) * att
        return ad.reshape(blended, (t, h, w))

    def encode(self, embeddings: Tensor, training: bool, rng) -> Tensor:
        t, e = embeddings.shape
        x = embeddings * math.sqrt(e) + Tensor(sinusoidal_encoding(t, e))
        for layer in self.layers:
            x = layer(x, training, rng)
        return x

    # -- full pass --------------------------------------------------------

    def forward(
        self,
        frames: np.ndarray,
        priors: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        return_state: bool = False,
    ):
        """Run the network on one normalized clip (T, channels, H, W).

        ``priors`` are per-frame attention prior maps summing to 1; when
        omitted they are derived from frame differences of the input.
        Dropout fires only when ``training`` is set, using ``rng``.
        """
        if training and rng is None:
            raise ValueError("training mode requires an rng for dropout")
        x = Tensor(np.asarray(frames, dtype=np.float64))
        if priors is None:
            priors = motion_prior(x.data, self.cfg.feat_grid)

        features = self.extractor(x)
        raw = self.spatial(features)
        raw_for_refine = ad.dropout(raw, self.cfg.dropout_attention, rng) if training else raw
        refined = self.refiner(raw_for_refine)
        final_maps = self.blend_with_prior(refined, priors)

        attended = apply_attention(features, final_maps)
        pooled = adaptive_pool(attended, self.cfg.pooled_grid)
        embeddings = self.embed(ad.reshape(pooled, (pooled.shape[0], -1)))
        encoded = self.encode(embeddings, training, rng)
        logits = self.classifier(encoded) * self.cfg.logit_scale
        log_probs = ad.log_softmax(logits, axis=-1)
        dist = FrameDistributionSeq(probs=ad.exp(log_probs), log_probs=log_probs)
        if not return_state:
            return dist
        state = AttentionState(
            raw_maps=raw.data.copy(),
            refined_maps=refined.data.copy(),
            priors=np.asarray(priors).copy(),
            blend_weight=self.blend_weight().item(),
            final_maps=final_maps.data.copy(),
        )
        return dist, state


def apply_attention(features: Tensor, maps: Tensor) -> Tensor:
    """Channel-wise broadcast product of feature maps with attention maps."""
    t, d, h, w = features.shape
    if maps.shape != (t, h, w):
        raise ValueError(f"attention maps {maps.shape} do not match features {features.shape}")
    return features * ad.reshape(maps, (t, 1, h, w))


def motion_prior(frames: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Per-frame attention prior from backward frame differences.

    Absolute temporal difference, channel-summed, box-downsampled to the
    feature grid and normalized to sum 1. Frames without motion (including
    frame 0) fall back to a uniform map.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t, _, ph, pw = frames.shape
    gh, gw = grid
    diff = np.zeros((t, ph, pw))
    if t > 1:
        diff[1:] = np.abs(frames[1:] - frames[:-1]).sum(axis=1)
    mh = pool_matrix(ph, gh)
    mw = pool_matrix(pw, gw)
    small = np.einsum("ij,tjk,lk->til", mh, diff, mw)
    sums = small.reshape(t, -1).sum(axis=1)
    uniform = np.full((gh, gw), 1.0 / (gh * gw))
    out = np.empty((t, gh, gw))
    for i in range(t):
        out[i] = uniform if sums[i] <= 1e-12 else small[i] / sums[i]
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Recognizer, path, extra: dict | None = None) -> None:
    """Versioned container: JSON manifest (config echo, names, shapes,
    offsets) followed by raw little-endian float64 arrays."""
    params = model.named_parameters()
    entries = []
    offset = 0
    blobs = []
    for name, p in params.items():
        blob = p.data.astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(p.data.shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    manifest = {
        "version": CKPT_VERSION,
        "model_config": asdict(model.cfg),
        "channels": model.channels,
        "params": entries,
        "payload_bytes": offset,
    }
    if extra:
        manifest["extra"] = extra
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path) -> Recognizer:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        payload = fh.read()
    if manifest.get("version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {manifest.get('version')}")
    if len(payload) != manifest["payload_bytes"]:
        raise ValueError(
            f"checkpoint payload truncated: {len(payload)} != {manifest['payload_bytes']} bytes"
        )
    cfg = ModelConfig(**manifest["model_config"])
    model = Recognizer(cfg, seed=0, channels=manifest.get("channels", 3))
    params = model.named_parameters()
    seen = set()
    for entry in manifest["params"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in params:
            raise ValueError(f"checkpoint parameter {name!r} not present in model")
        p = params[name]
        if tuple(p.data.shape) != shape:
            raise ValueError(f"shape mismatch for {name!r}: checkpoint {shape}, model {p.data.shape}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        p.data = arr.astype(np.float64)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
