"""Forward-pass-only transformer trunk with aggregation-aware token routing.

Each frame's token sequence is [camera tokens | registration tokens |
aggregation tokens | patch tokens] (the aggregation block is folded into
the patch tokens under "add" fusion). The target frame gets its own
aggregation token set, every other frame shares a second set; frame 0
gets its own registration set, the rest share another. Layers alternate
frame-restricted and global self-attention, frame scope first.

There is no temporal position encoding: frame identity enters only through
those special token sets, so permuting non-special frames permutes the
outputs. The patch embedding is a fixed seeded linear map (a stand-in for
a pretrained backbone, which is not what is under test here); the heads
are fixed seeded linear maps as well. All weights derive from one
splitmix64 stream in the documented order, normal(0, 0.02).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import IndivisibleResolution, ShapeMismatch, TargetOutOfRange
from .rng import SplitMix64, derive_seed

_DENSE_HEAD_TAG = 0xD5
_INIT_STD = 0.02
_LN_EPS = 1e-6


@dataclass
class ModelConfig:
    dim: int = 64
    n_heads: int = 4
    n_layers: int = 4          # even; frame/global alternation
    patch: int = 16
    n_agg_tokens: int = 4
    n_reg_tokens: int = 4
    n_cam_tokens: int = 1
    fusion: str = "concatenate"  # concatenate | add
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.n_heads != 0:
            raise ValueError("dim must be divisible by n_heads")
        if self.dim % 4 != 0:
            raise ValueError("dim must be divisible by 4 (2D positional encoding)")
        if self.n_layers < 2 or self.n_layers % 2 != 0:
            raise ValueError("n_layers must be even and >= 2")
        if self.fusion not in ("concatenate", "add"):
            raise ValueError("fusion must be concatenate or add")
        if min(self.n_agg_tokens, self.n_reg_tokens, self.n_cam_tokens) < 1:
            raise ValueError("token counts must be >= 1")

    def seq_length(self, n_patches: int) -> int:
        extra = self.n_agg_tokens if self.fusion == "concatenate" else 0
        return self.n_cam_tokens + self.n_reg_tokens + extra + n_patches


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class TokenBank:
    """All learned-parameter stand-ins, deterministic from the config seed.

    Draw order from SplitMix64(seed): patch projection, camera tokens,
    first-frame registration tokens, shared registration tokens, target
    aggregation tokens, shared aggregation tokens, then per layer
    (wq, wk, wv, wo, w1, w2), then the camera head. Biases start at zero
    and layer-norm gains at one (not drawn). Dense-head weights come from
    a separate stream derived from (seed, head tag, out_channels).
    """

    config: ModelConfig
    patch_proj: np.ndarray = field(init=False)
    t_cam: np.ndarray = field(init=False)
    t_reg_first: np.ndarray = field(init=False)
    t_reg_rest: np.ndarray = field(init=False)
    t_agg_target: np.ndarray = field(init=False)
    t_agg_other: np.ndarray = field(init=False)
    layers: list[LayerWeights] = field(init=False)
    cam_head: np.ndarray = field(init=False)

    def __post_init__(self):
        cfg = self.config
        c = cfg.dim
        rng = SplitMix64(cfg.seed)

        def draw(*shape):
            return rng.normal_array(int(np.prod(shape)), 0.0, _INIT_STD).reshape(shape)

        self.patch_proj = draw(cfg.patch * cfg.patch * 3, c)
        self.t_cam = draw(cfg.n_cam_tokens, c)
        self.t_reg_first = draw(cfg.n_reg_tokens, c)
        self.t_reg_rest = draw(cfg.n_reg_tokens, c)
        self.t_agg_target = draw(cfg.n_agg_tokens, c)
        self.t_agg_other = draw(cfg.n_agg_tokens, c)
        self.layers = []
        for _ in range(cfg.n_layers):
            self.layers.append(LayerWeights(
                wq=draw(c, c), wk=draw(c, c), wv=draw(c, c), wo=draw(c, c),
                w1=draw(c, 4 * c), w2=draw(4 * c, c),
                ln1_g=np.ones(c), ln1_b=np.zeros(c),
                ln2_g=np.ones(c), ln2_b=np.zeros(c)))
        self.cam_head = draw(c, 9)
        self._dense_cache: dict[int, np.ndarray] = {}

    def dense_head(self, out_channels: int) -> np.ndarray:
        """(dim, patch^2 * out_channels) weight, lazily drawn per out size."""
        if out_channels not in self._dense_cache:
            cfg = self.config
            rng = SplitMix64(derive_seed(cfg.seed, _DENSE_HEAD_TAG, out_channels))
            n = cfg.dim * cfg.patch * cfg.patch * out_channels
            self._dense_cache[out_channels] = rng.normal_array(n, 0.0, _INIT_STD) \
                .reshape(cfg.dim, cfg.patch * cfg.patch * out_channels)
        return self._dense_cache[out_channels]


@dataclass
class FrameTokens:
    tokens: np.ndarray  # (L_seq, dim)
    frame_index: int
    is_target: bool
    is_first: bool


# ---------------------------------------------------------------------------
# embedding

def positional_encoding_2d(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Sinusoidal 2D encoding, half the channels per axis -> (gh*gw, dim)."""
    half = dim // 2

    def axis_enc(n, d):
        pos = np.arange(n, dtype=np.float64)[:, None]
        freq = np.exp(-math.log(10000.0) * np.arange(0, d, 2, dtype=np.float64) / d)
        ang = pos * freq[None, :]
        out = np.zeros((n, d))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    rows = axis_enc(grid_h, half)          # (gh, half)
    cols = axis_enc(grid_w, half)          # (gw, half)
    enc = np.zeros((grid_h, grid_w, dim))
    enc[:, :, :half] = rows[:, None, :]
    enc[:, :, half:] = cols[None, :, :]
    return enc.reshape(grid_h * grid_w, dim)


def patchify(image: np.ndarray, bank: TokenBank) -> np.ndarray:
    """Image (H, W, 3) -> (K, dim) patch tokens with positional encoding."""
    cfg = bank.config
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch("image must be (H, W, 3)")
    h, w, _ = img.shape
    p = cfg.patch
    if h % p or w % p:
        raise IndivisibleResolution(f"{h}x{w} not divisible by patch {p}")
    gh, gw = h // p, w // p
    blocks = img.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p * 3)
    return blocks @ bank.patch_proj + positional_encoding_2d(gh, gw, cfg.dim)


def assemble(patch_tokens: list[np.ndarray], target: int, bank: TokenBank) -> list[FrameTokens]:
    """Prefix each frame's patch tokens with its special-token sets.

    The target frame receives the target aggregation set, all others the
    shared set; frame 0 receives the first-frame registration set. Under
    "add" fusion the mean aggregation token is added to every patch token
    instead of being concatenated.
    """
    n = len(patch_tokens)
    if not (0 <= target < n):
        raise TargetOutOfRange(f"target {target} outside 0..{n - 1}")
    cfg = bank.config
    frames = []
    for i, pt in enumerate(patch_tokens):
        reg = bank.t_reg_first if i == 0 else bank.t_reg_rest
        agg = bank.t_agg_target if i == target else bank.t_agg_other
        if cfg.fusion == "concatenate":
            tokens = np.concatenate([bank.t_cam, reg, agg, pt], axis=0)
        else:
            tokens = np.concatenate([bank.t_cam, reg, pt + agg.mean(axis=0)], axis=0)
        frames.append(FrameTokens(tokens=tokens, frame_index=i,
                                  is_target=(i == target), is_first=(i == 0)))
    return frames


# ---------------------------------------------------------------------------
# attention trunk

def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + _LN_EPS) * g + b


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _self_attention(x: np.ndarray, lw: LayerWeights, n_heads: int, stats=None) -> np.ndarray:
    """Multi-head self-attention over a batch of sequences (B, L, C)."""
    b, l, c = x.shape
    d = c // n_heads
    q = (x @ lw.wq).reshape(b, l, n_heads, d).transpose(0, 2, 1, 3)
    k = (x @ lw.wk).reshape(b, l, n_heads, d).transpose(0, 2, 1, 3)
    v = (x @ lw.wv).reshape(b, l, n_heads, d).transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    if stats is not None:
        stats.append(w.sum(axis=-1).reshape(-1))
    out = (w @ v).transpose(0, 2, 1, 3).reshape(b, l, c)
    return out @ lw.wo


def attention_layer(frames: list[FrameTokens], lw: LayerWeights, scope: str,
                    n_heads: int, stats=None) -> list[FrameTokens]:
    """One pre-norm block (attention + MLP) at frame or global scope."""
    if scope not in ("frame", "global"):
        raise ValueError("scope must be 'frame' or 'global'")
    x = np.stack([f.tokens for f in frames])       # (N, L, C)
    n, l, c = x.shape
    if scope == "global":
        x = x.reshape(1, n * l, c)
    x = x + _self_attention(_layer_norm(x, lw.ln1_g, lw.ln1_b), lw, n_heads, stats)
    h = _gelu(_layer_norm(x, lw.ln2_g, lw.ln2_b) @ lw.w1)
    x = x + h @ lw.w2
    x = x.reshape(n, l, c)
    return [FrameTokens(tokens=x[i], frame_index=f.frame_index,
                        is_target=f.is_target, is_first=f.is_first)
            for i, f in enumerate(frames)]


@dataclass
class ForwardResult:
    frames: list[FrameTokens]          # final token sequences
    cam_features: np.ndarray           # (N, n_cam, dim)
    patch_features: np.ndarray         # (N, K, dim)
    softmax_row_sums: list[np.ndarray] | None = None


class AggregationFormer:
    """Bank-holding wrapper so repeated forwards reuse the seeded weights."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.bank = TokenBank(config)

    def forward(self, images, target: int, collect_stats: bool = False) -> ForwardResult:
        cfg = self.config
        imgs = [np.asarray(im, dtype=np.float64) for im in images]
        if any(im.shape != imgs[0].shape for im in imgs):
            raise ShapeMismatch("all frames must share one resolution")
        patches = [patchify(im, self.bank) for im in imgs]
        frames = assemble(patches, target, self.bank)
        stats = [] if collect_stats else None
        for li, lw in enumerate(self.bank.layers):
            scope = "frame" if li % 2 == 0 else "global"
            frames = attention_layer(frames, lw, scope, cfg.n_heads, stats)

        k = patches[0].shape[0]
        n_prefix = cfg.n_cam_tokens + cfg.n_reg_tokens \
            + (cfg.n_agg_tokens if cfg.fusion == "concatenate" else 0)
        cam = np.stack([f.tokens[:cfg.n_cam_tokens] for f in frames])
        patch = np.stack([f.tokens[n_prefix:n_prefix + k] for f in frames])
        return ForwardResult(frames=frames, cam_features=cam,
                             patch_features=patch, softmax_row_sums=stats)

    # -- heads ------------------------------------------------------------

    def head_camera(self, cam_features: np.ndarray) -> np.ndarray:
        """Camera token features -> decodable 9-vectors, one per frame.

        Aggregation/registration tokens never reach the heads; only the
        first camera token feeds this map.
        """
        feats = np.asarray(cam_features, dtype=np.float64)
        single = feats.ndim == 2
        if single:
            feats = feats[None]
        raw = feats[:, 0, :] @ self.bank.cam_head     # (N, 9)
        out = raw.copy()
        for i in range(len(out)):
            qn = np.linalg.norm(out[i, :4])
            out[i, :4] = np.array([1.0, 0.0, 0.0, 0.0]) if qn < 1e-12 else out[i, :4] / qn
        with np.errstate(over="ignore"):
            fov = math.pi / (1.0 + np.exp(-raw[:, 7:9]))
        out[:, 7:9] = np.clip(fov, 1e-6, math.pi - 1e-6)
        return out[0] if single else out

    def head_dense(self, patch_features: np.ndarray, height: int, width: int,
                   out_channels: int) -> np.ndarray:
        """Patch token features (K, dim) -> (H, W, out_channels) map.

        Each patch token maps linearly to its patch^2 * out values; blocks
        are placed back on the patch grid. out=3 plays the role of a point
        head, out=2 a depth+uncertainty head.
        """
        cfg = self.config
        p = cfg.patch
        feats = np.asarray(patch_features, dtype=np.float64)
        if height % p or width % p:
            raise IndivisibleResolution(f"{height}x{width} not divisible by patch {p}")
        gh, gw = height // p, width // p
        if feats.ndim != 2 or feats.shape[0] != gh * gw or feats.shape[1] != cfg.dim:
            raise ShapeMismatch("patch features must be (K, dim) matching H, W, patch")
        flat = feats @ self.bank.dense_head(out_channels)  # (K, p*p*out)
        blocks = flat.reshape(gh, gw, p, p, out_channels)
        return blocks.transpose(0, 2, 1, 3, 4).reshape(height, width, out_channels)


def forward(images, target: int, config: ModelConfig,
            collect_stats: bool = False) -> ForwardResult:
    """Convenience one-shot forward; builds the token bank from the config."""
    return AggregationFormer(config).forward(images, target, collect_stats)
