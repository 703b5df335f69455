"""The 13 temporal fusion heads.

Each head maps the token embeddings of one clip, ``[T frames, N tokens, D
dims]``, to a single feature vector consumed by the probe. Families:

* pooling: mean / per-dim max over frame descriptors (the CLS token when
  the backbone provides one, else the token mean of the frame). The
  ``*_relu`` variants share the pooling forward and differ only in the
  probe head.
* attention: one pre-norm transformer block over all tokens or the CLS
  sequence, pooled back to a vector; a weighted variant that reuses the
  attention matrix as token importances; cross-attention from a single
  learnable query.
* sequence models: LSTM (final hidden state) and a dilated causal TCN
  (last time step of the top level).

Attention output projections and the final feed-forward layer initialize
to zero, so every attention block is the identity map at construction and
the attention heads reproduce their pooling counterparts bit-for-bit.
Learnable per-frame position embeddings (also zero at init) are added to
every token of a frame before the block when ``use_positions`` is on.

Heads are deterministic given (config seed, input) and immutable during
evaluation; the trainer owns parameter updates between steps.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .store import select_tokens

KINDS = (
    "avg_pool",
    "max_pool",
    "avg_pool_relu",
    "max_pool_relu",
    "self_attn_all_avg",
    "self_attn_all_max",
    "self_attn_cls_avg",
    "self_attn_cls_max",
    "weighted_self_attn",
    "cross_attn_all",
    "cross_attn_cls",
    "lstm",
    "tcn",
)

ATTENTION_KINDS = (
    "self_attn_all_avg",
    "self_attn_all_max",
    "self_attn_cls_avg",
    "self_attn_cls_max",
    "weighted_self_attn",
    "cross_attn_all",
    "cross_attn_cls",
)

RELU_PROBE_KINDS = ("avg_pool_relu", "max_pool_relu")


class ConfigError(ValueError):
    pass


@dataclass
class FusionHeadConfig:
    """Which fusion mechanism to build, plus its hyperparameters."""

    kind: str
    model_dim: int
    num_heads: int = 8
    hidden_dim: int = 0  # lstm/tcn width; 0 means model_dim
    ff_mult: int = 4
    depth: int = 1  # attention blocks stacked
    tcn_levels: int = 3
    tcn_kernel: int = 3
    use_positions: bool = True
    t_max: int = 64
    attn_pool_scope: str = "frames"  # 'frames': pool frame descriptors; 'tokens': pool all outputs
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown fusion kind {self.kind!r}")
        if self.kind in ATTENTION_KINDS and self.model_dim % self.num_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.attn_pool_scope not in ("frames", "tokens"):
            raise ConfigError(f"unknown attn_pool_scope {self.attn_pool_scope!r}")

    @property
    def lstm_tcn_dim(self):
        return self.hidden_dim or self.model_dim

    @property
    def out_dim(self):
        if self.kind in ("lstm", "tcn"):
            return self.lstm_tcn_dim
        return self.model_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def _kaiming(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _ParamSet:
    """Ordered named parameters with a weight-decay exemption list."""

    def __init__(self, dtype):
        self.dtype = dtype
        self.params = {}
        self.no_decay = set()

    def add(self, name, array, decay=True):
        t = ad.Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True, dtype=self.dtype)
        self.params[name] = t
        if not decay:
            self.no_decay.add(name)
        return t


def _layer_norm(x, gain, bias, eps=1e-5):
    """Pre-normalization over the last axis."""
    d = x.shape[-1]
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = ad.add(x, ad.scale(ad.expand(mu, len(x.shape) - 1, d), -1.0))
    var = ad.mean(ad.mul(xc, xc), axis=-1, keepdims=True)
    inv = ad.power(ad.shift(var, eps), -0.5)
    y = ad.mul(xc, ad.expand(inv, len(x.shape) - 1, d))
    return ad.add(ad.mul(y, gain), bias)


class AttentionBlock:
    """Single pre-norm transformer encoder block (attention + 2-layer FF).

    The attention output projection and the second feed-forward layer are
    zero at default init, making the block the identity map through its
    residual paths. ``forward`` returns (output, attention weights
    [heads, queries, keys]); every attention row sums to 1.
    """

    def __init__(self, cfg, pset, rng, prefix, cross=False, randomize=False):
        d = cfg.model_dim
        f = cfg.ff_mult * d
        self.cfg = cfg
        self.cross = cross
        add = pset.add
        self.ln1_g = add(f"{prefix}.ln1.gain", np.ones(d), decay=False)
        self.ln1_b = add(f"{prefix}.ln1.bias", np.zeros(d), decay=False)
        self.wq = add(f"{prefix}.attn.wq", _kaiming(rng, (d, d), d))
        self.wk = add(f"{prefix}.attn.wk", _kaiming(rng, (d, d), d))
        self.wv = add(f"{prefix}.attn.wv", _kaiming(rng, (d, d), d))
        wo = _kaiming(rng, (d, d), d) if randomize else np.zeros((d, d))
        self.wo = add(f"{prefix}.attn.wo", wo)
        self.ln2_g = add(f"{prefix}.ln2.gain", np.ones(d), decay=False)
        self.ln2_b = add(f"{prefix}.ln2.bias", np.zeros(d), decay=False)
        self.ff1_w = add(f"{prefix}.ff1.weight", _kaiming(rng, (d, f), d))
        self.ff1_b = add(f"{prefix}.ff1.bias", np.zeros(f), decay=False)
        ff2 = _kaiming(rng, (f, d), f) if randomize else np.zeros((f, d))
        self.ff2_w = add(f"{prefix}.ff2.weight", ff2)
        self.ff2_b = add(f"{prefix}.ff2.bias", np.zeros(d), decay=False)
        if cross:
            self.query = add(f"{prefix}.attn.query", _kaiming(rng, (1, d), d))

    def forward(self, x):
        """x: [L, D] tokens. Self-attention unless built cross, where the
        learnable query attends over x."""
        d = self.cfg.model_dim
        h = self.cfg.num_heads
        dh = d // h
        normed = _layer_norm(x, self.ln1_g, self.ln1_b)
        queries = self.query if self.cross else normed
        lq = queries.shape[0]
        lk = normed.shape[0]

        def split_heads(t, length):
            return ad.transpose(ad.reshape(t, (length, h, dh)), (1, 0, 2))

        q = split_heads(ad.matmul(queries, self.wq), lq)
        k = split_heads(ad.matmul(normed, self.wk), lk)
        v = split_heads(ad.matmul(normed, self.wv), lk)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.transpose(ad.matmul(attn, v), (1, 0, 2))
        merged = ad.reshape(ctx, (lq, d))
        residual = self.query if self.cross else x
        h2 = ad.add(residual, ad.matmul(merged, self.wo))
        ff_in = _layer_norm(h2, self.ln2_g, self.ln2_b)
        ff = ad.matmul(ad.relu(ad.add(ad.matmul(ff_in, self.ff1_w), self.ff1_b)), self.ff2_w)
        out = ad.add(h2, ad.add(ff, self.ff2_b))
        return out, attn


def frame_descriptors(tokens, cls_index):
    """[T, N, D] -> [T, D]: the CLS token per frame when present, else the
    per-frame token mean."""
    t, n, d = tokens.shape
    if cls_index is not None:
        return ad.reshape(ad.narrow(tokens, 1, cls_index, 1), (t, d))
    return ad.mean(tokens, axis=1)


def _pool(x, pool, axis=0):
    if pool == "avg":
        return ad.mean(x, axis=axis)
    if pool == "max":
        return ad.tmax(x, axis=axis)
    raise ConfigError(f"unknown pool {pool!r}")


class FusionHead:
    """A built fusion mechanism with its learnable parameters.

    ``randomize_init=True`` replaces the zero-initialized projections with
    random values; gradient checks use it so no parameter sits at an
    exactly-zero critical point.
    """

    def __init__(self, cfg, dtype=np.float32, randomize_init=False):
        self.cfg = cfg
        self.kind = cfg.kind
        rng = np.random.default_rng(cfg.seed)
        pset = _ParamSet(dtype)
        self._pset = pset
        d = cfg.model_dim

        if self.kind in ATTENTION_KINDS:
            if cfg.use_positions:
                pos = (
                    rng.normal(0.0, 0.02, size=(cfg.t_max, d))
                    if randomize_init
                    else np.zeros((cfg.t_max, d))
                )
                self.positions = pset.add("positions", pos, decay=False)
            cross = self.kind.startswith("cross_attn")
            self.blocks = [
                AttentionBlock(cfg, pset, rng, f"block{i}", cross=cross and i == 0,
                               randomize=randomize_init)
                for i in range(cfg.depth)
            ]
        elif self.kind == "lstm":
            hd = cfg.lstm_tcn_dim
            self.w_ih = pset.add("lstm.w_ih", _kaiming(rng, (d, 4 * hd), hd))
            self.w_hh = pset.add("lstm.w_hh", _kaiming(rng, (hd, 4 * hd), hd))
            b_ih = _kaiming(rng, (4 * hd,), hd)
            b_ih[hd : 2 * hd] += 1.0  # open forget gates at init
            self.b_ih = pset.add("lstm.b_ih", b_ih, decay=False)
            self.b_hh = pset.add("lstm.b_hh", _kaiming(rng, (4 * hd,), hd), decay=False)
        elif self.kind == "tcn":
            hd = cfg.lstm_tcn_dim
            k = cfg.tcn_kernel
            self.tcn_params = []
            for lvl in range(cfg.tcn_levels):
                c_in = d if lvl == 0 else hd
                level = {
                    "w1": pset.add(f"tcn{lvl}.conv1.weight", _kaiming(rng, (k, c_in, hd), k * c_in)),
                    "b1": pset.add(f"tcn{lvl}.conv1.bias", np.zeros(hd), decay=False),
                    "w2": pset.add(f"tcn{lvl}.conv2.weight", _kaiming(rng, (k, hd, hd), k * hd)),
                    "b2": pset.add(f"tcn{lvl}.conv2.bias", np.zeros(hd), decay=False),
                    "wr": pset.add(f"tcn{lvl}.res.weight", _kaiming(rng, (c_in, hd), c_in)),
                    "br": pset.add(f"tcn{lvl}.res.bias", np.zeros(hd), decay=False),
                }
                self.tcn_params.append(level)
        # pooling kinds have no parameters

    @property
    def params(self):
        return self._pset.params

    @property
    def no_decay(self):
        return self._pset.no_decay

    @property
    def out_dim(self):
        return self.cfg.out_dim

    # ------------------------------------------------------------------

    def fuse(self, clip):
        """TokenClip -> feature Tensor. Clip-level inputs bypass fusion."""
        if clip.is_clip_level:
            return clip_descriptor(clip)
        tokens = ad.Tensor(clip.tokens, dtype=self._pset.dtype)
        return self.forward(tokens, clip.cls_index)

    def fuse_with_info(self, clip):
        if clip.is_clip_level:
            return clip_descriptor(clip), {}
        tokens = ad.Tensor(clip.tokens, dtype=self._pset.dtype)
        return self.forward_with_info(tokens, clip.cls_index)

    def forward(self, tokens, cls_index):
        return self.forward_with_info(tokens, cls_index)[0]

    def forward_with_info(self, tokens, cls_index):
        """tokens: Tensor [T, N, D]. Returns (feature, info); info carries
        the attention matrices and token weights where applicable."""
        kind = self.kind
        if kind in ("avg_pool", "avg_pool_relu"):
            return _pool(frame_descriptors(tokens, cls_index), "avg"), {}
        if kind in ("max_pool", "max_pool_relu"):
            return _pool(frame_descriptors(tokens, cls_index), "max"), {}
        if kind in ("self_attn_all_avg", "self_attn_all_max"):
            pool = "avg" if kind.endswith("avg") else "max"
            return self._self_attention(tokens, cls_index, "all", pool)
        if kind in ("self_attn_cls_avg", "self_attn_cls_max"):
            pool = "avg" if kind.endswith("avg") else "max"
            return self._self_attention(tokens, cls_index, "cls", pool)
        if kind == "weighted_self_attn":
            return self._weighted_self_attention(tokens, cls_index)
        if kind in ("cross_attn_all", "cross_attn_cls"):
            mode = "all" if kind.endswith("all") else "cls"
            return self._cross_attention(tokens, cls_index, mode)
        if kind == "lstm":
            return self._lstm(tokens, cls_index), {}
        if kind == "tcn":
            return self._tcn(tokens, cls_index), {}
        raise ConfigError(f"unknown fusion kind {kind!r}")

    # ------------------------------------------------------------------

    def _selected(self, tokens, cls_index, mode):
        """Token selection plus optional per-frame position embeddings."""
        t, n, d = tokens.shape
        if mode == "cls":
            if cls_index is None:
                from .store import MissingCLSError

                raise MissingCLSError("CLS tokens requested but the clip has none")
            sel = ad.narrow(tokens, 1, cls_index, 1)
            n = 1
        else:
            sel = tokens
        if self.cfg.use_positions:
            if t > self.cfg.t_max:
                raise ConfigError(f"clip has {t} frames but position table holds {self.cfg.t_max}")
            pos = ad.reshape(ad.narrow(self.positions, 0, 0, t), (t, 1, d))
            sel = ad.add(sel, ad.expand(pos, 1, n)) if n > 1 else ad.add(sel, pos)
        return sel, n

    def _run_blocks(self, x):
        attns = []
        for block in self.blocks:
            x, attn = block.forward(x)
            attns.append(attn)
        return x, attns

    def _self_attention(self, tokens, cls_index, mode, pool):
        t, _, d = tokens.shape
        sel, n = self._selected(tokens, cls_index, mode)
        x = ad.reshape(sel, (t * n, d))
        out, attns = self._run_blocks(x)
        if self.cfg.attn_pool_scope == "tokens":
            feature = _pool(out, pool)
        else:
            frames = ad.reshape(out, (t, n, d))
            desc_cls = cls_index if mode == "all" else 0
            feature = _pool(frame_descriptors(frames, desc_cls), pool)
        return feature, {"attention": attns}

    def _weighted_self_attention(self, tokens, cls_index):
        t, _, d = tokens.shape
        sel, _ = self._selected(tokens, cls_index, "cls")
        x = ad.reshape(sel, (t, d))
        out, attns = self._run_blocks(x)
        # importance of token t = attention it receives, averaged over heads
        # and queries; rows of the attention matrix sum to 1, so w does too
        w = ad.mean(ad.mean(attns[-1], axis=0), axis=0)
        feature = ad.reshape(ad.matmul(ad.reshape(w, (1, t)), out), (d,))
        return feature, {"attention": attns, "token_weights": w}

    def _cross_attention(self, tokens, cls_index, mode):
        t, _, d = tokens.shape
        sel, n = self._selected(tokens, cls_index, mode)
        x = ad.reshape(sel, (t * n, d))
        out, attns = self._run_blocks(x)
        return ad.reshape(out, (d,)), {"attention": attns}

    def _cls_sequence(self, tokens, cls_index):
        t, _, d = tokens.shape
        sel = select_tokens_tensor(tokens, cls_index)
        return ad.reshape(sel, (t, d))

    def _lstm(self, tokens, cls_index):
        """Single-layer LSTM over the CLS sequence; returns h_T."""
        seq = self._cls_sequence(tokens, cls_index)
        t, d = seq.shape
        hd = self.cfg.lstm_tcn_dim
        dtype = self._pset.dtype
        h = ad.Tensor(np.zeros((1, hd), dtype=dtype))
        c = ad.Tensor(np.zeros((1, hd), dtype=dtype))
        for step in range(t):
            x_t = ad.narrow(seq, 0, step, 1)
            z = ad.add(
                ad.add(ad.matmul(x_t, self.w_ih), ad.matmul(h, self.w_hh)),
                ad.add(self.b_ih, self.b_hh),
            )
            i = ad.sigmoid(ad.narrow(z, 1, 0, hd))
            f = ad.sigmoid(ad.narrow(z, 1, hd, hd))
            g = ad.tanh(ad.narrow(z, 1, 2 * hd, hd))
            o = ad.sigmoid(ad.narrow(z, 1, 3 * hd, hd))
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
        return ad.reshape(h, (hd,))

    def _causal_conv(self, x, weight, bias, dilation):
        """Dilated causal 1-d conv: x [T, C_in], weight [k, C_in, C_out]."""
        t = x.shape[0]
        k = weight.shape[0]
        dtype = self._pset.dtype
        acc = None
        for tap in range(k):
            s = (k - 1 - tap) * dilation
            if s == 0:
                shifted = x
            elif s >= t:
                shifted = ad.Tensor(np.zeros((t, x.shape[1]), dtype=dtype))
            else:
                pad = ad.Tensor(np.zeros((s, x.shape[1]), dtype=dtype))
                shifted = ad.concat([pad, ad.narrow(x, 0, 0, t - s)], axis=0)
            term = ad.matmul(shifted, ad.reshape(ad.narrow(weight, 0, tap, 1), weight.shape[1:]))
            acc = term if acc is None else ad.add(acc, term)
        return ad.add(acc, bias)

    def _tcn(self, tokens, cls_index):
        """Stacked dilated causal residual levels; returns the last step."""
        x = self._cls_sequence(tokens, cls_index)
        t = x.shape[0]
        if t < 1:
            raise ad.ShapeError("tcn requires at least one frame")
        for lvl, p in enumerate(self.tcn_params):
            dilation = 2 ** lvl
            y = ad.relu(self._causal_conv(x, p["w1"], p["b1"], dilation))
            y = ad.relu(self._causal_conv(y, p["w2"], p["b2"], dilation))
            res = ad.add(ad.matmul(x, p["wr"]), p["br"])
            x = ad.relu(ad.add(y, res))
        hd = self.cfg.lstm_tcn_dim
        return ad.reshape(ad.narrow(x, 0, t - 1, 1), (hd,))


def select_tokens_tensor(tokens, cls_index):
    """Tensor twin of :func:`fuseprobe.store.select_tokens` (cls mode)."""
    if cls_index is None:
        from .store import MissingCLSError

        raise MissingCLSError("CLS tokens requested but the clip has none")
    return ad.narrow(tokens, 1, cls_index, 1)


def clip_descriptor(clip):
    """Feature for clip-level embeddings: the stored clip's descriptor
    (CLS token when present, else token mean); fusion is bypassed."""
    tokens = ad.Tensor(clip.tokens)
    t, n, d = tokens.shape
    desc = frame_descriptors(tokens, clip.cls_index)
    return ad.reshape(ad.narrow(desc, 0, 0, 1), (d,))


def fuse(clip, cfg):
    """One-shot fuse: build the head for ``cfg`` and run it on ``clip``."""
    if clip.is_clip_level:
        return clip_descriptor(clip)
    return FusionHead(cfg).fuse(clip)
