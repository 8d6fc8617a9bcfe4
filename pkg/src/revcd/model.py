"""The conditional denoiser and its classifier head.

A dense U-Net: encoder and mirrored decoder blocks of linear layers with
batch normalization and ReLU. Time and condition embeddings are fused
asymmetrically — the encoder multiplies in the time projection and adds
the condition projection, the decoder swaps those roles. The condition is
a visual feature vector run through one multi-head self-attention block;
masked rows fall back to a learned null embedding for classifier-free
guidance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import BatchNormState, Tensor, as_tensor, batch_norm, parameter
from .rng import RngState, dropout_mask
from .schedule import TimeEmbeddingSpec, time_embedding

LN_EPS = 1e-5


@dataclass
class DenoiserConfig:
    d_s: int
    d_x: int
    n_seen_classes: int
    hidden: tuple[int, ...] = (512, 256, 128)
    d_t: int = 128
    d_c: int = 64
    n_heads: int = 4
    n_tokens: int = 16
    ff_mult: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.d_t % 2 != 0:
            raise ValueError("time embedding dimension must be even")
        if self.d_x % self.n_tokens != 0:
            raise ValueError("d_x must be divisible by n_tokens")
        if (self.d_x // self.n_tokens) % self.n_heads != 0:
            raise ValueError("token width must be divisible by n_heads")

    @property
    def token_width(self) -> int:
        return self.d_x // self.n_tokens

    def to_dict(self) -> dict:
        return {
            "d_s": self.d_s, "d_x": self.d_x,
            "n_seen_classes": self.n_seen_classes,
            "hidden": list(self.hidden), "d_t": self.d_t, "d_c": self.d_c,
            "n_heads": self.n_heads, "n_tokens": self.n_tokens,
            "ff_mult": self.ff_mult, "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def _linear_init(rng: RngState, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    scale = np.sqrt(2.0 / fan_in)
    return (rng.normal((fan_in, fan_out)) * scale).astype(dtype)


class Denoiser:
    """Parameters plus forward passes for s_theta and the classifier head."""

    def __init__(self, config: DenoiserConfig, rng: RngState,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.time_spec = TimeEmbeddingSpec.default(config.d_t)
        self.params: dict[str, Tensor] = {}
        self.bn_state: dict[str, BatchNormState] = {}
        self._build(rng)

    # -- construction ---------------------------------------------------

    def _add_linear(self, name: str, fan_in: int, fan_out: int,
                    rng: RngState) -> None:
        self.params[f"{name}/W"] = parameter(
            _linear_init(rng, fan_in, fan_out, self.dtype), dtype=self.dtype)
        self.params[f"{name}/b"] = parameter(
            np.zeros(fan_out, dtype=self.dtype), dtype=self.dtype)

    def _add_block(self, name: str, fan_in: int, width: int,
                   rng: RngState) -> None:
        cfg = self.config
        self._add_linear(name, fan_in, width, rng)
        self.params[f"{name}/bn_gamma"] = parameter(
            np.ones(width, dtype=self.dtype), dtype=self.dtype)
        self.params[f"{name}/bn_beta"] = parameter(
            np.zeros(width, dtype=self.dtype), dtype=self.dtype)
        self.bn_state[name] = BatchNormState(width, dtype=self.dtype)
        self._add_linear(f"{name}/proj_t", cfg.d_t, width, rng)
        self._add_linear(f"{name}/proj_c", cfg.d_c, width, rng)

    def _build(self, rng: RngState) -> None:
        cfg = self.config
        prev = cfg.d_s
        for i, width in enumerate(cfg.hidden):
            self._add_block(f"enc{i}", prev, width, rng)
            prev = width
        for i, width in enumerate(reversed(cfg.hidden[:-1])):
            self._add_block(f"dec{i}", prev, width, rng)
            prev = width
        self._add_linear("out", prev, cfg.d_s, rng)

        tok = cfg.token_width
        for proj in ("Wq", "Wk", "Wv", "Wo"):
            self._add_linear(f"msa/{proj}", tok, tok, rng)
        for ln in ("ln1", "ln2"):
            self.params[f"msa/{ln}_g"] = parameter(
                np.ones(tok, dtype=self.dtype), dtype=self.dtype)
            self.params[f"msa/{ln}_b"] = parameter(
                np.zeros(tok, dtype=self.dtype), dtype=self.dtype)
        self._add_linear("msa/ff1", tok, cfg.ff_mult * tok, rng)
        self._add_linear("msa/ff2", cfg.ff_mult * tok, tok, rng)
        self._add_linear("msa/pool", tok, cfg.d_c, rng)

        self.params["null_cond"] = parameter(
            (rng.normal((cfg.d_c,)) * 0.02).astype(self.dtype), dtype=self.dtype)
        self._add_linear("cls", cfg.d_s, cfg.n_seen_classes, rng)

    # -- small helpers ---------------------------------------------------

    def _linear(self, name: str, h: Tensor) -> Tensor:
        return h @ self.params[f"{name}/W"] + self.params[f"{name}/b"]

    def _layer_norm(self, h: Tensor, name: str) -> Tensor:
        mu = h.mean(axis=-1, keepdims=True)
        var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
        norm = (h - mu) / ((var + LN_EPS) ** 0.5)
        return norm * self.params[f"msa/{name}_g"] + self.params[f"msa/{name}_b"]

    def _maybe_dropout(self, h: Tensor, training: bool,
                       rng: RngState | None) -> Tensor:
        if training and self.config.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an RngState")
            mask = dropout_mask(h.shape, self.config.dropout, rng,
                                dtype=self.dtype)
            return h * mask
        return h

    # -- condition encoder -------------------------------------------------

    def encode_condition(self, x, training: bool = False,
                         rng: RngState | None = None,
                         return_attention: bool = False):
        """Encode visual features into a condition vector via one MSA block."""
        cfg = self.config
        x = as_tensor(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != cfg.d_x:
            raise ValueError(f"expected [b, {cfg.d_x}] features, got {x.shape}")
        b = x.shape[0]
        n, tok, heads = cfg.n_tokens, cfg.token_width, cfg.n_heads
        hd = tok // heads

        tokens = x.reshape(b, n, tok)
        q = self._linear("msa/Wq", tokens)
        k = self._linear("msa/Wk", tokens)
        v = self._linear("msa/Wv", tokens)

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(b, n, heads, hd).transpose((0, 2, 1, 3))

        q, k, v = split_heads(q), split_heads(k), split_heads(v)
        scores = (q @ k.swap_last_axes()) * (1.0 / np.sqrt(hd))
        attn = scores.softmax(axis=-1)
        mixed = (attn @ v).transpose((0, 2, 1, 3)).reshape(b, n, tok)
        mixed = self._linear("msa/Wo", mixed)

        h = self._layer_norm(tokens + mixed, "ln1")
        ff = self._linear("msa/ff2", self._linear("msa/ff1", h).relu())
        h = self._layer_norm(h + ff, "ln2")

        pooled = h.mean(axis=1)
        cond = self._linear("msa/pool", pooled)
        cond = self._maybe_dropout(cond, training, rng)
        if return_attention:
            return cond, attn
        return cond

    def null_condition(self, b: int) -> Tensor:
        return self.params["null_cond"].reshape(1, self.config.d_c) \
            * np.ones((b, 1), dtype=self.dtype)

    def apply_condition_mask(self, cond: Tensor, mask: np.ndarray) -> Tensor:
        """Replace masked rows (mask=1) with the learned null embedding."""
        m = np.asarray(mask, dtype=self.dtype).reshape(-1, 1)
        return cond * (1.0 - m) + self.params["null_cond"] * m

    # -- denoiser -----------------------------------------------------------

    def time_embed(self, t) -> np.ndarray:
        return time_embedding(t, self.time_spec, dtype=self.dtype)

    def denoise(self, s_t, t_emb, cond: Tensor, training: bool = False,
                rng: RngState | None = None) -> Tensor:
        """Predict the clean semantics s0_hat from (s_t, t, condition)."""
        cfg = self.config
        h = as_tensor(s_t, dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != cfg.d_s:
            raise ValueError(f"expected [b, {cfg.d_s}] semantics, got {h.shape}")
        t_emb = as_tensor(t_emb, dtype=self.dtype)

        skips: list[Tensor] = []
        for i in range(len(cfg.hidden)):
            name = f"enc{i}"
            h = self._linear(name, h)
            h = batch_norm(h, self.bn_state[name],
                           self.params[f"{name}/bn_gamma"],
                           self.params[f"{name}/bn_beta"], training)
            h = h.relu()
            # encoder fusion: Hadamard on time, addition on condition
            h = h * self._linear(f"{name}/proj_t", t_emb) \
                + self._linear(f"{name}/proj_c", cond)
            h = self._maybe_dropout(h, training, rng)
            skips.append(h)

        n_dec = len(cfg.hidden) - 1
        for i in range(n_dec):
            name = f"dec{i}"
            h = self._linear(name, h)
            h = batch_norm(h, self.bn_state[name],
                           self.params[f"{name}/bn_gamma"],
                           self.params[f"{name}/bn_beta"], training)
            h = h.relu()
            # decoder fusion: roles reversed for stronger conditioning
            h = h * self._linear(f"{name}/proj_c", cond) \
                + self._linear(f"{name}/proj_t", t_emb)
            h = h + skips[n_dec - 1 - i]
            h = self._maybe_dropout(h, training, rng)

        return self._linear("out", h)

    def classify_head(self, s0_hat) -> Tensor:
        """Affine map from predicted semantics to seen-class logits."""
        return self._linear("cls", as_tensor(s0_hat, dtype=self.dtype))

    def forward(self, s_t, t, x, cond_mask: np.ndarray | None = None,
                training: bool = False, rng: RngState | None = None) -> Tensor:
        """Full pass: encode condition, apply mask, embed time, denoise."""
        cond = self.encode_condition(x, training=training, rng=rng)
        if cond_mask is not None:
            cond = self.apply_condition_mask(cond, cond_mask)
        return self.denoise(s_t, self.time_embed(t), cond,
                            training=training, rng=rng)


def loss_classification(logits: Tensor, y: np.ndarray):
    """Cross entropy: -(1/n) sum_i log softmax(logits_i)[y_i]."""
    y = np.asarray(y, dtype=np.int64)
    n_classes = logits.shape[-1]
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"labels out of range [0, {n_classes})")
    log_probs = logits.log_softmax(axis=-1)
    return -(log_probs.select_columns(y).mean())
