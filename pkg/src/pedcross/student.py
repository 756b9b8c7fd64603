"""Lightweight box-only student networks.

The student consumes nothing but the normalized pedestrian box track: an
outer-scaling embedding lifts [B,N,4] to [B,N,4,64], a small interchangeable
backbone summarizes the sequence, and a classifier head structurally
matching the teacher's produces crossing logits. Features are softplus
rectified so the feature-distillation loss stays inside its log1p domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import Classifier, LayerNorm, Linear, zeros_param
from .rng import named_stream
from .teacher import FEATURE_DIM

VARIANTS = ("attn_lite", "residual_mlp", "sep_conv1d")

EMBED_DIM = 64
MODEL_DIM = 32


@dataclass
class StudentOutput:
    features: Tensor  # h_S, [b,128], componentwise >= 0
    logits: Tensor  # z_S, [b,2]
    probs: Tensor  # o = softmax(z_S, T=1), [b,2]


class AttnLiteBackbone:
    """Two pre-norm single-head self-attention blocks over per-frame tokens."""

    def __init__(self, n_frames, rng, dtype):
        self.proj_in = Linear(EMBED_DIM, MODEL_DIM, rng, dtype)
        self.blocks = []
        for _ in range(2):
            self.blocks.append(
                {
                    "ln": LayerNorm(MODEL_DIM, dtype),
                    "wq": Linear(MODEL_DIM, MODEL_DIM, rng, dtype),
                    "wk": Linear(MODEL_DIM, MODEL_DIM, rng, dtype),
                    "wv": Linear(MODEL_DIM, MODEL_DIM, rng, dtype),
                    "wo": Linear(MODEL_DIM, MODEL_DIM, rng, dtype),
                }
            )
        self.ln_out = LayerNorm(MODEL_DIM, dtype)
        # softmaxed temporal readout; zeros = uniform weighting at init
        self.alpha = zeros_param((n_frames,), dtype)
        self.scale = 1.0 / np.sqrt(MODEL_DIM)

    def attention_matrix(self, tokens: Tensor, block_index=0) -> np.ndarray:
        """Row-stochastic attention weights of one block (diagnostic)."""
        with ad.no_grad():
            x = self.proj_in.forward(tokens)
            for blk in self.blocks[:block_index]:
                x = self._block(blk, x)
            blk = self.blocks[block_index]
            h = blk["ln"].forward(x)
            q, k = blk["wq"].forward(h), blk["wk"].forward(h)
            scores = ad.bmm(q, ad.transpose(k, (0, 2, 1))) * self.scale
            return ad.softmax_temp(scores, 1.0, axis=-1).data

    def _block(self, blk, x: Tensor) -> Tensor:
        h = blk["ln"].forward(x)
        q, k, v = blk["wq"].forward(h), blk["wk"].forward(h), blk["wv"].forward(h)
        scores = ad.bmm(q, ad.transpose(k, (0, 2, 1))) * self.scale
        att = ad.softmax_temp(scores, 1.0, axis=-1)
        return ad.add(x, blk["wo"].forward(ad.bmm(att, v)))

    def forward(self, tokens: Tensor) -> Tensor:
        x = self.proj_in.forward(tokens)
        for blk in self.blocks:
            x = self._block(blk, x)
        x = self.ln_out.forward(x)
        n = x.shape[1]
        weights = ad.softmax_temp(ad.reshape(self.alpha, (1, n)), 1.0, axis=-1)
        return ad.tsum(ad.mul(x, ad.reshape(weights, (1, n, 1))), axis=1)

    def parameters(self):
        out = self.proj_in.parameters()
        for blk in self.blocks:
            for key in ("ln", "wq", "wk", "wv", "wo"):
                out += blk[key].parameters()
        return out + self.ln_out.parameters() + [self.alpha]

    def named_parameters(self, prefix):
        out = self.proj_in.named_parameters(f"{prefix}.proj_in")
        for i, blk in enumerate(self.blocks):
            for key in ("ln", "wq", "wk", "wv", "wo"):
                out.update(blk[key].named_parameters(f"{prefix}.block{i}.{key}"))
        out.update(self.ln_out.named_parameters(f"{prefix}.ln_out"))
        out[f"{prefix}.alpha"] = self.alpha
        return out


class ResidualMLPBackbone:
    """Four residual FC blocks applied per frame, linear temporal readout."""

    def __init__(self, n_frames, rng, dtype):
        self.proj_in = Linear(EMBED_DIM, MODEL_DIM, rng, dtype, init="he")
        self.blocks = [Linear(MODEL_DIM, MODEL_DIM, rng, dtype, init="he") for _ in range(4)]
        self.alpha = Tensor(np.full(n_frames, 1.0 / n_frames), requires_grad=True, dtype=dtype)

    def forward(self, tokens: Tensor) -> Tensor:
        x = ad.relu(self.proj_in.forward(tokens))
        for blk in self.blocks:
            x = ad.add(x, ad.relu(blk.forward(x)))
        n = x.shape[1]
        return ad.tsum(ad.mul(x, ad.reshape(self.alpha, (1, n, 1))), axis=1)

    def parameters(self):
        out = self.proj_in.parameters()
        for blk in self.blocks:
            out += blk.parameters()
        return out + [self.alpha]

    def named_parameters(self, prefix):
        out = self.proj_in.named_parameters(f"{prefix}.proj_in")
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_parameters(f"{prefix}.block{i}"))
        out[f"{prefix}.alpha"] = self.alpha
        return out


class SepConv1dBackbone:
    """Two depthwise-separable temporal convolution stages."""

    def __init__(self, n_frames, rng, dtype):
        self.dw1 = Tensor(rng.normal(0, 0.4, (3, EMBED_DIM)), requires_grad=True, dtype=dtype)
        self.dw1_bias = zeros_param((EMBED_DIM,), dtype)
        self.pw1 = Linear(EMBED_DIM, MODEL_DIM, rng, dtype, init="he")
        self.dw2 = Tensor(rng.normal(0, 0.4, (3, MODEL_DIM)), requires_grad=True, dtype=dtype)
        self.dw2_bias = zeros_param((MODEL_DIM,), dtype)
        self.pw2 = Linear(MODEL_DIM, MODEL_DIM, rng, dtype, init="he")
        self.alpha = Tensor(np.full(n_frames, 1.0 / n_frames), requires_grad=True, dtype=dtype)

    @staticmethod
    def _depthwise(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
        b, n, d = x.shape
        zero = Tensor(np.zeros((b, 1, d)), dtype=x.dtype)
        xp = ad.concat([zero, x, zero], axis=1)
        taps = []
        for k in range(3):
            w_k = ad.reshape(weights[k], (1, 1, d))
            taps.append(ad.mul(xp[:, k : k + n, :], w_k))
        return ad.add(ad.add(ad.add(taps[0], taps[1]), taps[2]), bias)

    def forward(self, tokens: Tensor) -> Tensor:
        x = self._depthwise(tokens, self.dw1, self.dw1_bias)
        x = ad.relu(self.pw1.forward(x))
        x = self._depthwise(x, self.dw2, self.dw2_bias)
        x = ad.relu(self.pw2.forward(x))
        n = x.shape[1]
        return ad.tsum(ad.mul(x, ad.reshape(self.alpha, (1, n, 1))), axis=1)

    def parameters(self):
        return (
            [self.dw1, self.dw1_bias]
            + self.pw1.parameters()
            + [self.dw2, self.dw2_bias]
            + self.pw2.parameters()
            + [self.alpha]
        )

    def named_parameters(self, prefix):
        out = {f"{prefix}.dw1": self.dw1, f"{prefix}.dw1_bias": self.dw1_bias}
        out.update(self.pw1.named_parameters(f"{prefix}.pw1"))
        out[f"{prefix}.dw2"] = self.dw2
        out[f"{prefix}.dw2_bias"] = self.dw2_bias
        out.update(self.pw2.named_parameters(f"{prefix}.pw2"))
        out[f"{prefix}.alpha"] = self.alpha
        return out


_BACKBONES = {
    "attn_lite": AttnLiteBackbone,
    "residual_mlp": ResidualMLPBackbone,
    "sep_conv1d": SepConv1dBackbone,
}


class StudentNet:
    """Box-only crossing predictor; forward admits nothing but the track."""

    def __init__(self, variant="attn_lite", n_frames=16, seed=0, dtype=np.float32):
        if variant not in _BACKBONES:
            raise ConfigError(f"unknown student variant {variant!r}; choose one of {VARIANTS}")
        self.variant = variant
        self.n_frames = int(n_frames)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = named_stream(seed, "init", "student", variant)
        self.embed_weight = Tensor(rng.normal(0, 1.0, (4, EMBED_DIM)), requires_grad=True, dtype=dtype)
        self.embed_bias = Tensor(np.zeros(()), requires_grad=True, dtype=dtype)
        self.backbone = _BACKBONES[variant](self.n_frames, rng, dtype)
        self.proj = Linear(MODEL_DIM, FEATURE_DIM, rng, dtype)
        self.classifier = Classifier(rng, dtype, dropout_p=0.0)

    def embed_track(self, boxes) -> Tensor:
        """Outer-scaling embedding: out[t,j,k] = B[t,j] * w[j,k] + b."""
        t = boxes if isinstance(boxes, Tensor) else Tensor(np.asarray(boxes), dtype=self.dtype)
        if t.ndim == 2:
            t = ad.reshape(t, (1,) + t.shape)
        if t.ndim != 3 or t.shape[-1] != 4:
            raise DimensionError(f"box track must be [b,N,4], got {t.shape}")
        b, n, _ = t.shape
        lifted = ad.reshape(t, (b, n, 4, 1))
        w = ad.reshape(self.embed_weight, (1, 1, 4, EMBED_DIM))
        return ad.add(ad.mul(lifted, w), self.embed_bias)

    def backbone_forward(self, embedded: Tensor) -> Tensor:
        tokens = ad.tmean(embedded, axis=2)  # average over the 4 coordinate channels
        return self.backbone.forward(tokens)

    def forward(self, boxes) -> StudentOutput:
        embedded = self.embed_track(boxes)
        raw = self.backbone_forward(embedded)
        h = ad.softplus(self.proj.forward(raw))
        z = self.classifier.forward(h)
        o = ad.softmax_temp(z, 1.0, axis=-1)
        return StudentOutput(features=h, logits=z, probs=o)

    def parameters(self):
        return (
            [self.embed_weight, self.embed_bias]
            + self.backbone.parameters()
            + self.proj.parameters()
            + self.classifier.parameters()
        )

    def named_parameters(self):
        out = {"embed.weight": self.embed_weight, "embed.bias": self.embed_bias}
        out.update(self.backbone.named_parameters("backbone"))
        out.update(self.proj.named_parameters("proj"))
        out.update(self.classifier.named_parameters("classifier"))
        return out

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))
