"""Parameterized layers built on the autodiff core."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def he_normal(rng, shape, fan_in, dtype):
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True, dtype=dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype):
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


class Linear:
    """Affine map over the last axis; higher-rank inputs are flattened."""

    def __init__(self, n_in, n_out, rng, dtype, init="glorot"):
        if init == "he":
            self.weight = he_normal(rng, (n_in, n_out), n_in, dtype)
        else:
            self.weight = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.bias = zeros_param((n_out,), dtype)
        self.n_in = n_in
        self.n_out = n_out

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return ad.add(ad.matmul(x, self.weight), self.bias)
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, self.n_in))
        out = ad.add(ad.matmul(flat, self.weight), self.bias)
        return ad.reshape(out, lead + (self.n_out,))

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class Conv3dLayer:
    def __init__(self, c_in, c_out, rng, dtype, ksize=3, stride=1, padding=1):
        kt = kh = kw = ksize
        fan_in = kt * kh * kw * c_in
        self.kernels = he_normal(rng, (kt, kh, kw, c_in, c_out), fan_in, dtype)
        self.bias = zeros_param((c_out,), dtype)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = ad.conv3d(x, self.kernels, stride=self.stride, padding=self.padding)
        return ad.add(out, self.bias)

    def parameters(self):
        return [self.kernels, self.bias]

    def named_parameters(self, prefix):
        return {f"{prefix}.kernels": self.kernels, f"{prefix}.bias": self.bias}


class LayerNorm:
    def __init__(self, dim, dtype, eps=1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True, dtype=dtype)
        self.beta = zeros_param((dim,), dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = ad.tmean(x, axis=-1, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
        std = ad.sqrt(ad.add(var, Tensor(np.asarray(self.eps), dtype=x.dtype)))
        return ad.add(ad.mul(ad.div(centered, std), self.gamma), self.beta)

    def parameters(self):
        return [self.gamma, self.beta]

    def named_parameters(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class Classifier:
    """GAP + two fully-connected layers producing 2-d crossing logits.

    GAP reduces any spatial axes between batch and feature; on vector
    features it is the identity. Dropout (when configured) follows each FC
    during training.
    """

    def __init__(self, rng, dtype, n_in=128, n_hidden=64, dropout_p=0.0):
        self.fc1 = Linear(n_in, n_hidden, rng, dtype, init="he")
        self.fc2 = Linear(n_hidden, 2, rng, dtype)
        self.dropout_p = dropout_p

    def forward(self, h: Tensor, mode="eval", rng=None) -> Tensor:
        if h.ndim > 2:
            h = ad.global_avg_pool(h, axes=tuple(range(1, h.ndim - 1)))
        z = ad.relu(self.fc1.forward(h))
        if self.dropout_p > 0:
            z = ad.dropout(z, self.dropout_p, mode, rng)
        z = self.fc2.forward(z)
        if self.dropout_p > 0:
            z = ad.dropout(z, self.dropout_p, mode, rng)
        return z

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()

    def named_parameters(self, prefix):
        out = self.fc1.named_parameters(f"{prefix}.fc1")
        out.update(self.fc2.named_parameters(f"{prefix}.fc2"))
        return out


def parameter_count(params) -> int:
    return int(sum(p.data.size for p in params))
