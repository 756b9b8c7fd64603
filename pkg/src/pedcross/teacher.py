"""Multi-modal teacher network.

Four input streams are embedded to 128-d vectors (a 3-layer MLP for the box
track, one weight-shared tiny 3-D convnet for the full-frame, local-context
and motion clips), fused by nested two-column attention cells from global to
local, and classified by a GAP + two-FC head into crossing logits.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import Classifier, Conv3dLayer, Linear, glorot_uniform, zeros_param
from .rng import named_stream

FEATURE_DIM = 128

# stream identifiers: boxes + local context + global context (full frame) + local motion
STREAMS = ("boxes", "local_context", "global_context", "local_motion")


class BoxMLP:
    """Per-frame embedding of (x, y, h, w) rows into 128-d vectors."""

    def __init__(self, rng, dtype):
        self.fc1 = Linear(4, 64, rng, dtype, init="he")
        self.fc2 = Linear(64, 128, rng, dtype, init="he")
        self.fc3 = Linear(128, FEATURE_DIM, rng, dtype)

    def forward(self, boxes: Tensor) -> Tensor:
        h = ad.relu(self.fc1.forward(boxes))
        h = ad.relu(self.fc2.forward(h))
        return self.fc3.forward(h)

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters() + self.fc3.parameters()

    def named_parameters(self, prefix):
        out = {}
        for i, fc in enumerate((self.fc1, self.fc2, self.fc3), start=1):
            out.update(fc.named_parameters(f"{prefix}.fc{i}"))
        return out


class StreamEncoder:
    """Shared clip encoder: three strided 3x3x3 conv blocks, GAP, FC to 128-d.

    All visual streams reference this single instance, so the weight sharing
    is structural. Inputs with fewer than 3 channels are zero-padded.
    """

    def __init__(self, rng, dtype):
        self.conv1 = Conv3dLayer(3, 8, rng, dtype, stride=(1, 2, 2), padding=1)
        self.conv2 = Conv3dLayer(8, 16, rng, dtype, stride=(1, 2, 2), padding=1)
        self.conv3 = Conv3dLayer(16, 32, rng, dtype, stride=(1, 2, 2), padding=1)
        self.fc = Linear(32, FEATURE_DIM, rng, dtype)

    def forward(self, clip: Tensor) -> Tensor:
        if clip.ndim != 5:
            raise DimensionError(f"stream clip must be [B,T,H,W,C], got {clip.shape}")
        h = ad.relu(self.conv1.forward(clip))
        h = ad.relu(self.conv2.forward(h))
        h = ad.relu(self.conv3.forward(h))
        h = ad.global_avg_pool(h, axes=(1, 2, 3))
        return self.fc.forward(h)

    def parameters(self):
        return (
            self.conv1.parameters()
            + self.conv2.parameters()
            + self.conv3.parameters()
            + self.fc.parameters()
        )

    def named_parameters(self, prefix):
        out = {}
        for i, conv in enumerate((self.conv1, self.conv2, self.conv3), start=1):
            out.update(conv.named_parameters(f"{prefix}.conv{i}"))
        out.update(self.fc.named_parameters(f"{prefix}.fc"))
        return out


class AttCell:
    """Two-weight attention over the columns of a [B, dim, K] feature stack.

    The last column is the query: scores are the bilinear form
    last^T W_score columns, softmaxed into a K-vector that mixes the columns;
    the mixed vector is concatenated with the last column and mapped through
    a tanh FC back to dim.
    """

    def __init__(self, dim=FEATURE_DIM, seed=0, dtype=np.float32, name="att"):
        rng = named_stream(seed, "init", name)
        self.w_score = glorot_uniform(rng, (dim, dim), dim, dim, dtype)
        self.w_out = glorot_uniform(rng, (2 * dim, dim), 2 * dim, dim, dtype)
        self.b_out = zeros_param((dim,), dtype)
        self.dim = dim

    def forward(self, f_fuse: Tensor) -> Tensor:
        if f_fuse.ndim != 3 or f_fuse.shape[1] != self.dim:
            raise DimensionError(f"attention stack must be [B,{self.dim},K], got {f_fuse.shape}")
        if f_fuse.shape[2] < 1:
            raise DimensionError("attention stack needs at least one column")
        b, dim, k = f_fuse.shape
        f_last = f_fuse[:, :, -1:]
        query = ad.matmul(ad.reshape(f_last, (b, dim)), self.w_score)
        scores = ad.bmm(ad.reshape(query, (b, 1, dim)), f_fuse)
        weights = ad.softmax_temp(scores, 1.0, axis=-1)
        attended = ad.bmm(f_fuse, ad.transpose(weights, (0, 2, 1)))
        merged = ad.reshape(ad.concat([attended, f_last], axis=1), (b, 2 * dim))
        return ad.tanh(ad.add(ad.matmul(merged, self.w_out), self.b_out))

    def attention_weights(self, f_fuse: Tensor) -> np.ndarray:
        """Column mixing weights (diagnostic; no graph)."""
        with ad.no_grad():
            b, dim, _ = f_fuse.shape
            f_last = f_fuse[:, :, -1:]
            query = ad.matmul(ad.reshape(f_last, (b, dim)), self.w_score)
            scores = ad.bmm(ad.reshape(query, (b, 1, dim)), f_fuse)
            return ad.softmax_temp(scores, 1.0, axis=-1).data[:, 0, :]

    def parameters(self):
        return [self.w_score, self.w_out, self.b_out]

    def named_parameters(self, prefix):
        return {
            f"{prefix}.w_score": self.w_score,
            f"{prefix}.w_out": self.w_out,
            f"{prefix}.b_out": self.b_out,
        }


class TeacherNet:
    """Teacher crossing predictor over (B, C, F, M) stream batches."""

    def __init__(self, n_frames=16, clip_hw=(32, 32), seed=0, dtype=np.float32):
        self.n_frames = int(n_frames)
        self.clip_hw = tuple(int(v) for v in clip_hw)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = named_stream(seed, "init", "teacher")
        self.box_mlp = BoxMLP(rng, dtype)
        self.encoder = StreamEncoder(rng, dtype)
        self.att_time = AttCell(seed=seed, dtype=dtype, name="teacher/att_time")
        self.att_inner = AttCell(seed=seed, dtype=dtype, name="teacher/att_inner")
        self.att_mid = AttCell(seed=seed, dtype=dtype, name="teacher/att_mid")
        self.att_outer = AttCell(seed=seed, dtype=dtype, name="teacher/att_outer")
        self.classifier = Classifier(rng, dtype, dropout_p=0.5)

    # -- stream embeddings ---------------------------------------------------

    def embed_bbox_seq(self, boxes) -> Tensor:
        """Eq.-style per-frame MLP embedding: [B,N,4] -> [B,N,128]."""
        t = boxes if isinstance(boxes, Tensor) else Tensor(np.asarray(boxes), dtype=self.dtype)
        return self.box_mlp.forward(t)

    def encode_stream(self, clip) -> Tensor:
        """Shared convnet embedding of one clip stream: [B,T,H,W,C] -> [B,128]."""
        arr = clip.data if isinstance(clip, Tensor) else np.asarray(clip)
        if arr.shape[-1] < 3:
            pad = np.zeros(arr.shape[:-1] + (3 - arr.shape[-1],), dtype=arr.dtype)
            arr = np.concatenate([arr, pad], axis=-1)
        if isinstance(clip, Tensor) and clip.requires_grad:
            # gradient path kept only when the caller passes a live tensor
            padded = clip if clip.shape[-1] == 3 else _pad_channels(clip)
            return self.encoder.forward(padded)
        return self.encoder.forward(Tensor(arr, dtype=self.dtype))

    def temporal_att(self, frame_embeddings: Tensor) -> Tensor:
        """Attention over time: [B,N,128] -> [B,128] with the newest frame as query."""
        if frame_embeddings.shape[1] < 2:
            raise DimensionError("temporal attention needs at least 2 frames")
        return self.att_time.forward(ad.transpose(frame_embeddings, (0, 2, 1)))

    def progressive_fuse(self, f_b: Tensor, f_c: Tensor, f_m: Tensor, f_f: Tensor) -> Tensor:
        """Nested two-column fusion, global to local: ((F,M),C),B."""
        inner = self.att_inner.forward(ad.stack([f_f, f_m], axis=2))
        mid = self.att_mid.forward(ad.stack([inner, f_c], axis=2))
        return self.att_outer.forward(ad.stack([mid, f_b], axis=2))

    def classify(self, h: Tensor, mode="eval", rng=None) -> Tensor:
        return self.classifier.forward(h, mode=mode, rng=rng)

    # -- full forward -----------------------------------------------------------

    def _encode_or_zero(self, name, arr, batch_size, streams, n_steps):
        if name in streams:
            if arr is None:
                raise ConfigError(f"stream {name!r} requested but missing from the batch")
            return self.encode_stream(np.asarray(arr, dtype=self.dtype))
        h, w = self.clip_hw
        zero_clip = np.zeros((1, n_steps, h, w, 3), dtype=self.dtype)
        feat = self.encoder.forward(Tensor(zero_clip, dtype=self.dtype))
        # broadcast the single zero-input embedding across the batch
        return ad.add(feat, Tensor(np.zeros((batch_size, FEATURE_DIM)), dtype=self.dtype))

    def forward(self, batch, mode="eval", rng=None, streams=None):
        """Run the teacher on a stream batch; returns (h_T, z_T).

        ``batch`` maps "B" -> [b,N,4] and, per enabled stream, "F"/"C" ->
        [b,N,h,w,3] and "M" -> [b,N-1,h,w,2]. Streams not in ``streams`` are
        replaced by zero clips.
        """
        enabled = frozenset(STREAMS if streams is None else streams)
        unknown = enabled - set(STREAMS)
        if unknown:
            raise ConfigError(f"unknown teacher streams: {sorted(unknown)}")
        if "boxes" not in enabled:
            raise ConfigError("the box stream is always required")
        boxes = np.asarray(batch["B"], dtype=self.dtype)
        b, n = boxes.shape[0], boxes.shape[1]
        f_t = self.embed_bbox_seq(boxes)
        f_b = self.temporal_att(f_t)
        f_f = self._encode_or_zero("global_context", batch.get("F"), b, enabled, n)
        f_c = self._encode_or_zero("local_context", batch.get("C"), b, enabled, n)
        f_m = self._encode_or_zero("local_motion", batch.get("M"), b, enabled, n - 1)
        h = self.progressive_fuse(f_b, f_c, f_m, f_f)
        z = self.classify(h, mode=mode, rng=rng)
        return h, z

    # -- parameter plumbing --------------------------------------------------------

    def parameters(self):
        return (
            self.box_mlp.parameters()
            + self.encoder.parameters()
            + self.att_time.parameters()
            + self.att_inner.parameters()
            + self.att_mid.parameters()
            + self.att_outer.parameters()
            + self.classifier.parameters()
        )

    def named_parameters(self):
        out = {}
        out.update(self.box_mlp.named_parameters("box_mlp"))
        out.update(self.encoder.named_parameters("encoder"))
        out.update(self.att_time.named_parameters("att_time"))
        out.update(self.att_inner.named_parameters("att_inner"))
        out.update(self.att_mid.named_parameters("att_mid"))
        out.update(self.att_outer.named_parameters("att_outer"))
        out.update(self.classifier.named_parameters("classifier"))
        return out

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def _pad_channels(clip: Tensor) -> Tensor:
    missing = 3 - clip.shape[-1]
    zeros = Tensor(np.zeros(clip.shape[:-1] + (missing,)), dtype=clip.dtype)
    return ad.concat([clip, zeros], axis=clip.ndim - 1)
