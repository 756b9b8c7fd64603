"""Distillation and task losses.

Response distillation defaults to KL(teacher || student) between
temperature-softened class distributions; a switch selects the literal
entropy-difference variant for study. Feature distillation is the squared
log1p gap summed over feature indices. Batch reduction is mean-over-batch,
sum-over-index throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _as_batch(t: Tensor) -> Tensor:
    return ad.reshape(t, (1,) + t.shape) if t.ndim == 1 else t


def loss_response(z_teacher, z_student, temperature: float, literal: bool = False,
                  detach_teacher: bool = True) -> Tensor:
    """Response distillation between teacher and student logits.

    Default: KL(p_T || p_S) = sum_i p_T(i) (log p_T(i) - log p_S(i)) at the
    shared temperature. ``literal=True`` computes the entropy-difference form
    sum_i (p_T(i) log p_T(i) - p_S(i) log p_S(i)) instead (which may be
    negative). Teacher logits carry no gradient unless ``detach_teacher`` is
    False.
    """
    z_t = _as_batch(z_teacher)
    z_s = _as_batch(z_student)
    if detach_teacher:
        z_t = z_t.detach()
    inv_t = 1.0 / float(temperature)
    log_pt = ad.log_softmax(z_t * inv_t)
    log_ps = ad.log_softmax(z_s * inv_t)
    p_t = ad.softmax_temp(z_t, temperature)
    if literal:
        p_s = ad.softmax_temp(z_s, temperature)
        per = ad.tsum(ad.sub(ad.mul(p_t, log_pt), ad.mul(p_s, log_ps)), axis=-1)
    else:
        per = ad.tsum(ad.mul(p_t, ad.sub(log_pt, log_ps)), axis=-1)
    return ad.tmean(per)


def loss_feature(h_teacher, h_student, detach_teacher: bool = True) -> Tensor:
    """Feature distillation: sum_i (log1p(h_T(i)) - log1p(h_S(i)))^2.

    Inputs must already be rectified (> -1 componentwise); violations raise a
    numeric-domain error naming the offending index.
    """
    h_t = _as_batch(h_teacher)
    h_s = _as_batch(h_student)
    if detach_teacher:
        h_t = h_t.detach()
    d = ad.sub(ad.log1p(h_t), ad.log1p(h_s))
    return ad.tmean(ad.tsum(ad.mul(d, d), axis=-1))


def loss_task(labels, logits) -> Tensor:
    """Cross-entropy -log o[y] from logits via the stabilized log-softmax."""
    z = _as_batch(logits)
    y = np.atleast_1d(np.asarray(labels))
    onehot = np.zeros(z.shape, dtype=z.dtype)
    onehot[np.arange(y.size), y.astype(int)] = 1.0
    log_p = ad.log_softmax(z)
    per = ad.neg(ad.tsum(ad.mul(log_p, Tensor(onehot, dtype=z.dtype)), axis=-1))
    return ad.tmean(per)


@dataclass
class LossBreakdown:
    total: Tensor
    response: float
    feature: float
    task: float


def total_loss(labels, z_teacher, h_teacher, student_out, temperature: float,
               weights=(1.0, 1.0, 1.0), eq7_literal: bool = False,
               detach_teacher: bool = True, rectify_teacher: bool = True):
    """Weighted objective lambda_R * R + lambda_H * H + lambda_P * P.

    With lambda_R = lambda_H = 0 the teacher terms are skipped entirely, so
    the result is exactly plain supervised training. The teacher feature is
    softplus-rectified before the log1p-domain feature loss (the student's
    feature is rectified in its own forward pass).
    """
    w_r, w_h, w_p = (float(w) for w in weights)
    task = loss_task(labels, student_out.logits)
    total = task * w_p if w_p != 1.0 else task
    r_val = 0.0
    h_val = 0.0
    if w_r != 0.0:
        if z_teacher is None:
            raise ValueError("response weight is nonzero but no teacher logits given")
        r = loss_response(z_teacher, student_out.logits, temperature,
                          literal=eq7_literal, detach_teacher=detach_teacher)
        r_val = float(r.data)
        total = ad.add(total, r * w_r if w_r != 1.0 else r)
    if w_h != 0.0:
        if h_teacher is None:
            raise ValueError("feature weight is nonzero but no teacher features given")
        h_t = ad.softplus(h_teacher) if rectify_teacher else h_teacher
        h = loss_feature(h_t, student_out.features, detach_teacher=detach_teacher)
        h_val = float(h.data)
        total = ad.add(total, h * w_h if w_h != 1.0 else h)
    return LossBreakdown(total=total, response=r_val, feature=h_val, task=float(task.data))
