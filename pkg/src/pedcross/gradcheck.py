"""Central finite-difference verification of analytic gradients.

The checker rebuilds the forward pass with single entries of a parameter
perturbed by +-h and compares the symmetric difference quotient against the
gradient produced by one reverse pass. All checks run at float64 so the
difference quotient itself is trustworthy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .rng import named_stream


def relative_error(analytic: float, numeric: float) -> float:
    denom = max(1.0, abs(analytic), abs(numeric))
    return abs(analytic - numeric) / denom


def max_rel_error(build_loss, params, n_probes: int = 10, eps: float = 1e-5, rng=None) -> float:
    """Probe random entries of ``params`` and return the worst relative error.

    ``build_loss`` must construct a fresh scalar-loss graph from the current
    contents of ``params`` on every call.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = build_loss()
    grad_map = ad.backward(loss, params=params)

    worst = 0.0
    sized = [p for p in params if p.data.size > 0]
    for _ in range(n_probes):
        p = sized[int(rng.integers(len(sized)))]
        flat_index = int(rng.integers(p.data.size))
        idx = np.unravel_index(flat_index, p.data.shape)
        orig = p.data[idx]
        h = eps * max(1.0, abs(orig))
        p.data[idx] = orig + h
        f_plus = float(build_loss().data)
        p.data[idx] = orig - h
        f_minus = float(build_loss().data)
        p.data[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(grad_map[p][idx])
        worst = max(worst, relative_error(analytic, numeric))
    return worst


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} max_rel_err={self.max_rel_err:.3e}  tol={self.tol:.0e}"


def _param(rng, shape, scale=1.0):
    return ad.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=np.float64)


def _weighted_sum(t: ad.Tensor, rng) -> ad.Tensor:
    w = ad.Tensor(rng.normal(size=t.shape), dtype=np.float64)
    return ad.tsum(ad.mul(t, w))


def _check_matmul(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "matmul")
    a = _param(rng, (4, 5))
    b = _param(rng, (5, 3))

    def build():
        return ad.tsum(ad.matmul(a, b))

    return CheckResult("matmul", max_rel_error(build, [a, b], rng=rng), 1e-6)


def _check_bmm(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "bmm")
    a = _param(rng, (3, 4, 5))
    b = _param(rng, (3, 5, 2))
    w = np.random.default_rng(1).normal(size=(3, 4, 2))

    def build():
        return ad.tsum(ad.mul(ad.bmm(a, b), ad.Tensor(w, dtype=np.float64)))

    return CheckResult("bmm", max_rel_error(build, [a, b], rng=rng), 1e-6)


def _check_conv3d(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "conv3d")
    x = _param(rng, (4, 8, 8, 2))
    k = _param(rng, (3, 3, 3, 2, 3), scale=0.5)
    w = np.random.default_rng(2).normal(size=(2, 4, 4, 3))

    def build():
        out = ad.conv3d(x, k, stride=(2, 2, 2), padding=1)
        return ad.tsum(ad.mul(out, ad.Tensor(w, dtype=np.float64)))

    return CheckResult("conv3d", max_rel_error(build, [x, k], rng=rng), 1e-5)


def _check_elementwise(name, fn, seed, shift=0.0) -> CheckResult:
    rng = named_stream(seed, "gradcheck", name)
    base = rng.normal(size=(6, 7))
    if name == "relu":
        base = np.where(np.abs(base) < 0.05, base + 0.2, base)  # keep probes off the kink
    x = ad.Tensor(base + shift, requires_grad=True, dtype=np.float64)
    w = rng.normal(size=(6, 7))

    def build():
        return ad.tsum(ad.mul(fn(x), ad.Tensor(w, dtype=np.float64)))

    return CheckResult(name, max_rel_error(build, [x], rng=rng), 1e-6)


def _check_softmax_temp(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "softmax_temp")
    z = _param(rng, (5, 8))
    w = rng.normal(size=(5, 8))

    def build():
        return ad.tsum(ad.mul(ad.softmax_temp(z, 2.0), ad.Tensor(w, dtype=np.float64)))

    return CheckResult("softmax_temp", max_rel_error(build, [z], rng=rng), 1e-6)


def _check_log_softmax(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "log_softmax")
    z = _param(rng, (6, 4))
    w = rng.normal(size=(6, 4))

    def build():
        return ad.tsum(ad.mul(ad.log_softmax(z), ad.Tensor(w, dtype=np.float64)))

    return CheckResult("log_softmax", max_rel_error(build, [z], rng=rng), 1e-6)


def _check_global_avg_pool(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "gap")
    x = _param(rng, (2, 5, 6, 3))
    w = rng.normal(size=(2, 3))

    def build():
        return ad.tsum(ad.mul(ad.global_avg_pool(x, axes=(1, 2)), ad.Tensor(w, dtype=np.float64)))

    return CheckResult("global_avg_pool", max_rel_error(build, [x], rng=rng), 1e-6)


def _check_shape_ops(seed) -> CheckResult:
    rng = named_stream(seed, "gradcheck", "shape-ops")
    a = _param(rng, (4, 6))
    b = _param(rng, (4, 6))
    w = rng.normal(size=(4, 15))

    def build():
        left = ad.concat([a, b, ad.mul(a, b)], axis=1)[:, 1:16]
        mixed = ad.transpose(ad.reshape(left, (4, 15)))
        return ad.tsum(ad.mul(ad.transpose(mixed), ad.Tensor(w, dtype=np.float64)))

    return CheckResult("concat/slice/reshape", max_rel_error(build, [a, b], rng=rng), 1e-6)


def _check_att_cell(seed) -> CheckResult:
    from .teacher import AttCell

    rng = named_stream(seed, "gradcheck", "att-cell")
    cell = AttCell(dim=16, seed=seed, dtype=np.float64)
    f = _param(rng, (2, 16, 3))
    params = [f] + cell.parameters()
    w = rng.normal(size=(2, 16))

    def build():
        return ad.tsum(ad.mul(cell.forward(f), ad.Tensor(w, dtype=np.float64)))

    return CheckResult("attention cell", max_rel_error(build, params, rng=rng), 1e-5)


def _check_teacher_composite(seed) -> CheckResult:
    from .losses import loss_task
    from .teacher import TeacherNet

    rng = named_stream(seed, "gradcheck", "teacher-composite")
    net = TeacherNet(n_frames=4, clip_hw=(8, 8), seed=seed, dtype=np.float64)
    batch = {
        "F": rng.random((2, 4, 8, 8, 3)),
        "C": rng.random((2, 4, 8, 8, 3)),
        "M": rng.normal(0, 0.2, (2, 3, 8, 8, 2)),
        "B": rng.random((2, 4, 4)),
    }
    y = np.array([1, 0])

    def build():
        _, z = net.forward(batch, mode="eval")
        return loss_task(y, z)

    return CheckResult(
        "teacher fwd + task loss", max_rel_error(build, net.parameters(), n_probes=10, rng=rng), 1e-4
    )


def _check_distill_composite(seed) -> CheckResult:
    from .losses import total_loss
    from .student import StudentNet
    from .teacher import TeacherNet

    rng = named_stream(seed, "gradcheck", "distill-composite")
    teacher = TeacherNet(n_frames=4, clip_hw=(8, 8), seed=seed, dtype=np.float64)
    student = StudentNet(variant="attn_lite", n_frames=4, seed=seed + 1, dtype=np.float64)
    batch = {
        "F": rng.random((2, 4, 8, 8, 3)),
        "C": rng.random((2, 4, 8, 8, 3)),
        "M": rng.normal(0, 0.2, (2, 3, 8, 8, 2)),
        "B": rng.random((2, 4, 4)),
    }
    y = np.array([0, 1])
    params = teacher.parameters() + student.parameters()

    def build():
        h_t, z_t = teacher.forward(batch, mode="eval")
        out = student.forward(batch["B"])
        # keep the teacher differentiable here: the check covers the full graph
        return total_loss(y, z_t, h_t, out, temperature=2.0, detach_teacher=False).total

    return CheckResult(
        "teacher+student + objective", max_rel_error(build, params, n_probes=10, rng=rng), 1e-4
    )


def _check_student_variant(variant, seed) -> CheckResult:
    from .losses import loss_task
    from .student import StudentNet

    rng = named_stream(seed, "gradcheck", "student", variant)
    net = StudentNet(variant=variant, n_frames=6, seed=seed, dtype=np.float64)
    b = rng.random((3, 6, 4))
    y = np.array([1, 0, 1])

    def build():
        out = net.forward(b)
        return loss_task(y, out.logits)

    return CheckResult(f"student {variant}", max_rel_error(build, net.parameters(), rng=rng), 1e-4)


def run_suite(seed: int = 0, include_models: bool = True) -> list[CheckResult]:
    """Finite-difference suite over every differentiable op plus composites."""
    results = [
        _check_matmul(seed),
        _check_bmm(seed),
        _check_conv3d(seed),
        _check_elementwise("tanh", ad.tanh, seed),
        _check_elementwise("softplus", ad.softplus, seed),
        _check_elementwise("relu", ad.relu, seed),
        _check_elementwise("log1p", ad.log1p, seed, shift=2.0),
        _check_softmax_temp(seed),
        _check_log_softmax(seed),
        _check_global_avg_pool(seed),
        _check_shape_ops(seed),
    ]
    if include_models:
        results.append(_check_att_cell(seed))
        for variant in ("attn_lite", "residual_mlp", "sep_conv1d"):
            results.append(_check_student_variant(variant, seed))
        results.append(_check_teacher_composite(seed))
        results.append(_check_distill_composite(seed))
    return results
