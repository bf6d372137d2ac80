"""Scalar training losses.

The count loss combines the batch L1 error on per-image counts, the
entropic transport loss between normalized maps, and a normalized L1
regularizer, weighted eta/gamma. The full training loss adds lambda-weighted
self-distillation terms (output level and feature level) against a frozen
teacher; lambda=0 degenerates to plain sequential fine-tuning.

All functions take/return double-precision torch tensors so the same code
path serves training, logging, and finite-difference verification. The OT
term enters autograd through a custom function whose backward injects the
dual-potential gradient computed by :mod:`lifecount.transport`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import transport
from .density import DEFAULT_SIGMA
from .transport import CostMatrix, OTParams


@dataclass
class LossConfig:
    eta: float = 0.1  # weight of the transport term
    gamma: float = 0.01  # weight of the normalized regularizer
    lambda_: float = 0.5  # plasticity/stability trade-off on distillation
    distill_feature: bool = True
    distill_output: bool = True
    sigma: float = DEFAULT_SIGMA  # ground-truth kernel width (pass-through)
    ot: OTParams = field(default_factory=OTParams)

    def validate(self) -> None:
        if self.eta < 0 or self.gamma < 0 or self.lambda_ < 0:
            raise ValueError("eta, gamma and lambda must be non-negative")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "gamma": self.gamma,
            "lambda": self.lambda_,
            "distill_feature": self.distill_feature,
            "distill_output": self.distill_output,
            "sigma": self.sigma,
            "ot": {"eps": self.ot.eps, "max_iter": self.ot.max_iter, "tol": self.ot.tol},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        ot = d.get("ot", {})
        return cls(
            eta=float(d.get("eta", 0.1)),
            gamma=float(d.get("gamma", 0.01)),
            lambda_=float(d.get("lambda", d.get("lambda_", 0.5))),
            distill_feature=bool(d.get("distill_feature", True)),
            distill_output=bool(d.get("distill_output", True)),
            sigma=float(d.get("sigma", DEFAULT_SIGMA)),
            ot=OTParams(
                eps=float(ot.get("eps", 1e-2)),
                max_iter=int(ot.get("max_iter", 500)),
                tol=float(ot.get("tol", 1e-6)),
            ),
        )

    def with_lambda(self, lambda_: float) -> "LossConfig":
        return replace(self, lambda_=lambda_)


@dataclass
class LossBreakdown:
    """All terms as 0-dim double tensors; ``total`` carries the graph."""

    l1: torch.Tensor
    ot: torch.Tensor
    reg: torch.Tensor
    count: torch.Tensor
    distill_output: torch.Tensor
    distill_feature: torch.Tensor
    total: torch.Tensor
    diagnostics: dict | None = None

    def floats(self) -> dict[str, float]:
        out = {
            name: float(getattr(self, name).detach())
            for name in ("l1", "ot", "reg", "count", "distill_output", "distill_feature", "total")
        }
        if self.diagnostics:
            out.update(self.diagnostics)
        return out


def _as_batch(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=torch.float64)
    if t.dim() == 2:
        t = t.unsqueeze(0)
    if t.dim() != 3:
        raise ValueError(f"{name} must be a (B, h, w) batch, got shape {tuple(t.shape)}")
    return t


def l1_count_loss(pred_counts, true_counts) -> torch.Tensor:
    """Mean absolute difference between predicted and true per-image counts."""
    p = torch.as_tensor(pred_counts, dtype=torch.float64).reshape(-1)
    t = torch.as_tensor(true_counts, dtype=torch.float64).reshape(-1)
    if p.numel() == 0:
        raise ValueError("empty batch")
    if p.shape != t.shape:
        raise ValueError(f"batch length mismatch: {p.shape} vs {t.shape}")
    return (p - t).abs().mean()


def pixel_l2_loss(yhat, y) -> torch.Tensor:
    """Baseline pixel-wise loss: batch mean of per-cell squared differences."""
    yh = _as_batch(yhat, "yhat")
    yt = _as_batch(y, "y")
    if yh.shape != yt.shape:
        raise ValueError(f"shape mismatch: {tuple(yh.shape)} vs {tuple(yt.shape)}")
    return ((yh - yt) ** 2).mean()


def normalized_reg(y, yhat) -> torch.Tensor:
    """Per-image 0.5*||y/||y|| - yhat/||yhat||||_1, averaged over the batch.

    Both masses must be positive; zero-mass images are gated out by
    count_loss before this is reached.
    """
    yt = _as_batch(y, "y")
    yh = _as_batch(yhat, "yhat")
    if yh.shape != yt.shape:
        raise ValueError(f"shape mismatch: {tuple(yh.shape)} vs {tuple(yt.shape)}")
    my = yt.sum(dim=(1, 2))
    mh = yh.sum(dim=(1, 2))
    if bool((my <= 0).any()) or bool((mh <= 0).any()):
        raise ValueError("normalized_reg requires positive masses on every image")
    diff = yt / my[:, None, None] - yh / mh[:, None, None]
    return 0.5 * diff.abs().sum(dim=(1, 2)).mean()


class _OTLossFn(torch.autograd.Function):
    """Per-image transport loss; backward injects the envelope gradient.

    Autograd functions may only return tensors, so solver diagnostics are
    delivered through the ``sink`` list argument.
    """

    @staticmethod
    def forward(ctx, yhat: torch.Tensor, y_np: np.ndarray, C: CostMatrix, params: OTParams, sink: list):
        loss, grad, res = transport.ot_loss_and_grad(
            y_np,
            yhat.detach().cpu().numpy(),
            C,
            eps=params.eps,
            max_iter=params.max_iter,
            tol=params.tol,
        )
        ctx.grad = torch.from_numpy(np.ascontiguousarray(grad))
        sink.append(res)
        return yhat.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output * ctx.grad, None, None, None, None


def ot_loss(yhat: torch.Tensor, y_np: np.ndarray, C: CostMatrix, params: OTParams) -> tuple[torch.Tensor, transport.OTResult]:
    """Differentiable (w.r.t. yhat) transport loss for one image."""
    sink: list[transport.OTResult] = []
    value = _OTLossFn.apply(yhat, y_np, C, params, sink)
    return value, sink[0]


def count_loss(y, yhat, cfg: LossConfig) -> LossBreakdown:
    """L1 count term + eta * transport + gamma * normalized regularizer.

    Images where either map has zero mass contribute 0 to the transport and
    regularizer terms (those are undefined at zero mass); the L1 count term
    always applies.
    """
    yt = _as_batch(y, "y")
    yh = _as_batch(yhat, "yhat")
    if yh.shape != yt.shape:
        raise ValueError(f"shape mismatch: y {tuple(yt.shape)} vs yhat {tuple(yh.shape)}")
    b = yt.shape[0]
    true_counts = yt.sum(dim=(1, 2))
    pred_counts = yh.sum(dim=(1, 2))
    l1 = (pred_counts - true_counts).abs().mean()

    C = transport.build_cost_matrix((int(yt.shape[1]), int(yt.shape[2])))
    ot_sum = yh.new_zeros(())
    reg_sum = yh.new_zeros(())
    iters: list[int] = []
    merr = 0.0
    active = 0
    for i in range(b):
        if float(true_counts[i].detach()) <= 0.0 or float(pred_counts[i].detach()) <= 0.0:
            continue
        active += 1
        ot_i, diag = ot_loss(yh[i], yt[i].detach().numpy(), C, cfg.ot)
        iters.append(diag.iterations)
        merr = max(merr, diag.marginal_err)
        ot_sum = ot_sum + ot_i
        mu = yt[i] / true_counts[i]
        nu = yh[i] / pred_counts[i]
        reg_sum = reg_sum + 0.5 * (mu - nu).abs().sum()
    ot_term = ot_sum / b
    reg_term = reg_sum / b
    count = l1 + cfg.eta * ot_term + cfg.gamma * reg_term
    diagnostics = {
        "ot_images": active,
        "ot_iterations_mean": float(np.mean(iters)) if iters else 0.0,
        "ot_marginal_err_max": merr,
    }
    zero = yh.new_zeros(())
    return LossBreakdown(
        l1=l1,
        ot=ot_term,
        reg=reg_term,
        count=count,
        distill_output=zero,
        distill_feature=zero,
        total=count,
        diagnostics=diagnostics,
    )


def distill_loss(
    teacher_out, student_out, teacher_feat, student_feat, cfg: LossConfig
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean squared teacher-student differences at output and feature level.

    Terms are zero when the corresponding config switch is off. No gradient
    flows into the teacher tensors.
    """
    ref = torch.as_tensor(student_out, dtype=torch.float64)
    zero = ref.new_zeros(())
    out_term = zero
    feat_term = zero
    if cfg.distill_output:
        t = torch.as_tensor(teacher_out, dtype=torch.float64).detach()
        s = torch.as_tensor(student_out, dtype=torch.float64)
        if t.shape != s.shape:
            raise ValueError(f"output shape mismatch: teacher {tuple(t.shape)} vs student {tuple(s.shape)}")
        out_term = ((s - t) ** 2).mean()
    if cfg.distill_feature:
        t = torch.as_tensor(teacher_feat, dtype=torch.float64).detach()
        s = torch.as_tensor(student_feat, dtype=torch.float64)
        if t.shape != s.shape:
            raise ValueError(f"feature shape mismatch: teacher {tuple(t.shape)} vs student {tuple(s.shape)}")
        feat_term = ((s - t) ** 2).mean()
    return out_term, feat_term


def bdf_loss(
    y,
    yhat,
    cfg: LossConfig,
    teacher_out=None,
    teacher_feat=None,
    student_feat=None,
) -> LossBreakdown:
    """Full training loss: count loss + lambda * distillation.

    With no teacher (first domain) the distillation terms are identically
    zero and total == count exactly; the same holds bitwise for lambda=0,
    which is the sequential fine-tuning baseline.
    """
    bd = count_loss(y, yhat, cfg)
    has_teacher = teacher_out is not None or teacher_feat is not None
    if not has_teacher:
        return bd
    if cfg.distill_output and teacher_out is None:
        raise ValueError("distill_output enabled but teacher_out missing")
    if cfg.distill_feature and (teacher_feat is None or student_feat is None):
        raise ValueError("distill_feature enabled but feature views missing")
    student_out = _as_batch(yhat, "yhat")
    if teacher_out is not None:
        teacher_out = _as_batch(teacher_out, "teacher_out")
    out_term, feat_term = distill_loss(teacher_out, student_out, teacher_feat, student_feat, cfg)
    total = bd.count + cfg.lambda_ * (out_term + feat_term)
    return LossBreakdown(
        l1=bd.l1,
        ot=bd.ot,
        reg=bd.reg,
        count=bd.count,
        distill_output=out_term,
        distill_feature=feat_term,
        total=total,
        diagnostics=bd.diagnostics,
    )
