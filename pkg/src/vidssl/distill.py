"""Teacher-student self-distillation objective.

Teacher outputs on global views are sharpened into targets; the student's
local-view distributions are pulled toward them with two cross-entropy terms:
a temporal term averaged over (teacher view, student view) pairs and a
spatial term summed over the local spatial views.  The teacher is never
optimized directly: it only receives exponential-moving-average copies of the
student weights, and an optional running center on its logits guards against
collapse to a constant output.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
from torch import nn

LOG_EPS = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    student_temp: float = 0.1
    teacher_temp: float = 0.04
    centering: bool = True
    center_momentum: float = 0.9

    def __post_init__(self) -> None:
        if not 0 < self.teacher_temp <= self.student_temp:
            raise ValueError("need 0 < teacher_temp <= student_temp")
        if not 0 <= self.center_momentum <= 1:
            raise ValueError("center_momentum must be in [0, 1]")


class DistillState:
    """Teacher/student parameter pair plus centering state and step counter.

    ``teacher`` and ``student`` must share architecture.  Teacher parameters
    have gradients disabled; the only mechanism that updates them is
    :func:`ema_update`.
    """

    def __init__(self, student: nn.Module, output_dim: int, dtype=torch.float32):
        self.student = student
        self.teacher = copy.deepcopy(student)
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.center = torch.zeros(output_dim, dtype=dtype)
        self.step = 0


def sharpen(z: torch.Tensor, temp: float, center: torch.Tensor | None = None) -> torch.Tensor:
    """Temperature-sharpened softmax over the last dimension.

    Computes ``softmax((z - center) / temp)`` with max-subtraction for
    stability.  Lower temperatures concentrate the distribution; the argmax is
    that of ``z - center`` regardless of temperature.
    """
    if temp <= 0:
        raise ValueError(f"temperature must be > 0, got {temp}")
    if center is not None:
        z = z - center
    z = z / temp
    z = z - z.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def cross_entropy(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """H(target, pred) = -sum(target * log pred), averaged over leading dims.

    ``target`` is detached: no gradient flows into the teacher side.  The log
    is clamped at ``LOG_EPS`` to bound the worst-case loss.
    """
    if target.shape[-1] != pred.shape[-1]:
        raise ValueError(f"dimension mismatch: {target.shape[-1]} vs {pred.shape[-1]}")
    ce = -(target.detach() * torch.log(pred.clamp_min(LOG_EPS))).sum(dim=-1)
    return ce.mean()


def tcl_loss(
    teacher_globals: list[torch.Tensor],
    student_temporals: list[torch.Tensor],
    skip_pairs: frozenset[tuple[int, int]] = frozenset(),
) -> torch.Tensor:
    """Temporal loss: mean cross-entropy over (teacher, student) view pairs.

    ``skip_pairs`` excludes (teacher index, student index) combinations where
    both sides would see the very same view (the student also processes the
    global views; a view is never matched against itself).
    """
    if not teacher_globals or not student_temporals:
        raise ValueError("need at least one teacher and one student view")
    terms = [
        cross_entropy(t, s)
        for i, t in enumerate(teacher_globals)
        for j, s in enumerate(student_temporals)
        if (i, j) not in skip_pairs
    ]
    if not terms:
        raise ValueError("skip_pairs excluded every view pair")
    return torch.stack(terms).mean()


def scl_loss(
    teacher_globals: list[torch.Tensor], student_local_spatials: list[torch.Tensor]
) -> torch.Tensor:
    """Spatial loss: sum over local spatial views of teacher-averaged cross-entropy."""
    if not teacher_globals or not student_local_spatials:
        raise ValueError("need at least one teacher and one student view")
    per_view = [
        torch.stack([cross_entropy(t, s) for t in teacher_globals]).mean()
        for s in student_local_spatials
    ]
    return torch.stack(per_view).sum()


def total_loss(tcl: torch.Tensor, scl: torch.Tensor) -> torch.Tensor:
    """Unit-weight combination of the two terms."""
    return tcl + scl


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float) -> None:
    """teacher <- momentum * teacher + (1 - momentum) * student, elementwise."""
    if not 0 <= momentum <= 1:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("teacher/student parameter sets differ")
    for name, t in t_params.items():
        s = s_params[name]
        if t.shape != s.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(s.shape)}")
        t.mul_(momentum).add_(s, alpha=1.0 - momentum)


@torch.no_grad()
def update_center(
    center: torch.Tensor, teacher_logits: torch.Tensor, momentum: float
) -> torch.Tensor:
    """Running mean of pre-sharpening teacher logits: c' = m*c + (1-m)*batch_mean."""
    if not 0 <= momentum <= 1:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    batch_mean = teacher_logits.reshape(-1, teacher_logits.shape[-1]).mean(dim=0)
    return momentum * center + (1.0 - momentum) * batch_mean


def entropy(dist: torch.Tensor) -> torch.Tensor:
    """Shannon entropy (nats) over the last dim, averaged over leading dims."""
    return -(dist * torch.log(dist.clamp_min(LOG_EPS))).sum(dim=-1).mean()
