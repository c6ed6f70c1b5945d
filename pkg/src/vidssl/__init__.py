"""Self-supervised video representation learning at desk scale.

Multi-rate global/local view sampling, teacher-student distillation over a
divided space-time attention transformer, linear-probe inference, and
group-activity evaluation metrics.
"""

__version__ = "0.1.0"
