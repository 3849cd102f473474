"""mixloc: map-free LiDAR localization on synthetic scenes.

A frozen handcrafted point encoder feeds a buffer-trained pose regressor
(mixer-style set aggregation + MLP heads) with contrastive/metric-loss
regularization; a synthetic world harness and CLI make the full
train/evaluate loop reproducible without external data.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
