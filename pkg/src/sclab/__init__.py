"""Structured contrastive learning with partitioned latents, on a small numpy autodiff core."""

__version__ = "0.1.0"
