"""Few-shot volumetric segmentation with point prompts and a meta-learned
online optimizer, built on a small tape-based autodiff core."""

__version__ = "0.1.0"
