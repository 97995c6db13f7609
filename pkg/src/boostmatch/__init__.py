"""Anchor-guided boosting losses for image-text matching, at desk scale."""

from .losses import MarginConfig, SimilarityBatch, SoftMarginConfig

__version__ = "0.1.0"
__all__ = ["MarginConfig", "SimilarityBatch", "SoftMarginConfig"]
