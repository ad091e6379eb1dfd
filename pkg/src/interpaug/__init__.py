"""Saliency-guided masking augmentation for multi-centre image segmentation."""

__version__ = "0.1.0"
