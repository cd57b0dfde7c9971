"""Desk-scale dermoscopy analysis: segmentation, lesion indexing and
dermoscopic feature extraction, built on a small deterministic numpy
network engine."""

__version__ = "0.1.0"
