"""Versatile style transfer: covariance-fused encoder/decoder network trained
with content, style, and contrastive coherence preserving losses."""

__version__ = "0.1.0"
