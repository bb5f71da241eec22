"""Desk-scale multimodal generation lab.

Synthetic captioned shape images, a hybrid-attention token transformer,
a rectified-flow image pathway, noise-aware dataset cleaning, and the
evaluation metric suite, all seed-reproducible on CPU.
"""

__version__ = "0.1.0"
