"""Compressed multiview self-supervised learning at desk scale.

Two contrastive/bootstrap objectives (InfoNCE and BYOL-style regression)
and their compressed counterparts built on von Mises-Fisher encoder
distributions, trained with a small reverse-mode autodiff engine over
float64 numpy arrays.  Everything is deterministic given a seed.
"""

__version__ = "0.1.0"
