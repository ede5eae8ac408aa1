"""Pseudo-label toolkit for unsupervised instance segmentation.

Generates candidate object masks from self-supervised patch features,
filters them by affinity rating, and computes superpixel-guided and
boundary-weighted self-training losses with analytic gradients. All
data moves through file-based arrays (restricted NPY v1.0) so any
training framework can consume the outputs.
"""

from .ndio import HyperParams, RunManifest, read_array, write_array

__all__ = ["HyperParams", "RunManifest", "read_array", "write_array"]
