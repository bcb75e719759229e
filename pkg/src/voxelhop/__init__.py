"""VoxelHop: successive subspace learning for binary classification of
multi-channel 3-D volumes."""

__version__ = "0.1.0"
