"""Self-evolution contrastive training for robust self-supervised disparity estimation."""

__version__ = "0.1.0"
