"""Motion-transfer intra-class augmentation for finger-vein images."""

__version__ = "0.1.0"
