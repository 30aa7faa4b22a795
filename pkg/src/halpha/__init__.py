"""Detection, segmentation and tracking of solar flares and filaments in H-alpha sequences."""

__version__ = "0.1.0"
