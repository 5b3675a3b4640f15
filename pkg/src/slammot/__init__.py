"""Joint ego-motion and multi-object tracking on a single factor graph."""

__version__ = "0.1.0"
