"""Range-image super-resolution for flash LiDAR depth maps."""

__version__ = "0.1.0"
