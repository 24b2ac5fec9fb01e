"""Temporal-correspondence objectives for video panoptic segmentation."""

__version__ = "0.1.0"
