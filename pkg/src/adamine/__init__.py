"""Scalable acoustic data mining: detectors, map/gather scheduling, event stores."""

__version__ = "0.1.0"
