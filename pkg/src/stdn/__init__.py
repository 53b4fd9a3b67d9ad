"""Spatial-temporal dynamic network for grid traffic-volume forecasting.

Flow-gated local convolutions model spatial similarity that changes with
traffic flow; periodically shifted attention over previous days absorbs
day-to-day drift of periodic peaks.
"""

__version__ = "0.1.0"
