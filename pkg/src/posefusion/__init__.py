"""Pose-graph fusion of drifting odometry with GPS, magnetometer and barometer."""

__version__ = "0.1.0"
