"""Modular scan-to-scan LiDAR odometry, ablation harness and drift metrics."""

__version__ = "0.1.0"
