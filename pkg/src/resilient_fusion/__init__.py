"""Degradation-aware multi-odometry fusion toolkit.

Pipeline: simulate a synthetic scenario, detect LiDAR degradation from
scan matching, align subsystem frames robustly, supervise source
switching with smoothed hand-offs, and evaluate the fused trajectory.
"""

__version__ = "0.1.0"
