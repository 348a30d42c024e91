"""Simulated secure big-data migration between two HDFS-like clouds."""

__version__ = "0.1.0"
