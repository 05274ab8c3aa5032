"""Incremental learning of static-object velocity fields from agent trajectories."""

__version__ = "0.1.0"
