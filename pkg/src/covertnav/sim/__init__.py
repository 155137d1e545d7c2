"""Closed-loop covert navigation simulator, baselines and metrics."""
