"""Covert navigation in simulation: world synthesis, perception maps, threat-aware
visibility, offline conservative Q-learning and a closed-loop episode simulator."""

__version__ = "0.1.0"
