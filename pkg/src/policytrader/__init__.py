"""Deep reinforcement learning agents trading a single instrument on dollar bars."""

__version__ = "0.1.0"
