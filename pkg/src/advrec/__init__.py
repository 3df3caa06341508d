"""Adversarial attacks on an RL recommender, and a detector for them."""

__version__ = "0.1.0"
