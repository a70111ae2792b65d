"""Synthetic data, toy model and the alternating clustering/training loop."""
