"""Covariance-weighted loss, meta-training loop and baselines."""
