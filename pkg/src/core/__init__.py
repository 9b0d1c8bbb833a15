"""Numerical building blocks: dense MLP, optimizer, finite differences, RNG."""
