"""Residual reinforcement learning on top of the analytical controller."""
