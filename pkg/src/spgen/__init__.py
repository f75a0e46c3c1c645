"""Stochastic scanpath generation with learnable priors and a gaze-metrics engine."""

__version__ = "0.1.0"
