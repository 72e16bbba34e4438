"""Scaled gradient descent for classifiers: downweights the gradient of
correctly classified examples by a scheduled factor, plus baselines,
gradient-conflict diagnostics and seed-sweep stability tooling."""

__version__ = "0.1.0"
