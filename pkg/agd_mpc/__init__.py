"""Adam-based gradient descent (AGD) and Gauss-Newton DDP for model predictive control."""

__version__ = "0.1.0"
