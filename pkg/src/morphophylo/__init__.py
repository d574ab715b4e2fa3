"""Species trees from outline shape: Fourier descriptors, a metric-learning
encoder, distance-based tree building and tree comparison scores."""

__version__ = "0.1.0"
