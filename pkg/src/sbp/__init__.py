"""Box-supervised polygon pseudo labels and dynamic self-training for text detection."""

__version__ = "0.1.0"
