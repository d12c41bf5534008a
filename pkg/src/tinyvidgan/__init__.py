"""tinyvidgan: a small generative-adversarial video toolkit on numpy."""

__version__ = "0.1.0"
