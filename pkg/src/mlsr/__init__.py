"""Meta-learned super-resolution with test-time adaptation."""

__version__ = "0.1.0"
