"""Meta-learned domain generalization with semantic OOD detection."""

__version__ = "0.1.0"
