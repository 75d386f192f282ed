"""Face-voice association head: hyperbolic alignment, gated fusion, evaluation."""

__version__ = "0.1.0"
