"""Two-stage volumetric image/report pre-training with a synthetic evaluation harness."""

__version__ = "0.1.0"
