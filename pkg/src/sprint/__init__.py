"""Semi-supervised prototypical few-shot class-incremental learning for tabular data."""

__version__ = "0.1.0"
