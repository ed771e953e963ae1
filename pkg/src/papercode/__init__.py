"""Toolkit for building paper-code consistency benchmarks and training
consistency classifiers over them."""

__version__ = "0.1.0"
