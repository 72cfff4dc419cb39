"""Data-poisoning simulation and defense-evaluation harness."""

__version__ = "0.1.0"
