"""Kernelized bandits with distributed, biased user feedback."""

__version__ = "0.1.0"
