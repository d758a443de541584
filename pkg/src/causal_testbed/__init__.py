"""Synthetic testing grounds and an estimator benchmark for SATT inference."""

__version__ = "0.1.0"
