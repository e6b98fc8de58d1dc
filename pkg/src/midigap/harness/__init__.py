"""Synthetic data, metrics, file formats and the command-line interface."""
