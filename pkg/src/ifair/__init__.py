"""Individually fair data representations via probabilistic prototypes."""
