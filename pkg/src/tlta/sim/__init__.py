"""Discrete-event engine, mobility, attacks and metrics."""
