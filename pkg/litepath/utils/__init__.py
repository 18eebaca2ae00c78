"""Utility helpers and error types."""
