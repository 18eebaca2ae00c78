"""Inference pipeline, benchmark and report services."""
