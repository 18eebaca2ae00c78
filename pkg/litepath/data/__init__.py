"""Weights container, slides, synthetic cohorts, feature cache and tables."""
