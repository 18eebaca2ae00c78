"""Trainer base classes and one trainer per training stage."""
