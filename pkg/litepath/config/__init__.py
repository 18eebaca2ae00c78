"""Configuration constants and the INI-backed configuration manager."""
