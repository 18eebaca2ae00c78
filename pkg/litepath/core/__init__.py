"""Model, selection, metrics and cost-model algorithms."""
