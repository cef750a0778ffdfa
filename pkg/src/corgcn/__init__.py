"""Correlation-aware GCN for multi-label node classification."""
