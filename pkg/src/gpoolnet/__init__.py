"""Graph-of-words text classification with GCN, gPool and hConv layers."""

__version__ = "0.1.0"
