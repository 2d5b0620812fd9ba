"""Multi-view event-based action recognition with hypergraph neural networks."""

__version__ = "0.1.0"
