"""Multi-interest sequential retrieval with co-occurrence-simulated attribute embeddings."""

__version__ = "0.1.0"
