"""Selection-based question answering: retrieval, rankers and evaluation."""

__version__ = "0.1.0"
