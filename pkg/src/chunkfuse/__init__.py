"""chunkfuse: long-document classification by chunking, scoring, and fusing."""

__version__ = "0.1.0"
