"""Phrase-level retrieval-augmented multimodal translation package."""

__version__ = "0.1.0"
