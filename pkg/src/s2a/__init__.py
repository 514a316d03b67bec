"""Grammatical error correction with SKIP/COPY/GEN action fusion."""

__version__ = "0.1.0"
