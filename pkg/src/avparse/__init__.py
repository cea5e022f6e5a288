"""Weakly supervised audio-visual video parsing with text fusion and multi-hop temporal graphs."""

__version__ = "0.1.0"
