"""Relation-view message passing for inductive knowledge-graph completion."""

__version__ = "0.1.0"
