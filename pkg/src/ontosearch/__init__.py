"""Personalized object-landmark-room ontologies and adaptive multi-object search."""

__version__ = "0.1.0"
