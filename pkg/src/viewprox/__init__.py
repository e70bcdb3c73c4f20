"""Viewer proximity estimation from facial landmarks and trace classification."""

__version__ = "0.1.0"

CLASSES = ("TD", "ASD", "ID")
