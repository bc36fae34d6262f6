"""Retrieval-augmented report generation for fundus images.

Subpackages are imported on demand; see the README for the module map and
the command-line entry points.
"""

__version__ = "0.1.0"
