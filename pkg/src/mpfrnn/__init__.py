"""Multi-path feedback recurrent networks for scene parsing, on numpy."""

__version__ = "0.1.0"
