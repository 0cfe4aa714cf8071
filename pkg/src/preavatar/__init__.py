"""Presentation-video generation backbone with pluggable neural providers."""

__version__ = "0.1.0"
