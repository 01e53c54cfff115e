"""Regenerates experiment figures from exported CSV files."""

from .render import FigureSpec, SchemaError, load_specs, render

__all__ = ["FigureSpec", "SchemaError", "load_specs", "render"]
