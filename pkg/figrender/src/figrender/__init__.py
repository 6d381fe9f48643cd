"""Sweep-CSV figure rendering."""

from .render import FigureSpec, SchemaError, build_figure, extract_panels, render
