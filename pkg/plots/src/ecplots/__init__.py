from .render import KINDS, FigureSpec, SchemaError, render

__all__ = ["KINDS", "FigureSpec", "SchemaError", "render"]
