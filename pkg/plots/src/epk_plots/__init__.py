"""Figure generation for the path-kernel CLI's CSV artifacts."""

__version__ = "0.1.0"

from .figures import RENDERERS, FigureJob, PlotError, render
