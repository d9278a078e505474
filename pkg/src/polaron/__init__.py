"""Pseudo-spectral laboratory for a heavy tracer particle coupled to a condensate field."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("polaron")
except PackageNotFoundError:  # running from a source tree without installation
    __version__ = "0.1.0"
