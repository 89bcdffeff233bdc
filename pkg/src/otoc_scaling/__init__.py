"""Out-of-time-ordered correlators near quantum critical points."""
__version__ = "0.1.0"
