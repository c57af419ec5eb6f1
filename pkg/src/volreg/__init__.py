"""Volume-to-surface non-rigid registration toolkit."""

__version__ = "0.1.0"
