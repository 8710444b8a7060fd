"""Simulated tool-execution environment with a feedback-driven refinement loop."""

__version__ = "0.1.0"
