"""Scenario-guided multi-agent evidence synthesis engine, fully offline-testable."""

__version__ = "0.1.0"
