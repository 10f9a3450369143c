"""Coverage-guided fuzzing with pluggable mutation oracles."""

__version__ = "0.1.0"
