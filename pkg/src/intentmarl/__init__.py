"""Intent-driven service assurance with goal-conditioned cooperative MARL."""

__version__ = "0.1.0"
