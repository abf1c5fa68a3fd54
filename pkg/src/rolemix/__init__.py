"""Role-based, team-size-transferable value mixing for cooperative MARL."""

__version__ = "0.1.0"
