"""navgen: schema-prompted multi-task navigation on procedural graph worlds."""

__version__ = "0.1.0"
