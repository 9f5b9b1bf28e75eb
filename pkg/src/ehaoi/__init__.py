"""Status-update scheduling for energy-harvesting sensors under partial battery knowledge."""

__version__ = "0.1.0"
