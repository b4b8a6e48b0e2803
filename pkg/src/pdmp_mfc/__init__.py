"""Mean-field control of piecewise deterministic heater populations."""

__version__ = "0.1.0"
