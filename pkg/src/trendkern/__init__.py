"""Knowledge-enhanced recurrent trend forecaster."""

__version__ = "0.1.0"
