"""Neural-bandit content ranking with personalized embedding features."""

__version__ = "0.1.0"
