"""Battery storage for frequency containment reserve: simulation, ageing, tuning and economics."""

__version__ = "0.1.0"
