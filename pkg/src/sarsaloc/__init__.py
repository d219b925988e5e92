"""Energy-aware adaptive RSS localisation driven by a boosted SARSA agent."""

__version__ = "0.1.0"
