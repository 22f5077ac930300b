"""Multi-scaling differential contraction integral equation inversion for 2D TM imaging."""

__version__ = "0.1.0"
