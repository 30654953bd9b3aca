"""Leader-follower STL control via time-varying fixed-time barrier functions."""

__version__ = "0.1.0"
