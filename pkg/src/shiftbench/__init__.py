"""shiftbench: loss estimation and worst-case search under parametric
shifts of conditional exponential-family mechanisms."""

__version__ = "0.1.0"
