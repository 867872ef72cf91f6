"""Online-learning GP NARX models inside a stability-gated MPC loop."""

__version__ = "0.1.0"
