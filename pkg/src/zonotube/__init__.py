"""Data-driven elastic tube MPC with zonotopic model sets."""

__version__ = "0.1.0"
