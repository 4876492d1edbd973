"""Dynamic self-triggered output-feedback control for nonlinear networked loops."""

__version__ = "0.1.0"
