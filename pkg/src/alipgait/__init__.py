"""Reduced-order variable-height ALIP gait planning and control."""

__version__ = "0.1.0"
