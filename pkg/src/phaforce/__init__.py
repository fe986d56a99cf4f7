"""PhaForce: phase-scheduled slow-fast visual-force policy at desk scale."""

__version__ = "0.1.0"
