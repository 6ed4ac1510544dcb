"""Oracle-guided multi-mode policy optimisation on planar loco-manipulation tasks."""

__version__ = "0.1.0"
