"""Cycle-level simulator and toolchain for a 4x4 elastic CGRA."""
__version__ = "0.1.0"
