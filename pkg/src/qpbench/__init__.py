# Package initialization for qpbench
# src/qpbench/__init__.py
# Protocol-level benchmarking of rectangle-structured quantum chips.

__version__ = "0.1.0"
