"""sketchbench: sketch-to-diagram agent pipeline and evaluation harness."""

__version__ = "0.1.0"
