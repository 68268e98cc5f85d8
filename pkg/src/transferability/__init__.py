"""Transfer measures, generalization bounds and transferability training."""

__version__ = "0.1.0"
