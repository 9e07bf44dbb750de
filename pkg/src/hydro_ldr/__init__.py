"""AdaLASSO-regularized linear decision rules for hydrothermal dispatch."""

__version__ = "0.1.0"
