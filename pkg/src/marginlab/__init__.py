"""Margin generalization bounds: calculators, constructions and Monte Carlo checks."""
from .core import (GENERATOR_ID, STRICT, WEAK, DimensionError, FiniteDistribution,
                   Hyperplane, LabeledExample, RngStream, Sample, SparseVector,
                   SpikedUniformDistribution, empirical_margin_loss, exact_margin_error,
                   exact_out_of_sample_error, sample_from)
from .bounds import BoundInputs, BoundReport, compare_all

__version__ = "0.1.0"

__all__ = [
    "GENERATOR_ID", "STRICT", "WEAK", "DimensionError", "FiniteDistribution", "Hyperplane",
    "LabeledExample", "RngStream", "Sample", "SparseVector", "SpikedUniformDistribution",
    "empirical_margin_loss", "exact_margin_error", "exact_out_of_sample_error",
    "sample_from", "BoundInputs", "BoundReport", "compare_all", "__version__",
]
