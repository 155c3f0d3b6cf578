"""Dementia classification from dimensionally reduced structural MRI.

Per-subject features (tabular metadata, tissue volumes, axial symmetry and
eigenbrain coefficients) feed linear and RBF soft-margin SVMs that are
scored with k-fold cross-validation.
"""

from dementia_svm.errors import ConvergenceError, DataError, PipelineError

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DataError", "PipelineError", "__version__"]
