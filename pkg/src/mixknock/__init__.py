"""Sequential knockoffs for mixed-type covariates."""
__version__ = "0.1.0"
