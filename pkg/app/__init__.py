"""Floored log-linear models with structural risk minimization over interaction order."""
