"""Secret-shared Shapley data valuation with hash-locked fair payment, as a simulator."""

__version__ = "0.1.0"
