"""Controller synthesis by expectation-maximization over trajectory posteriors."""

__version__ = "0.1.0"
