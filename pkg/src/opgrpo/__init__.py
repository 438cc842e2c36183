"""The OPGRPO module. Provides objects and methods for running off-policy group relative
policy optimisation on small flow-matching models."""

__version__ = "0.1.0"
