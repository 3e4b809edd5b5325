"""Voice-nodule detection from sustained phonation: audio conditioning,
spectral and scaling-exponent features, from-scratch classifiers and the
statistics used to compare them."""

__version__ = "0.1.0"
