"""Adversarial input detection from first-layer current signatures.

A small numpy toolkit covering the full loop: train a desk-scale CNN in two
phases so that the mean absolute first-layer pre-activation (the "SoI", for
sum of column currents) separates clean from adversarial inputs, build a
probability lookup table over that statistic, evaluate detection metrics
under white/black-box attacks, replay the first layer on a behavioral
memristive crossbar model, and account for the detector's energy.
"""

from . import nn, attacks, soi, detector, xbar, energy, data, config, pipeline
from .errors import ConfigError, NumericError, DataFormatError

__all__ = [
    "nn", "attacks", "soi", "detector", "xbar", "energy", "data", "config",
    "pipeline", "ConfigError", "NumericError", "DataFormatError",
]

__version__ = "0.1.0"
