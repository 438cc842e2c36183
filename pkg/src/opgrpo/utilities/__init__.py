"""Utility package. Helpful functionality that doesn't have an obvious home goes here."""

from opgrpo.utilities._options import OptionEnum
from opgrpo.utilities._rng import ControlStream, RngStreams
from opgrpo.utilities._threshold import ThresholdHeuristic
