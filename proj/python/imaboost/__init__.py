"""Invert multi-class AdaBoost for object detectors."""

from ._imaboost import *  # noqa: F401,F403
from ._imaboost import __doc__  # noqa: F401

__version__ = "0.1.0"
