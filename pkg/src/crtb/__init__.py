"""Cellwise robust twoblock dimension reduction."""

from .estimator import CrtbConfig, CrtbFit, TwoblockFit, fit_crtb, fit_tb, predict
from .twoblock import TwoblockModel, fit_twoblock

__version__ = "0.1.0"
