"""Contention-based spectrum sharing laboratory.

A slot-level simulator of N downlink base stations contending for a shared
unlicensed channel, with 3GPP indoor channel modelling, proportional-fair /
energy-detect baselines and a distributed recurrent Q-learning trainer.
"""

from lbtshare.units import dbm_to_mw, mw_to_dbm

__version__ = "0.1.0"

__all__ = ["dbm_to_mw", "mw_to_dbm", "__version__"]
