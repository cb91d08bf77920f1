"""Power unit conversions.

Every dBm <-> linear conversion in the package goes through this module so
that unit conventions cannot drift between the channel, environment and
baseline code. Internal computations use linear milliwatts.
"""

import numpy as np


def dbm_to_mw(dbm):
    """Convert dBm to linear milliwatts."""
    return np.power(10.0, np.asarray(dbm, dtype=np.float64) / 10.0)


def mw_to_dbm(mw):
    """Convert linear milliwatts to dBm. Requires mw > 0."""
    mw = np.asarray(mw, dtype=np.float64)
    if np.any(mw <= 0):
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * np.log10(mw)


def db_to_linear(db):
    """Convert a dB ratio to a linear ratio."""
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def linear_to_db(lin):
    """Convert a linear ratio to dB. Requires lin > 0."""
    lin = np.asarray(lin, dtype=np.float64)
    if np.any(lin <= 0):
        raise ValueError("ratio must be positive to express in dB")
    return 10.0 * np.log10(lin)
