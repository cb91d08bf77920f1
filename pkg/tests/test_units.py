import numpy as np
import pytest

from lbtshare.units import db_to_linear, dbm_to_mw, linear_to_db, mw_to_dbm


def test_dbm_round_trip():
    for x in (-92.0, -72.0, 0.0, 23.0):
        assert mw_to_dbm(dbm_to_mw(x)) == pytest.approx(x, abs=1e-12)


def test_known_values():
    assert dbm_to_mw(0.0) == 1.0
    assert dbm_to_mw(30.0) == pytest.approx(1000.0)
    assert dbm_to_mw(23.0) == pytest.approx(199.526231, rel=1e-8)
    assert db_to_linear(3.0) == pytest.approx(1.995262, rel=1e-6)
    assert linear_to_db(100.0) == pytest.approx(20.0)


def test_nonpositive_rejected():
    with pytest.raises(ValueError):
        mw_to_dbm(0.0)
    with pytest.raises(ValueError):
        linear_to_db(-1.0)


def test_vectorized():
    out = dbm_to_mw(np.array([0.0, 10.0]))
    assert np.allclose(out, [1.0, 10.0])
