import numpy as np
import pytest

from gbfbi.functions import FunctionSpecError, make_test_function


def test_gaussian_values():
    f = make_test_function({"kind": "gaussian", "center": [0.2, -0.1], "sigma": 0.5})
    x = np.array([[0.2, -0.1], [0.7, -0.1]])
    assert np.allclose(f(x), [1.0, np.exp(-1.0)])
    assert f.wf == "empty" and not f.in_wf([0.2, -0.1], [1, 0])


def test_jump_values_and_wf():
    f = make_test_function({"kind": "half-plane-jump", "point": [0.1, 0], "normal": [2, 0]})
    assert np.array_equal(f(np.array([[0.0, 0.3], [0.2, -0.5]])), [0.0, 1.0])
    assert f.in_wf([0.1, 0.4], [-3, 0])
    assert not f.in_wf([0.1, 0.4], [1, 1])
    assert not f.in_wf([0.3, 0.0], [1, 0])


def test_cone_and_zero():
    f = make_test_function({"kind": "cone", "center": [0, 0], "alpha": 1.0})
    assert np.allclose(f(np.array([[0.3, 0.4]])), [0.5])
    assert f.in_wf([0, 0], [0.3, -1]) and not f.in_wf([0.1, 0], [1, 0])
    z = make_test_function({"kind": "zero"})
    assert z(np.ones((3, 4, 2))).shape == (3, 4)


def test_unknown_kind():
    with pytest.raises(FunctionSpecError):
        make_test_function({"kind": "sawtooth"})
