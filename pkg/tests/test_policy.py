from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from filippov.policy import BranchPolicy, Choice, PolicyMode
from filippov.system import Branch


def test_refuse_stops():
    assert BranchPolicy.refuse().choose() is None


def test_deterministic_choice():
    pol = BranchPolicy.deterministic("minus", 0.5)
    assert pol.choose() == Choice(0.5, Branch.MINUS)
    assert pol.describe() == {"mode": "deterministic", "branch": "minus", "tau": 0.5}


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        BranchPolicy.deterministic("plus", -1.0)
    with pytest.raises(ValueError):
        BranchPolicy.uniform_random(0, tau_cap=-1.0)
    with pytest.raises(ValueError):
        BranchPolicy.enumerate_grid(0)


def test_enumerate_grid_is_set_valued():
    pol = BranchPolicy.enumerate_grid(4)
    assert np.allclose(pol.tau_grid(2.0), [0, 0.5, 1, 1.5, 2])
    with pytest.raises(ValueError):
        pol.choose()


@given(seed=st.integers(0, 2**32 - 1), cap=st.floats(0.0, 20.0))
def test_random_draws_in_range_and_reproducible(seed, cap):
    a = BranchPolicy.uniform_random(seed, cap)
    b = BranchPolicy.uniform_random(seed, cap)
    da = [a.choose() for _ in range(5)]
    assert da == [b.choose() for _ in range(5)]
    assert all(0.0 <= c.tau <= cap for c in da)
    assert a.draws == da


def test_per_orbit_streams_independent_of_count():
    master = BranchPolicy.uniform_random(42)
    a = master.for_orbit(3, 10).choose()
    b = master.for_orbit(3, 100).choose()
    c = master.for_orbit(4, 10).choose()
    assert a == b
    assert a != c
    # spawning does not consume the master stream
    assert master.draws == []


def test_both_branches_drawn():
    pol = BranchPolicy.uniform_random(1)
    branches = {pol.choose().branch for _ in range(50)}
    assert branches == {Branch.PLUS, Branch.MINUS}


def test_describe_random():
    d = BranchPolicy.uniform_random(5, 2.0).describe()
    assert d["mode"] == PolicyMode.UNIFORM_RANDOM.value
    assert d["seed"] == "5" and d["tau_cap"] == 2.0
