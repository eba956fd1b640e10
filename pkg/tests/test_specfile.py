import numpy as np
import pytest
from conftest import rand_mdp

from ldx.envs import build_gridworld, build_hard_instance
from ldx.errors import RepresentationError, ValidationError
from ldx.linear import one_hot_embedding
from ldx.mdp import TabularMdp
from ldx.specfile import (dumps, linear_from_dict, linear_to_dict, load_linear, load_mdp, loads,
                          save_linear, save_mdp)


def test_round_trip_bit_exact(rng, tmp_path):
    for m in (rand_mdp(3, 2, rng), build_gridworld(), build_hard_instance()):
        again = loads(dumps(m))
        assert again == m
        assert np.array_equal(again.transitions, m.transitions)
        save_mdp(m, tmp_path / "m.json")
        assert load_mdp(tmp_path / "m.json") == m


def test_bernoulli_broadcast():
    m = TabularMdp(np.ones((1, 2, 1)), [[0.3, 0.6]], 0.0, True, 0.5)
    d = loads(dumps(m))
    assert d.bernoulli.all()
    assert '"kind": "bernoulli"' in dumps(m)


def test_missing_key():
    with pytest.raises(ValidationError, match="reward_noise"):
        loads('{"gamma": 0.5, "num_states": 1, "num_actions": 1, "transitions": [[[1.0]]], '
              '"reward_means": [[0.0]]}')


def test_linear_round_trip(rng, tmp_path):
    lin = one_hot_embedding(rand_mdp(2, 2, rng))
    back = linear_from_dict(linear_to_dict(lin))
    assert np.array_equal(back.phi, lin.phi) and np.array_equal(back.mu, lin.mu)
    save_linear(lin, tmp_path / "lin.json")
    assert np.array_equal(load_linear(tmp_path / "lin.json").theta, lin.theta)
    d = linear_to_dict(lin)
    d["d"] = 3
    with pytest.raises(ValidationError):
        linear_from_dict(d)
    assert isinstance(RepresentationError("x"), ValueError)
