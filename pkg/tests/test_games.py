import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entrodyn.games import (
    FiniteGame,
    GameError,
    congestion_game,
    coordination_game,
    expected_payoff,
    fit_potential,
    game_from_dict,
    game_to_dict,
    identical_interest,
    load_game,
    matching_pennies,
    normalize_payoffs,
    potential_value,
    random_game,
    random_potential_game,
    rosenthal_potential,
    zero_game,
)


def _simplex(rng, n):
    return rng.dirichlet(np.ones(n))


def test_shape_validation():
    with pytest.raises(GameError):
        FiniteGame(np.zeros(3))
    with pytest.raises(GameError):
        FiniteGame(np.zeros((2, 2)))
    with pytest.raises(GameError):
        FiniteGame(np.array([[[np.nan, 0], [0, 0]], [[0, 0], [0, 0]]]))


def test_payoffs_are_read_only():
    g = coordination_game()
    with pytest.raises(ValueError):
        g.payoffs[0, 0, 0] = 5.0


def test_expected_payoff_pure_and_mixed():
    g = coordination_game()
    e = [np.array([1.0, 0.0]), np.array([1.0, 0.0])]
    assert expected_payoff(g, e, 0, 0) == 1.0
    assert expected_payoff(g, e, 0, 1) == 0.0
    half = [np.array([0.5, 0.5])] * 2
    assert expected_payoff(g, half, 1, 1) == pytest.approx(0.5)


def test_expected_payoff_errors():
    g = matching_pennies()
    x = [np.array([0.5, 0.5])] * 2
    with pytest.raises(GameError):
        expected_payoff(g, x, 2, 0)
    with pytest.raises(GameError):
        expected_payoff(g, x, 0, 5)
    with pytest.raises(GameError):
        expected_payoff(g, [np.array([0.7, 0.7]), x[1]], 0, 0)


def test_expected_payoff_three_players_matches_enumeration(rng):
    g = random_game([2, 3, 2], rng)
    x = [_simplex(rng, a) for a in g.action_counts]
    for k in range(3):
        for a in range(g.action_counts[k]):
            brute = 0.0
            for prof in g.pure_profiles():
                if prof[k] != a:
                    continue
                w = np.prod([x[j][prof[j]] for j in range(3) if j != k])
                brute += w * g.payoffs[(k, *prof)]
            assert expected_payoff(g, x, k, a) == pytest.approx(brute, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_multilinearity(seed, t):
    rng = np.random.default_rng(seed)
    g = random_game([2, 3, 2], rng)
    x = [_simplex(rng, a) for a in g.action_counts]
    k = int(rng.integers(3))
    other = _simplex(rng, g.action_counts[k])
    mix = list(x)
    mix[k] = t * x[k] + (1 - t) * other
    alt = list(x)
    alt[k] = other
    for p in range(3):
        lhs = g.payoff_vectors(mix)[p]
        rhs = t * g.payoff_vectors(x)[p] + (1 - t) * g.payoff_vectors(alt)[p]
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_identical_interest_potential(rng):
    u = rng.normal(size=(2, 3, 2))
    cert = fit_potential(identical_interest(u))
    assert cert.residual <= 1e-12
    assert cert.is_potential
    np.testing.assert_allclose(cert.potential_values, u - u.flat[0], atol=1e-12)


def test_matching_pennies_is_not_potential():
    cert = fit_potential(matching_pennies())
    assert cert.residual > 0.1
    assert not cert.is_potential


def test_fit_potential_rejects_nonpositive_tol():
    with pytest.raises(GameError):
        fit_potential(coordination_game(), tol=0.0)


def test_random_potential_game_is_potential(rng):
    assert fit_potential(random_potential_game([3, 2, 2], rng)).residual <= 1e-12


def test_potential_value_is_multilinear_extension(rng):
    g = random_potential_game([2, 3], rng)
    cert = fit_potential(g)
    x = [_simplex(rng, 2), _simplex(rng, 3)]
    brute = sum(x[0][a] * x[1][b] * cert.potential_values[a, b] for a in range(2) for b in range(3))
    assert potential_value(g, cert.potential_values, x) == pytest.approx(brute, abs=1e-14)


def test_two_link_congestion():
    g = congestion_game(2, [[1, 2], [1, 2]], [[[0], [1]], [[0], [1]]])
    assert fit_potential(g).residual <= 1e-9
    nash = []
    for prof in g.pure_profiles():
        ok = all(
            g.payoffs[(k, *prof)] >= max(g.payoffs[(k, *prof[:k], b, *prof[k + 1 :])] for b in range(2))
            for k in range(2)
        )
        if ok:
            nash.append(prof)
    assert sorted(nash) == [(0, 1), (1, 0)]


def test_three_player_congestion_matches_rosenthal():
    delays = [[1, 2, 3], [1, 2, 3]]
    routes = [[[0], [1]]] * 3
    g = congestion_game(2, delays, routes)
    cert = fit_potential(g)
    assert cert.residual <= 1e-9
    phi = rosenthal_potential(2, delays, routes)
    np.testing.assert_allclose(cert.potential_values, phi - phi.flat[0], atol=1e-9)


def test_single_player_congestion_potential_is_payoff():
    g = congestion_game(3, [[2], [1], [5]], [[[0, 1], [2], [1]]])
    cert = fit_potential(g)
    np.testing.assert_allclose(cert.potential_values, g.payoffs[0] - g.payoffs[0].flat[0], atol=1e-12)


def test_congestion_errors():
    with pytest.raises(GameError):
        congestion_game(1, [[1, 2]], [[[0], [3]], [[0]]])
    with pytest.raises(GameError):
        congestion_game(1, [[1]], [[[0]], [[0]]])
    with pytest.raises(GameError):
        congestion_game(2, [[1, 2]], [[[0]], [[0]]])


def test_normalize_identity_when_already_unit():
    g = coordination_game()
    ng, maps = normalize_payoffs(g)
    np.testing.assert_array_equal(ng.payoffs, g.payoffs)
    assert all(m.scale == 1.0 and m.offset == 0.0 for m in maps)


def test_normalize_symmetric_range():
    _, maps = normalize_payoffs(matching_pennies())
    for m in maps:
        assert m.scale == 0.5 and m.offset == 0.5


def test_normalize_constant_payoffs():
    g = FiniteGame(np.full((2, 2, 2), 3.0))
    ng, maps = normalize_payoffs(g)
    assert np.all(ng.payoffs == 0.5)
    assert all(m.degenerate for m in maps)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_preserves_best_responses(seed):
    rng = np.random.default_rng(seed)
    g = FiniteGame(rng.normal(scale=10, size=(2, 3, 4)))
    ng, _ = normalize_payoffs(g)
    assert ng.payoffs.min() >= 0 and ng.payoffs.max() <= 1
    for k in range(2):
        for prof in g.pure_profiles():
            sl = list(prof)
            sl[k] = slice(None)
            a, b = g.payoffs[(k, *sl)], ng.payoffs[(k, *sl)]
            assert set(np.flatnonzero(a == a.max())) == set(np.flatnonzero(b == b.max()))


def test_restrict_and_zero_game():
    g = random_game([3, 3], np.random.default_rng(0))
    sub = g.restrict([[0, 2], [1]])
    assert sub.action_counts == (2, 1)
    np.testing.assert_array_equal(sub.payoffs[:, 1, 0], g.payoffs[:, 2, 1])
    with pytest.raises(GameError):
        g.restrict([[], [0]])
    assert zero_game([2, 3]).reduced_dimension == 3


def test_file_round_trip(tmp_path):
    g = random_game([2, 3], np.random.default_rng(1))
    p = tmp_path / "g.json"
    p.write_text(json.dumps(game_to_dict(g)))
    np.testing.assert_array_equal(load_game(p).payoffs, g.payoffs)


@pytest.mark.parametrize(
    "data",
    [
        {"players": 2, "actions": [2, 2]},
        {"players": 2, "actions": [2], "payoffs": [[[0, 0], [0, 0]]] * 2},
        {"players": 2, "actions": [2, 2], "payoffs": [[[0, 0], [0, 0]]]},
        {"players": 2, "actions": [2, 2], "payoffs": [[[0, 0], [0]], [[0, 0], [0, 0]]]},
        {"congestion": {"resources": 1}},
    ],
)
def test_malformed_definitions(data):
    with pytest.raises(GameError):
        game_from_dict(data)


def test_congestion_block_from_dict():
    g = game_from_dict({"congestion": {"resources": 2, "delays": [[1, 2], [1, 2]], "routes": [[[0], [1]], [[0], [1]]]}})
    assert g.action_counts == (2, 2)
