import numpy as np
import pytest

from entrodyn.dynamics import (
    DynamicsSpec,
    IntegrationError,
    PreconditionError,
    classify_eigenvalues,
    classify_rest_point,
    ed_field,
    field_norm,
    free_energy,
    integrate,
    log_linearity,
    profile_from_scores,
    rate_check,
    score_band,
    score_field,
    scores_from_profile,
    trd_field,
    zd_divergence,
    zd_field,
)
from entrodyn.entropy import GIBBS, DomainError, EntropyKernel, GeneralEntropy
from entrodyn.equilibria import qre_solve
from entrodyn.games import (
    FiniteGame,
    coordination_game,
    matching_pennies,
    random_game,
    random_potential_game,
    zero_game,
)

KERNELS = [GIBBS, EntropyKernel("log"), EntropyKernel("tsallis", 0.5)]
ENTROPIES = KERNELS + [GeneralEntropy("renyi", 0.5)]
ids = [h.label for h in ENTROPIES]


def _interior(rng, game):
    return np.concatenate([rng.dirichlet(np.ones(a)) for a in game.action_counts])


def _sums(game, v):
    return np.array([b.sum() for b in game.split(v)])


def test_zero_payoff_decay(backend):
    spec = DynamicsSpec(zero_game([2]), temperature=1.0)
    assert zd_field(spec, [3.0]) == pytest.approx([-3.0])


def test_zero_temperature_field_is_payoff_gap(rng, backend):
    g = random_game([3, 2], rng)
    spec = DynamicsSpec(g)
    z = rng.normal(size=3)
    u = g.payoff_vectors(g.split(profile_from_scores(spec, z)))
    expect = np.concatenate([uk[1:] - uk[0] for uk in u])
    np.testing.assert_allclose(zd_field(spec, z), expect, atol=1e-14)


def test_field_vanishes_at_qre(backend):
    g = coordination_game(1.0, 2.0)
    x = qre_solve(g, GIBBS, rho=2.0).x
    spec = DynamicsSpec(g, temperature=0.5)
    assert np.max(np.abs(zd_field(spec, scores_from_profile(spec, x)))) < 1e-8


def test_replicator_at_matching_pennies_barycenter():
    g = matching_pennies()
    x = np.array([0.6, 0.4, 0.3, 0.7])
    blocks = g.split(x)
    u = g.payoff_vectors(blocks)
    hand = np.concatenate([xk * (uk - xk @ uk) for xk, uk in zip(blocks, u)])
    np.testing.assert_allclose(ed_field(DynamicsSpec(g), x), hand, atol=1e-15)


def test_single_player_example(backend):
    g = FiniteGame(np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(ed_field(DynamicsSpec(g), [0.5, 0.5]), [0.25, -0.25], atol=1e-15)


@pytest.mark.parametrize("h", ENTROPIES, ids=ids)
def test_zero_game_uniform_is_rest(h):
    g = zero_game([3, 2])
    for T in (-1.0, 0.0, 2.0):
        x = np.array([1 / 3] * 3 + [0.5, 0.5])
        assert field_norm(DynamicsSpec(g, h, T), x) < 1e-14


@pytest.mark.parametrize("h", ENTROPIES, ids=ids)
def test_fields_are_tangent(h, rng, backend):
    g = random_game([2, 3, 2], rng)
    spec = DynamicsSpec(g, h, temperature=0.7, rates=(1.0, 2.0, 0.5))
    for _ in range(20):
        x = _interior(rng, g)
        np.testing.assert_allclose(_sums(g, ed_field(spec, x)), 0.0, atol=1e-12)


@pytest.mark.parametrize("shape", [(2, 2), (2, 3)])
def test_ed_equals_trd_for_gibbs(shape, rng, backend):
    g = random_game(shape, rng)
    for _ in range(100):
        spec = DynamicsSpec(g, temperature=float(rng.uniform(-2, 2)))
        x = _interior(rng, g)
        np.testing.assert_allclose(ed_field(spec, x), trd_field(spec, x), atol=1e-12)


def test_trd_uniform_drops_entropy_term(rng):
    g = random_game([3, 3], rng)
    x = np.full(6, 1 / 3)
    np.testing.assert_allclose(trd_field(DynamicsSpec(g, temperature=5.0), x), trd_field(DynamicsSpec(g), x), atol=1e-15)


@pytest.mark.parametrize("h", KERNELS, ids=[h.label for h in KERNELS])
def test_kernel_closed_form_matches_generic(h, rng, backend):
    g = random_game([3, 2], rng)
    spec = DynamicsSpec(g, h, temperature=0.4, rates=(1.5, 0.5))
    for _ in range(20):
        x = _interior(rng, g)
        np.testing.assert_allclose(ed_field(spec, x), ed_field(spec, x, method="generic"), atol=1e-10)


def test_rates_scale_blocks_linearly(rng):
    g = random_game([3, 2], rng)
    x = _interior(rng, g)
    base = ed_field(DynamicsSpec(g, temperature=0.3), x)
    scaled = ed_field(DynamicsSpec(g, temperature=0.3, rates=(3.0, 1.0)), x)
    np.testing.assert_allclose(scaled[:3], 3 * base[:3], atol=1e-15)
    np.testing.assert_allclose(scaled[3:], base[3:], atol=1e-15)


def test_boundary_profile_rejected():
    with pytest.raises(DomainError):
        ed_field(DynamicsSpec(coordination_game()), [1.0, 0.0, 0.5, 0.5])


def test_invalid_rates():
    with pytest.raises(ValueError):
        DynamicsSpec(coordination_game(), rates=(1.0, 0.0))


def test_score_field_examples():
    spec = DynamicsSpec(zero_game([2]), temperature=2.0)
    np.testing.assert_allclose(score_field(spec, [1.0, 0.5], [2.0, 1.0]), [0.0, 0.0])
    np.testing.assert_allclose(score_field(spec.with_temperature(0.0), [1.0, 0.5], [2.0, 1.0]), [2.0, 1.0])


def test_constant_payoff_closed_form(backend):
    # one player, payoff gap 1 against the benchmark: z(t) = z0 e^{-Tt} + (1 - e^{-Tt}) / T
    g = FiniteGame(np.array([[0.0, 1.0]]))
    T, z0 = 0.5, -2.0
    spec = DynamicsSpec(g, temperature=T)
    traj = integrate(spec, None, 10.0, dt=0.01, z0=[z0], stop_at_rest=False)
    t = traj.times
    exact = z0 * np.exp(-T * t) + (1 - np.exp(-T * t)) / T
    np.testing.assert_allclose(traj.scores[:, 0], exact, atol=1e-8)
    lin = integrate(spec.with_temperature(0.0), None, 5.0, z0=[z0], stop_at_rest=False)
    np.testing.assert_allclose(lin.scores[:, 0], z0 + lin.times, atol=1e-10)


def test_zero_payoff_exponential_decay(backend):
    spec = DynamicsSpec(zero_game([3]), temperature=1.0)
    z0 = np.array([2.0, -1.0])
    traj = integrate(spec, None, 5.0, z0=z0, stop_at_rest=False)
    np.testing.assert_allclose(traj.scores, z0[None, :] * np.exp(-traj.times)[:, None], atol=1e-8)


@pytest.mark.parametrize("h", [GIBBS, EntropyKernel("tsallis", 0.5), GeneralEntropy("renyi", 0.5)], ids=["gibbs", "tsallis", "renyi"])
def test_score_and_strategy_runs_agree(h):
    g = random_game([2, 2], np.random.default_rng(7))
    spec = DynamicsSpec(g, h, temperature=0.3)
    x0 = np.array([0.3, 0.7, 0.6, 0.4])
    a = integrate(spec, x0, 10.0, space="score", stop_at_rest=False)
    b = integrate(spec, x0, 10.0, space="strategy", stop_at_rest=False)
    np.testing.assert_allclose(a.times, b.times)
    np.testing.assert_allclose(a.states, b.states, atol=1e-6)
    np.testing.assert_allclose(b.states.reshape(len(b), 2, 2).sum(axis=2), 1.0, atol=1e-12)


def test_potential_game_converges_to_qre(backend):
    g = random_potential_game([2, 3], np.random.default_rng(3))
    T = 0.4
    spec = DynamicsSpec(g, temperature=T)
    traj = integrate(spec, np.array([0.5, 0.5, 0.2, 0.3, 0.5]), 500.0)
    assert traj.status == "rest"
    assert field_norm(spec, traj.final) < 1e-8
    q = qre_solve(g, GIBBS, rho=1 / T, init=traj.final)
    np.testing.assert_allclose(traj.final, q.x, atol=1e-7)


def test_strategy_mode_reports_boundary_escape():
    spec = DynamicsSpec(coordination_game(), temperature=-1.0)
    with pytest.raises(IntegrationError, match="space='score'"):
        integrate(spec, np.array([0.9, 0.1, 0.9, 0.1]), 200.0, space="strategy", stop_at_rest=False)


def test_score_mode_flags_vertex():
    spec = DynamicsSpec(coordination_game(), temperature=-1.0)
    traj = integrate(spec, np.array([0.9, 0.1, 0.9, 0.1]), 200.0)
    assert traj.status == "vertex"
    assert traj.final[0] > 1 - 1e-12


def test_integrate_argument_checks():
    spec = DynamicsSpec(coordination_game())
    with pytest.raises(ValueError):
        integrate(spec, [0.5, 0.5, 0.5, 0.5], 1.0, dt=0.0)
    with pytest.raises(DomainError):
        integrate(spec, [1.0, 0.0, 0.5, 0.5], 1.0)


@pytest.mark.parametrize("h", ENTROPIES, ids=ids)
def test_free_energy_descends(h):
    g = random_potential_game([2, 2], np.random.default_rng(11))
    spec = DynamicsSpec(g, h, temperature=0.25)
    horizon = 30.0 if spec.decomposable else 5.0
    traj = integrate(spec, np.array([0.2, 0.8, 0.7, 0.3]), horizon, dt=0.01)
    f = np.array([free_energy(spec, x) for x in traj.states])
    assert np.all(np.diff(f) <= 1e-8)


def test_free_energy_zero_temperature_is_minus_potential():
    g = coordination_game()
    x = np.array([0.3, 0.7, 0.4, 0.6])
    u_mix = 0.3 * 0.4 * 1.0 + 0.7 * 0.6 * 1.0
    assert free_energy(DynamicsSpec(g), x) == pytest.approx(-(u_mix - 1.0))


def test_free_energy_stationary_at_rest():
    g = coordination_game(1.0, 2.0)
    spec = DynamicsSpec(g, temperature=0.8)
    traj = integrate(spec, np.array([0.5, 0.5, 0.5, 0.5]), 1000.0)
    x = traj.final
    step = integrate(spec, x, 0.01, stop_at_rest=False)
    assert abs(free_energy(spec, step.final) - free_energy(spec, x)) / 0.01 <= 1e-10


def test_free_energy_requires_potential():
    with pytest.raises(PreconditionError):
        free_energy(DynamicsSpec(matching_pennies()), [0.5, 0.5, 0.5, 0.5])


@pytest.mark.parametrize("shape", [(2, 2), (3, 2), (2, 2, 2)])
def test_divergence_identity(shape, rng, backend):
    g = random_game(shape, rng)
    for T in (-0.7, 0.0, 0.5):
        spec = DynamicsSpec(g, temperature=T)
        for _ in range(50):
            z = rng.normal(scale=2, size=g.reduced_dimension)
            assert zd_divergence(spec, z) == pytest.approx(-g.reduced_dimension * T, abs=1e-5)


def test_divergence_example():
    spec = DynamicsSpec(coordination_game(), temperature=0.5)
    assert zd_divergence(spec, [0.1, -0.3]) == pytest.approx(-1.0, abs=1e-5)


def test_classify_examples():
    assert classify_eigenvalues(np.array([-1.0, -0.5 + 2j])) == "stable"
    assert classify_eigenvalues(np.array([-1.0, 1e-3])) == "unstable"
    assert classify_eigenvalues(np.array([-1.0, 0.0])) == "nonhyperbolic"
    g = zero_game([2, 2])
    x = np.full(4, 0.5)
    rep = classify_rest_point(DynamicsSpec(g, temperature=0.3), x)
    assert rep.tag == "stable"
    np.testing.assert_allclose(rep.eigenvalues.real, -0.3, atol=1e-6)
    assert classify_rest_point(DynamicsSpec(g, temperature=-0.3), x).tag == "unstable"


def test_strict_nash_neighbour_is_stable():
    g = coordination_game()
    q = qre_solve(g, GIBBS, rho=10.0, init=np.array([0.99, 0.01, 0.99, 0.01]))
    assert classify_rest_point(DynamicsSpec(g, temperature=0.1), q.x).tag == "stable"


def test_classify_requires_rest_point():
    with pytest.raises(PreconditionError):
        classify_rest_point(DynamicsSpec(coordination_game(), temperature=0.5), [0.9, 0.1, 0.5, 0.5])


def test_time_reversal_duality():
    g = coordination_game(1.0, 2.0)
    x = qre_solve(g, GIBBS, rho=2.0).x
    assert field_norm(DynamicsSpec(g, temperature=0.5), x) < 1e-8
    assert field_norm(DynamicsSpec(g.negated(), temperature=-0.5), x) < 1e-8


def test_rate_linear_at_zero_temperature():
    g = FiniteGame(np.array([[0.0, 1.0]]))
    spec = DynamicsSpec(g)
    traj = integrate(spec, [0.5, 0.5], 20.0, stop_at_rest=False)
    fit = rate_check(spec, traj)
    assert fit.valid and fit.vertex == (1,)
    assert fit.fitted_gain[0] == pytest.approx(1.0, abs=1e-9)
    assert fit.relative_error < 1e-9


def test_rate_exponential_fit():
    g = coordination_game()
    spec = DynamicsSpec(g, temperature=-0.1)
    traj = integrate(spec, [0.98, 0.02, 0.98, 0.02], 20.0, stop_at_rest=False)
    fit = rate_check(spec, traj)
    assert fit.valid and fit.vertex == (0, 0)
    assert fit.relative_error < 0.05


def test_rate_check_preconditions():
    spec = DynamicsSpec(coordination_game(), temperature=0.5)
    traj = integrate(spec, [0.7, 0.3, 0.7, 0.3], 1.0)
    with pytest.raises(PreconditionError):
        rate_check(spec, traj)


def test_gibbs_escape_is_log_linear():
    g = FiniteGame(np.array([[1.0, 0.0]]))
    spec = DynamicsSpec(g)
    traj = integrate(spec, [0.5, 0.5], 30.0, stop_at_rest=False, record_every=10)
    late = traj.times > 10
    slope, r2 = log_linearity(traj.times[late], 1 - traj.states[late, 0])
    assert slope < 0 and r2 > 0.999


def test_score_band_contains_long_run(rng):
    g = random_game([3, 2], rng)
    spec = DynamicsSpec(g, temperature=0.6)
    band = score_band(spec)
    traj = integrate(spec, None, 60.0, z0=rng.normal(scale=30, size=3), stop_at_rest=False)
    assert np.all(np.abs(traj.scores[-1]) <= band + 1e-6)
    with pytest.raises(PreconditionError):
        score_band(spec.with_temperature(0.0))
