"""Continuous-time entropy-driven dynamics, RK4 integration and diagnostics.

Vector fields operate on flat arrays: a strategy profile is the
concatenation of the per-player probability vectors, a relative-score
vector is the concatenation of the per-player reduced vectors
``z_k = y_k[1:] - y_k[0]`` (length ``A0 = sum_k (|A_k| - 1)``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .entropy import (
    GIBBS,
    DomainError,
    Entropy,
    EntropyKernel,
    NumericalFailure,
    choice_map,
    hessian_inverse_reduced,
    reduced_gradient,
    scores_from_relative,
)
from .games import FiniteGame, PotentialCertificate, fit_potential, potential_value

REST_TOL = 1e-8
Z_CAP = 700.0
STRATEGY_FLOOR = 1e-14


class IntegrationError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DynamicsSpec:
    game: FiniteGame
    entropy: Entropy = GIBBS
    temperature: float = 0.0
    rates: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        rates = self.rates
        if rates is None:
            rates = (1.0,) * self.game.num_players
        rates = tuple(float(r) for r in rates)
        if len(rates) != self.game.num_players:
            raise ValueError("need one rate per player")
        if any(not r > 0 for r in rates):
            raise ValueError("rates must be positive")
        object.__setattr__(self, "rates", rates)

    @property
    def decomposable(self) -> bool:
        return isinstance(self.entropy, EntropyKernel)

    @functools.cached_property
    def _arrays(self):
        g = self.game
        u2 = np.ascontiguousarray(g.payoffs.reshape(g.num_players, -1))
        shape = np.array(g.action_counts, dtype=np.intp)
        temps = np.full(g.num_players, float(self.temperature))
        return u2, shape, g.offsets, temps, np.array(self.rates)

    def with_temperature(self, temperature: float) -> "DynamicsSpec":
        return DynamicsSpec(self.game, self.entropy, temperature, self.rates)


# -- coordinates ----------------------------------------------------------------


def as_flat(game: FiniteGame, x) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return x.astype(float, copy=False)
    if len(x) and np.ndim(x[0]) == 0:
        return np.asarray(x, dtype=float)
    return game.flatten(x)


def split_reduced(game: FiniteGame, z) -> list[np.ndarray]:
    out, r = [], 0
    for a in game.action_counts:
        out.append(np.asarray(z[r : r + a - 1], dtype=float))
        r += a - 1
    return out


def profile_from_scores(spec: DynamicsSpec, z) -> np.ndarray:
    """Flat profile Q(0, z_k) for every player."""
    return np.concatenate(
        [choice_map(spec.entropy, scores_from_relative(zk)) for zk in split_reduced(spec.game, z)]
    )


def scores_from_profile(spec: DynamicsSpec, x) -> np.ndarray:
    """Relative scores z_k = F_0(x_k[1:]) of an interior profile."""
    blocks = spec.game.split(as_flat(spec.game, x))
    return np.concatenate([reduced_gradient(spec.entropy, xk[1:]) for xk in blocks])


def _check_interior(game: FiniteGame, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError("profile must be strictly interior")


# -- vector fields ----------------------------------------------------------------


def zd_field(spec: DynamicsSpec, z, x_of_z=None) -> np.ndarray:
    """Relative-score field eta_k (Delta u_k(x) - T z_k) with x = Q(z)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("relative scores must be finite")
    g = spec.game
    if x_of_z is None and spec.decomposable:
        u2, shape, off, temps, rates = spec._arrays
        out = np.empty(len(z))
        xbuf = np.empty(int(off[-1]))
        st = kernels.backend.zd_field(u2, shape, off, spec.entropy.code, spec.entropy.q, temps, rates, z, out, xbuf)
        if st != 0:
            raise NumericalFailure("choice map failed inside the score field", z)
        return out
    x = profile_from_scores(spec, z) if x_of_z is None else as_flat(g, x_of_z)
    u = g.payoff_vectors(g.split(x))
    parts = []
    for k, (uk, zk) in enumerate(zip(u, split_reduced(g, z))):
        parts.append(spec.rates[k] * (uk[1:] - uk[0] - spec.temperature * zk))
    return np.concatenate(parts) if parts else np.zeros(0)


def ed_field(spec: DynamicsSpec, x, method: str = "auto") -> np.ndarray:
    """Entropy-driven field in strategy space (flat, per-player sums zero).

    ``method="generic"`` pushes the score field through the inverse reduced
    Hessian; the default uses the kernel closed form when available.
    """
    g = spec.game
    x = as_flat(g, x)
    _check_interior(g, x)
    if method == "auto" and spec.decomposable:
        u2, shape, off, temps, rates = spec._arrays
        out = np.empty(len(x))
        kernels.backend.ed_theta_field(u2, shape, off, spec.entropy.code, spec.entropy.q, temps, rates, x, out)
        return out
    if method not in ("auto", "generic"):
        raise ValueError(f"unknown method {method!r}")
    blocks = g.split(x)
    u = g.payoff_vectors(blocks)
    parts = []
    for k, (xk, uk) in enumerate(zip(blocks, u)):
        w = xk[1:]
        zk = reduced_gradient(spec.entropy, w)
        v = spec.rates[k] * hessian_inverse_reduced(spec.entropy, w) @ (uk[1:] - uk[0] - spec.temperature * zk)
        parts.append(np.concatenate([[-v.sum()], v]))
    return np.concatenate(parts)


def trd_field(spec: DynamicsSpec, x) -> np.ndarray:
    """Temperature-adjusted replicator field (Gibbs kernel closed form)."""
    g = spec.game
    x = as_flat(g, x)
    _check_interior(g, x)
    blocks = g.split(x)
    u = g.payoff_vectors(blocks)
    T = spec.temperature
    parts = []
    for k, (xk, uk) in enumerate(zip(blocks, u)):
        lx = np.log(xk)
        parts.append(spec.rates[k] * (xk * (uk - xk @ uk) - T * xk * (lx - xk @ lx)))
    return np.concatenate(parts)


def score_field(spec: DynamicsSpec, y, u_now) -> np.ndarray:
    return np.asarray(u_now, dtype=float) - spec.temperature * np.asarray(y, dtype=float)


def field_norm(spec: DynamicsSpec, x) -> float:
    return float(np.max(np.abs(ed_field(spec, x))))


# -- integration -------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    representation: str
    status: str
    scores: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.times)


_STATUS = {0: "t_end", 1: "rest", 2: "escaped", 3: "failed", 4: "vertex"}


def _rk4_python(f, v0, dt, n_steps, rest_tol, post=None, stop=None):
    v = np.array(v0, dtype=float)
    out, times = [v.copy()], [0.0]
    status, step = 0, 0
    while True:
        k1 = f(v)
        if len(k1) == 0 or np.max(np.abs(k1)) < rest_tol:
            status = 1
            break
        if step >= n_steps:
            break
        k2 = f(v + 0.5 * dt * k1)
        k3 = f(v + 0.5 * dt * k2)
        k4 = f(v + dt * k3)
        v = v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if post is not None:
            v = post(v)
        step += 1
        out.append(v.copy())
        times.append(step * dt)
        if stop is not None and stop(v):
            status = 4
            break
    return np.array(out), np.array(times), status, step


def integrate(
    spec: DynamicsSpec,
    x0,
    t_end: float,
    dt: float = 0.01,
    space: str = "score",
    stop_at_rest: bool = True,
    rest_tol: float = REST_TOL,
    record_every: int = 1,
    z_cap: float = Z_CAP,
    z0=None,
) -> Trajectory:
    """Classic fixed-step RK4.

    ``space="score"`` integrates the relative scores and maps every record
    through the choice map, so states stay on the simplex exactly.
    ``space="strategy"`` integrates the strategy field directly and
    renormalises each player's block after every step.

    Passing ``z0`` (with ``x0=None``) starts a score-space run from relative
    scores, which reaches starts too close to a vertex to store as
    probabilities.
    """
    if not dt > 0 or not t_end > 0:
        raise ValueError("dt and t_end must be positive")
    g = spec.game
    if z0 is not None:
        if space != "score":
            raise ValueError("a start given in scores needs space='score'")
        z0 = np.asarray(z0, dtype=float)
        if z0.shape != (g.reduced_dimension,) or not np.all(np.isfinite(z0)):
            raise DomainError(f"z0 must be {g.reduced_dimension} finite relative scores")
    else:
        x0 = as_flat(g, x0)
        _check_interior(g, x0)
    n_steps = int(round(t_end / dt))
    tol = rest_tol if stop_at_rest else -1.0
    u2, shape, off, temps, rates = spec._arrays
    if space == "score":
        if z0 is None:
            z0 = scores_from_profile(spec, x0)
        if spec.decomposable:
            zs, times, st, _ = kernels.backend.rk4_score(
                u2, shape, off, spec.entropy.code, spec.entropy.q, temps, rates, z0, dt, n_steps, tol, z_cap, record_every
            )
        else:
            zs, times, st, _ = _rk4_python(
                lambda z: zd_field(spec, z), z0, dt, n_steps, tol, stop=lambda z: bool(np.any(np.abs(z) > z_cap))
            )
            keep = np.unique(np.r_[np.arange(0, len(times), record_every), len(times) - 1])
            zs, times = zs[keep], times[keep]
        if st == 3:
            raise NumericalFailure("score-space integration failed", zs[-1])
        states = _map_scores(spec, zs)
        return Trajectory(times, states, "score", _STATUS[st], scores=zs)
    if space != "strategy":
        raise ValueError(f"unknown space {space!r}")
    if spec.decomposable:
        xs, times, st, _ = kernels.backend.rk4_strategy(
            u2, shape, off, spec.entropy.code, spec.entropy.q, temps, rates, x0, dt, n_steps, tol, STRATEGY_FLOOR, record_every
        )
    else:

        def renorm(v):
            for b in range(g.num_players):
                sl = slice(int(off[b]), int(off[b + 1]))
                v[sl] /= v[sl].sum()
            return v

        def f(v):
            if np.any(v <= 0):
                raise IntegrationError("strategy-space state left the interior; use space='score'")
            return ed_field(spec, v)

        xs, times, st, _ = _rk4_python(f, x0, dt, n_steps, tol, post=renorm, stop=lambda v: bool(np.any(v < STRATEGY_FLOOR)))
        st = 2 if st == 4 else st
    if st == 2:
        raise IntegrationError(
            f"strategy-space state fell below {STRATEGY_FLOOR:g} near t={times[-1]:.4g}; use space='score'"
        )
    if st == 3:
        raise NumericalFailure("strategy-space integration produced non-finite values", xs[-1])
    return Trajectory(times, xs, "strategy", _STATUS[st])


def _map_scores(spec: DynamicsSpec, zs: np.ndarray) -> np.ndarray:
    g = spec.game
    if not spec.decomposable:
        return np.array([profile_from_scores(spec, z) for z in zs])
    code, q = spec.entropy.code, spec.entropy.q
    out = np.empty((len(zs), int(g.offsets[-1])))
    r = 0
    for k, a in enumerate(g.action_counts):
        lo, hi = int(g.offsets[k]), int(g.offsets[k + 1])
        block = np.zeros((len(zs), a))
        block[:, 1:] = zs[:, r : r + a - 1]
        if code == 0:
            e = np.exp(block - block.max(axis=1, keepdims=True))
            out[:, lo:hi] = e / e.sum(axis=1, keepdims=True)
        else:
            tmp = np.empty(a)
            for i in range(len(zs)):
                if kernels.backend.choice_kernel(code, q, np.ascontiguousarray(block[i]), tmp) != 0:
                    raise NumericalFailure("choice map failed while mapping scores", block[i])
                out[i, lo:hi] = tmp
        r += a - 1
    return out


# -- diagnostics ---------------------------------------------------------------------


@functools.lru_cache(maxsize=64)
def _certificate(game: FiniteGame) -> PotentialCertificate:
    return fit_potential(game)


def free_energy(spec: DynamicsSpec, x, certificate: PotentialCertificate | None = None) -> float:
    """F(x) = T * sum_k h(x_k) - U(x) for a potential game."""
    g = spec.game
    cert = certificate if certificate is not None else _certificate(g)
    if not cert.is_potential:
        raise PreconditionError(f"game is not a potential game (residual {cert.residual:.3g})")
    x = as_flat(g, x)
    _check_interior(g, x)
    blocks = g.split(x)
    ent = sum(spec.entropy.h(xk) for xk in blocks)
    return spec.temperature * ent - potential_value(g, cert.potential_values, blocks)


def zd_jacobian(spec: DynamicsSpec, z, step: float = 1e-6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    n = len(z)
    jac = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        jac[:, i] = (zd_field(spec, z + e) - zd_field(spec, z - e)) / (2 * step)
    return jac


def zd_divergence(spec: DynamicsSpec, z, step: float = 1e-5) -> float:
    """Central-difference trace of the score-field Jacobian."""
    return float(np.trace(zd_jacobian(spec, z, step)))


@dataclass(frozen=True)
class RestPointReport:
    eigenvalues: np.ndarray
    tag: str
    scores: np.ndarray

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real)) if len(self.eigenvalues) else float("-inf")


def classify_eigenvalues(eig: np.ndarray, tol: float = 1e-9) -> str:
    re = eig.real
    if np.all(re < -tol):
        return "stable"
    if np.any(re > tol):
        return "unstable"
    return "nonhyperbolic"


def classify_rest_point(spec: DynamicsSpec, x_star, rest_tol: float = REST_TOL) -> RestPointReport:
    x = as_flat(spec.game, x_star)
    nrm = field_norm(spec, x)
    if nrm >= rest_tol:
        raise PreconditionError(f"not a rest point: field norm {nrm:.3e}")
    z = scores_from_profile(spec, x)
    eig = np.linalg.eigvals(zd_jacobian(spec, z)) if len(z) else np.zeros(0)
    return RestPointReport(eig, classify_eigenvalues(eig), z)


@dataclass(frozen=True)
class RateFit:
    valid: bool
    relative_error: float
    fitted_gain: np.ndarray
    predicted_gain: np.ndarray
    vertex: tuple[int, ...]


def _growth(T: float, t: np.ndarray) -> np.ndarray:
    a = abs(T)
    return t if a == 0 else np.expm1(a * t) / a


def rate_check(spec: DynamicsSpec, traj: Trajectory, vertex_prob: float = 0.99) -> RateFit:
    """Compare z(t) with z0 e^{|T|t} + Delta u(q*) (e^{|T|t} - 1)/|T| (T <= 0).

    ``fitted_gain`` is the least-squares coefficient of the growth term when
    the initial level is fitted too;
    ``relative_error`` is the sup-norm mismatch relative to the sup of the model.
    """
    T = spec.temperature
    if T > 0:
        raise PreconditionError("rate check applies to T <= 0")
    if traj.scores is None:
        raise PreconditionError("rate check needs a score-space trajectory")
    g = spec.game
    final = g.split(traj.final)
    vertex = tuple(int(np.argmax(xk)) for xk in final)
    valid = all(xk.max() >= vertex_prob for xk in final)
    pure = [np.eye(a)[v] for a, v in zip(g.action_counts, vertex)]
    du = np.concatenate([uk[1:] - uk[0] for uk in g.payoff_vectors(pure)])
    t = traj.times
    z, z0 = traj.scores, traj.scores[0]
    grow = _growth(T, t)
    model = z0[None, :] * np.exp(abs(T) * t)[:, None] + du[None, :] * grow[:, None]
    rel = float(np.max(np.abs(z - model)) / max(np.max(np.abs(model)), 1e-300))
    basis = np.vstack([grow, np.exp(abs(T) * t)]).T
    coef, *_ = np.linalg.lstsq(basis, z, rcond=None)
    gain = coef[0]
    return RateFit(valid, rel, gain, du, vertex)


def log_linearity(times: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Slope and R^2 of a least-squares line through (t, log values)."""
    y = np.log(values)
    A = np.vstack([times, np.ones_like(times)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(coef[0]), 1.0 - ss_res / ss_tot


def score_band(spec: DynamicsSpec) -> np.ndarray:
    """Per-coordinate bound M_k / T on long-run relative scores (T > 0)."""
    if spec.temperature <= 0:
        raise PreconditionError("score band needs T > 0")
    g = spec.game
    out = []
    for k, a in enumerate(g.action_counts):
        uk = np.moveaxis(g.payoffs[k], k, 0).reshape(a, -1)
        m = float(np.max(np.abs(uk[1:] - uk[0]))) if a > 1 else 0.0
        out.extend([m / spec.temperature] * (a - 1))
    return np.array(out)
