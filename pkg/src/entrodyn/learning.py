"""Discrete-time payoff-based learning: score-based and strategy-based
recursions, asynchronous revisions with delayed payoffs, step-size guards and
convergence statistics over replicates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from .dynamics import as_flat
from .entropy import Entropy, EntropyKernel, choice_map
from .games import FiniteGame

BLOWUP = 1e6

# substream ids so every source of randomness is independent and stable
_ACTIONS, _NOISE, _REVISION, _DELAY, _INIT = range(5)


def substream(seed: int, replicate: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, replicate, stream)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


class LearningError(RuntimeError):
    pass


class SimplexViolation(LearningError):
    pass


# -- schedules, noise, revisions, delays ------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "harmonic"
    c: float = 1.0
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("harmonic", "power", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError("schedule scale c must be positive")
        if self.a < 0:
            raise ValueError("schedule shift a must be non-negative")
        if self.kind == "power" and not 0.5 < self.b <= 1.0:
            raise ValueError("power exponent b must lie in (0.5, 1]")

    @property
    def convergent(self) -> bool:
        """True when the steps are square-summable but not summable."""
        return self.kind != "constant"

    def value(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.kind == "harmonic":
            return self.c / n
        if self.kind == "power":
            return self.c / (self.a + n**self.b)
        return np.full_like(n, self.c)

    def table(self, n_max: int) -> np.ndarray:
        """Array whose entry i is gamma_i (entry 0 unused)."""
        out = np.zeros(n_max + 1)
        out[1:] = self.value(np.arange(1, n_max + 1))
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "StepSchedule":
        kind = cfg.get("kind", "harmonic")
        return cls(kind, float(cfg.get("c", 1.0)), float(cfg.get("a", 0.0)), float(cfg.get("b", 1.0)))


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean payoff noise supported in [-bound, bound].

    ``history`` draws xi(n) = U * bound * (1 + |xi(n-1)|/bound) / 2 with U
    uniform on [-1, 1]: bounded, conditionally zero-mean, not independent.
    """

    kind: str = "none"
    bound: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "uniform", "gaussian", "history"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.bound < 0:
            raise ValueError("noise bound must be non-negative")

    @property
    def support(self) -> float:
        return 0.0 if self.kind == "none" else self.bound

    def sample(self, rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
        if self.kind == "none" or self.bound == 0:
            return np.zeros(shape)
        b = self.bound
        if self.kind == "uniform":
            return rng.uniform(-b, b, size=shape)
        if self.kind == "gaussian":
            return stats.truncnorm.rvs(-2.0, 2.0, scale=b / 2, size=shape, random_state=rng)
        u = rng.uniform(-1.0, 1.0, size=shape)
        out = np.empty(shape)
        prev = np.zeros(shape[1])
        for n in range(shape[0]):
            prev = u[n] * b * (1.0 + np.abs(prev) / b) / 2.0
            out[n] = prev
        return out

    @classmethod
    def from_config(cls, cfg: dict | None) -> "NoiseModel":
        if not cfg:
            return cls()
        return cls(cfg.get("kind", "uniform"), float(cfg.get("bound", 0.0)))


@dataclass(frozen=True)
class RevisionProcess:
    """Which players update at each step.

    Either i.i.d. per-player inclusion probabilities, or a Markov chain over
    revision sets given as 0/1 rows of ``states`` with transition matrix
    ``transition``.
    """

    probabilities: tuple[float, ...] | None = None
    states: np.ndarray | None = None
    transition: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.states is None:
            if self.probabilities is None or any(not 0 < p <= 1 for p in self.probabilities):
                raise ValueError("inclusion probabilities must lie in (0, 1]")
            return
        P = np.asarray(self.transition, dtype=float)
        S = np.asarray(self.states, dtype=np.uint8)
        if P.shape != (len(S), len(S)):
            raise ValueError("transition matrix must be square over the revision sets")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        if not is_ergodic(P):
            raise ValueError("revision chain must be irreducible and aperiodic")
        object.__setattr__(self, "states", S)
        object.__setattr__(self, "transition", P)
        if np.any(self.rates() <= 0):
            raise ValueError("every player must revise with positive stationary rate")

    @classmethod
    def full(cls, n_players: int) -> "RevisionProcess":
        return cls(probabilities=(1.0,) * n_players)

    @property
    def num_players(self) -> int:
        return len(self.probabilities) if self.states is None else self.states.shape[1]

    def stationary(self) -> np.ndarray:
        P = self.transition
        w, v = np.linalg.eig(P.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        return pi / pi.sum()

    def rates(self) -> np.ndarray:
        """Long-run fraction of steps in which each player revises."""
        if self.states is None:
            return np.array(self.probabilities)
        return self.stationary() @ self.states

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.states is None:
            p = np.array(self.probabilities)
            return (rng.random((n, len(p))) < p).astype(np.uint8)
        cum = np.cumsum(self.transition, axis=1)
        u = rng.random(n + 1)
        s = min(int(np.searchsorted(np.cumsum(self.stationary()), u[0], side="right")), len(cum) - 1)
        out = np.empty((n, self.states.shape[1]), dtype=np.uint8)
        for i in range(n):
            s = min(int(np.searchsorted(cum[s], u[i + 1], side="right")), len(cum) - 1)
            out[i] = self.states[s]
        return out

    @classmethod
    def from_config(cls, cfg: dict | None, n_players: int) -> "RevisionProcess":
        if not cfg:
            return cls.full(n_players)
        if "states" in cfg:
            return cls(states=np.array(cfg["states"]), transition=np.array(cfg["transition"]))
        p = cfg.get("probabilities", cfg.get("p", 1.0))
        p = [float(p)] * n_players if np.isscalar(p) else [float(v) for v in p]
        return cls(probabilities=tuple(p))


def is_ergodic(P: np.ndarray) -> bool:
    """Primitive transition matrix test (Wielandt bound on the power)."""
    m = len(P)
    A = (np.asarray(P) > 0).astype(np.int64)
    power = (m - 1) ** 2 + 1
    R = np.eye(m, dtype=np.int64)
    base = A.copy()
    while power:
        if power & 1:
            R = np.minimum(R @ base, 1)
        base = np.minimum(base @ base, 1)
        power >>= 1
    return bool(np.all(R > 0))


@dataclass(frozen=True)
class DelayModel:
    """Bounded delays, i.i.d. uniform on {0, ..., max_delay}."""

    max_delay: int = 0

    def __post_init__(self) -> None:
        if self.max_delay < 0:
            raise ValueError("max delay must be non-negative")

    def sample(self, rng: np.random.Generator, n: int, n_players: int, max_actions: int) -> np.ndarray:
        if self.max_delay == 0:
            return np.zeros((n, n_players, max_actions), dtype=np.int32)
        return rng.integers(0, self.max_delay + 1, size=(n, n_players, max_actions), dtype=np.int32)


# -- runs ---------------------------------------------------------------------------------


@dataclass
class LearnerRun:
    seed: int
    replicate: int
    algorithm: str
    iterations: int
    profiles: np.ndarray
    actions: np.ndarray
    payoffs: np.ndarray
    status: str = "ok"
    scores: np.ndarray | None = None
    normalization: list[tuple[float, float]] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.profiles[-1]


def step_bound(entropy: EntropyKernel, T: float, action_count: int) -> float:
    """Largest step keeping one strategy update inside the simplex.

    Payoffs are assumed to lie in [0, 1]. The Gibbs kernel has the direct
    certificate 1 / (1 + T log|A|); other kernels use the increment bound
    B = (T * max(C, 0) + Theta2_max / m) / m and return 1 / B.
    """
    if not isinstance(entropy, EntropyKernel):
        raise ValueError("step bound needs a decomposable kernel")
    if not T > 0:
        raise ValueError("step bound needs T > 0")
    A = int(action_count)
    if entropy.is_gibbs:
        return 1.0 / (1.0 + T * np.log(A))
    m = entropy.kernel_bound
    if not np.isfinite(m) or m <= 0:
        raise ValueError(f"kernel {entropy.label} has no finite lower bound m")
    xi = np.concatenate([np.logspace(-12, 0, 2000), np.linspace(1.0 / A, 1.0, 200)])
    ratio_sup = float(np.max(np.abs(entropy.dtheta(xi) / entropy.d2theta(xi))))
    second_max = float(np.max(entropy.d2theta(np.linspace(1.0 / A, 1.0, 400))))
    C = float(entropy.dtheta(np.array([1.0]))[0]) + second_max * A * ratio_sup
    B = (T * max(C, 0.0) + second_max / m) / m
    return 1.0 / B


def _normalization(game: FiniteGame, noise: NoiseModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-player (offset, scale) putting realized payoffs in [0, 1].

    Identity when the noisy payoffs already fit. Scaling player k's payoffs
    by s_k while scaling its temperature by s_k multiplies that player's
    mean dynamics by s_k, which leaves rest points and QRE unchanged.
    """
    b = noise.support
    n = game.num_players
    offset, scale = np.zeros(n), np.ones(n)
    for k, (lo, hi) in enumerate(game.payoff_bounds):
        if lo - b >= 0.0 and hi + b <= 1.0:
            continue
        span = hi - lo + 2 * b
        offset[k] = lo - b
        scale[k] = 1.0 / span if span > 0 else 1.0
    return offset, scale


def _check_temperature(T: float, unsafe_zero_temperature: bool) -> None:
    if T > 0:
        return
    if T == 0 and unsafe_zero_temperature:
        return
    raise LearningError(
        "strategy-based learning needs T > 0; T = 0 is allowed only with the unsafe "
        "zero-temperature flag (exponential-weights play need not converge to Nash)"
    )


def _initial(game: FiniteGame, x0, seed: int, replicate: int) -> np.ndarray:
    if x0 is None:
        rng = substream(seed, replicate, _INIT)
        return np.concatenate([rng.dirichlet(np.ones(a)) for a in game.action_counts])
    x0 = as_flat(game, x0)
    if np.any(x0 <= 0):
        raise LearningError("initial profile must have full support")
    return x0


def run_async_learner(
    game: FiniteGame,
    entropy: EntropyKernel,
    T: float,
    schedule: StepSchedule,
    iters: int,
    seed: int,
    revision: RevisionProcess | None = None,
    delay: DelayModel | None = None,
    noise: NoiseModel | None = None,
    x0=None,
    replicate: int = 0,
    unsafe_zero_temperature: bool = False,
    strict: bool = True,
) -> LearnerRun:
    """Strategy-based learning where only revising players update, each with
    its own step counter, using payoffs against delayed opponent actions."""
    if not isinstance(entropy, EntropyKernel):
        raise LearningError("strategy-based learning needs a decomposable kernel")
    _check_temperature(T, unsafe_zero_temperature)
    if iters < 1:
        raise ValueError("iters must be at least 1")
    N = game.num_players
    revision = revision or RevisionProcess.full(N)
    delay = delay or DelayModel()
    noise = noise or NoiseModel()
    if revision.num_players != N:
        raise ValueError("revision process has the wrong number of players")
    offset, scale = _normalization(game, noise)
    shifted = (game.payoffs - offset.reshape((N,) + (1,) * N)) * scale.reshape((N,) + (1,) * N)
    U = np.ascontiguousarray(shifted.reshape(N, -1))
    temps = np.ascontiguousarray(T * scale)
    start = _initial(game, x0, seed, replicate)
    uniforms = substream(seed, replicate, _ACTIONS).random((iters, N))
    eps = noise.sample(substream(seed, replicate, _NOISE), (iters, N)) * scale
    revise = np.ascontiguousarray(revision.sample(substream(seed, replicate, _REVISION), iters))
    delays = delay.sample(substream(seed, replicate, _DELAY), iters, N, max(game.action_counts))
    X = np.empty((iters + 1, int(game.offsets[-1])))
    actions = np.empty((iters, N), dtype=np.int32)
    seen = np.empty((iters, N))
    status, steps = kernels.backend.learn(
        U, np.array(game.action_counts, dtype=np.intp), game.offsets, entropy.code, entropy.q, temps, start,
        schedule.table(iters), uniforms, np.ascontiguousarray(eps), revise, delays, delay.max_delay,
        X, actions, seen,
    )
    label = {0: "ok", 1: "simplex_violation", 2: "non_finite"}[status]
    if status and strict:
        raise SimplexViolation(f"update left the simplex at step {steps} ({label}); reduce the step size")
    seen = seen / np.where(scale > 0, scale, 1.0) + offset
    return LearnerRun(
        seed, replicate, "async" if delay.max_delay or revision.rates().min() < 1 else "strategy",
        steps, X[: steps + 1], actions[:steps], seen[:steps], label,
        normalization=list(zip(offset.tolist(), scale.tolist())),
    )


def run_strategy_learner(
    game: FiniteGame,
    entropy: EntropyKernel,
    T: float,
    schedule: StepSchedule,
    iters: int,
    seed: int,
    noise: NoiseModel | None = None,
    x0=None,
    replicate: int = 0,
    unsafe_zero_temperature: bool = False,
    strict: bool = True,
) -> LearnerRun:
    """Synchronous strategy-based learning: every player samples, observes a
    (possibly noisy) realized payoff and updates all own probabilities."""
    run = run_async_learner(
        game, entropy, T, schedule, iters, seed, None, None, noise, x0, replicate,
        unsafe_zero_temperature, strict,
    )
    run.algorithm = "strategy"
    return run


def run_score_learner(
    game: FiniteGame,
    entropy: Entropy,
    T: float,
    schedule: StepSchedule,
    iters: int,
    seed: int,
    noise: NoiseModel | None = None,
    y0=None,
    replicate: int = 0,
) -> LearnerRun:
    """Score-based learning: only the chosen action's score moves, by the
    importance-weighted step gamma (u_hat - T Y) / X."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    N = game.num_players
    noise = noise or NoiseModel()
    Y = [np.zeros(a) for a in game.action_counts] if y0 is None else [np.array(v, dtype=float) for v in y0]
    uniforms = substream(seed, replicate, _ACTIONS).random((iters, N))
    eps = noise.sample(substream(seed, replicate, _NOISE), (iters, N))
    gam = schedule.table(iters)
    D = int(game.offsets[-1])
    X = np.empty((iters + 1, D))
    scores = np.empty((iters + 1, D))
    actions = np.empty((iters, N), dtype=np.int32)
    seen = np.empty((iters, N))
    cur = [choice_map(entropy, y) for y in Y]
    X[0], scores[0] = np.concatenate(cur), np.concatenate(Y)
    status, done = "ok", iters
    for n in range(iters):
        for k in range(N):
            a = int(np.searchsorted(np.cumsum(cur[k]), uniforms[n, k], side="right"))
            actions[n, k] = min(a, game.action_counts[k] - 1)
        for k in range(N):
            a = int(actions[n, k])
            uhat = game.payoffs[(k, *actions[n])] + eps[n, k]
            seen[n, k] = uhat
            Y[k][a] += gam[n + 1] * (uhat - T * Y[k][a]) / cur[k][a]
        cur = [choice_map(entropy, y) for y in Y]
        X[n + 1], scores[n + 1] = np.concatenate(cur), np.concatenate(Y)
        if max(np.max(np.abs(y)) for y in Y) > BLOWUP:
            status, done = "blowup", n + 1
            break
    return LearnerRun(
        seed, replicate, "score", done, X[: done + 1], actions[:done], seen[:done], status, scores=scores[: done + 1]
    )


def expected_update(
    game: FiniteGame,
    entropy: EntropyKernel,
    T: float,
    gamma: float,
    x,
    noise_values: Sequence[float] = (0.0,),
) -> np.ndarray:
    """Exact mean of one synchronous strategy update, by enumerating joint
    actions (weighted by the profile) and a zero-mean set of noise values."""
    x = np.asarray(x if isinstance(x, np.ndarray) and x.ndim == 1 else game.flatten(x), dtype=float)
    blocks = game.split(x)
    off = game.offsets
    mean = np.zeros_like(x)
    out = np.empty(max(game.action_counts))
    for prof in game.pure_profiles():
        w = float(np.prod([blocks[k][a] for k, a in enumerate(prof)]))
        for k, a in enumerate(prof):
            for e in noise_values:
                buf = out[: game.action_counts[k]]
                kernels.backend.strategy_update(
                    entropy.code, entropy.q, T, gamma, np.ascontiguousarray(blocks[k]), a,
                    float(game.payoffs[(k, *prof)] + e), buf,
                )
                mean[off[k] : off[k + 1]] += w * (buf - blocks[k]) / len(noise_values)
    return mean


# -- statistics -----------------------------------------------------------------------------


@dataclass
class ConvergenceSummary:
    checkpoints: list[int]
    fractions: np.ndarray
    converged: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    monotone: bool
    densities: dict[int, np.ndarray] | None = None


def distance_to_set(x: np.ndarray, refs: Sequence[np.ndarray]) -> float:
    return min(float(np.max(np.abs(x - r))) for r in refs)


def density_grid(points: np.ndarray, bins: int = 50) -> np.ndarray:
    """Counts on a bins x bins grid over the unit square (2x2 portraits)."""
    h, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=bins, range=[[0, 1], [0, 1]])
    return h.astype(np.int64)


def convergence_stats(
    runs: Sequence[LearnerRun],
    qre_refs: Sequence,
    eps: float = 0.01,
    checkpoints: Sequence[int] = (0, 2, 5, 10, 20, 50),
    bootstrap: int = 2000,
    seed: int = 0,
    grid: int | None = None,
) -> ConvergenceSummary:
    """Fraction of runs within ``eps`` (sup norm) of any reference QRE.

    ``monotone`` fails only when some consecutive checkpoint pair shows a
    significant drop: the paired bootstrap 95% upper bound of the change
    is below zero.
    """
    if not runs or not qre_refs:
        raise ValueError("need runs and reference equilibria")
    refs = [np.asarray(getattr(r, "x", r), dtype=float) for r in qre_refs]
    cps = [int(c) for c in checkpoints]
    hit = np.zeros((len(runs), len(cps)), dtype=bool)
    for i, run in enumerate(runs):
        for j, c in enumerate(cps):
            state = run.profiles[min(c, len(run.profiles) - 1)]
            hit[i, j] = distance_to_set(state, refs) < eps
    frac = hit.mean(axis=0)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(runs), size=(bootstrap, len(runs)))
    boot = hit[idx].mean(axis=1)
    lower, upper = np.percentile(boot, [2.5, 97.5], axis=0)
    diffs = np.diff(boot, axis=1)
    monotone = bool(np.all(np.percentile(diffs, 97.5, axis=0) >= 0)) if len(cps) > 1 else True
    dens = None
    if grid:
        dens = {}
        for j, c in enumerate(cps):
            pts = np.array([[r.profiles[min(c, len(r.profiles) - 1)][0], r.profiles[min(c, len(r.profiles) - 1)][2]] for r in runs])
            dens[c] = density_grid(pts, grid)
    return ConvergenceSummary(cps, frac, hit, lower, upper, monotone, dens)
