"""Finite N-player games in normal form.

Payoffs are stored as one dense array of shape ``(N, A_1, ..., A_N)``;
``payoffs[k][a_1, ..., a_N]`` is the payoff of player ``k`` at that joint
pure profile. Mixed profiles are lists of per-player probability vectors.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_POTENTIAL_TOL = 1e-9


class GameError(ValueError):
    """Malformed game data or out-of-range indices."""


@dataclass(frozen=True, eq=False)
class FiniteGame:
    payoffs: np.ndarray
    name: str = ""
    action_counts: tuple[int, ...] = field(init=False)
    payoff_bounds: tuple[tuple[float, float], ...] = field(init=False)

    def __post_init__(self) -> None:
        u = np.array(self.payoffs, dtype=float)
        if u.ndim < 2:
            raise GameError("payoff array must have shape (N, A_1, ..., A_N)")
        n = u.shape[0]
        if u.ndim != n + 1:
            raise GameError(
                f"payoff array has {u.ndim - 1} action axes for {n} players"
            )
        if any(a < 1 for a in u.shape[1:]):
            raise GameError("every player needs at least one action")
        if not np.all(np.isfinite(u)):
            raise GameError("payoffs must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "payoffs", u)
        object.__setattr__(self, "action_counts", tuple(int(a) for a in u.shape[1:]))
        bounds = tuple((float(u[k].min()), float(u[k].max())) for k in range(n))
        object.__setattr__(self, "payoff_bounds", bounds)

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def num_profiles(self) -> int:
        return math.prod(self.action_counts)

    @property
    def reduced_dimension(self) -> int:
        """A0 = sum_k (|A_k| - 1), the dimension of the strategy polytope."""
        return sum(a - 1 for a in self.action_counts)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.action_counts)]).astype(np.intp)

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        off = self.offsets
        return [np.asarray(flat[off[k] : off[k + 1]]) for k in range(self.num_players)]

    def flatten(self, profile: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float) for p in profile])

    def pure_profiles(self):
        return itertools.product(*(range(a) for a in self.action_counts))

    def validate_profile(self, x: Sequence[np.ndarray], tol: float = 1e-9) -> list[np.ndarray]:
        if len(x) != self.num_players:
            raise GameError(f"profile has {len(x)} blocks, game has {self.num_players} players")
        out = []
        for k, (xk, a) in enumerate(zip(x, self.action_counts)):
            xk = np.asarray(xk, dtype=float)
            if xk.shape != (a,):
                raise GameError(f"player {k}: expected {a} probabilities, got shape {xk.shape}")
            if np.any(xk < -tol) or abs(xk.sum() - 1.0) > tol:
                raise GameError(f"player {k}: not a probability vector")
            out.append(xk)
        return out

    def payoff_vectors(self, x: Sequence[np.ndarray]) -> list[np.ndarray]:
        """u_k(alpha; x_{-k}) for every player k and own action alpha."""
        n = self.num_players
        out = []
        for k in range(n):
            t = self.payoffs[k]
            # contract from the last axis so lower axis numbers stay valid
            for j in reversed(range(n)):
                if j != k:
                    t = np.tensordot(t, x[j], axes=([j], [0]))
            out.append(np.asarray(t, dtype=float))
        return out

    def restrict(self, support: Sequence[Sequence[int]]) -> "FiniteGame":
        """Sub-game on the given per-player action subsets."""
        if len(support) != self.num_players:
            raise GameError("support needs one action subset per player")
        idx = []
        for k, s in enumerate(support):
            s = sorted(int(a) for a in s)
            if not s:
                raise GameError(f"player {k}: empty support")
            if s[0] < 0 or s[-1] >= self.action_counts[k]:
                raise GameError(f"player {k}: support index out of range")
            idx.append(s)
        sub = self.payoffs[(slice(None),) + np.ix_(*idx)]
        return FiniteGame(sub, name=f"{self.name}|restricted" if self.name else "")

    def negated(self) -> "FiniteGame":
        return FiniteGame(-self.payoffs, name=f"-{self.name}" if self.name else "")


def expected_payoff(game: FiniteGame, x: Sequence[np.ndarray], player: int, action: int) -> float:
    if not 0 <= player < game.num_players:
        raise GameError(f"player index {player} out of range")
    if not 0 <= action < game.action_counts[player]:
        raise GameError(f"action index {action} out of range for player {player}")
    x = game.validate_profile(x)
    return float(game.payoff_vectors(x)[player][action])


def potential_value(game: FiniteGame, potential: np.ndarray, x: Sequence[np.ndarray]) -> float:
    """Multilinear extension U(x) of a potential defined on pure profiles."""
    t = np.asarray(potential, dtype=float).reshape(game.action_counts)
    for j in reversed(range(game.num_players)):
        t = np.tensordot(t, x[j], axes=([j], [0]))
    return float(t)


@dataclass(frozen=True)
class PotentialCertificate:
    potential_values: np.ndarray
    residual: float
    tol: float

    @property
    def is_potential(self) -> bool:
        return self.residual <= self.tol


def _deviation_system(game: FiniteGame):
    shape = game.action_counts
    p = game.num_profiles
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for flat, prof in enumerate(game.pure_profiles()):
        for k, a_k in enumerate(shape):
            for b in range(prof[k] + 1, a_k):
                dev = list(prof)
                dev[k] = b
                j = int(np.ravel_multi_index(dev, shape))
                rows += [r, r]
                cols += [j, flat]
                vals += [1.0, -1.0]
                rhs.append(game.payoffs[(k, *dev)] - game.payoffs[(k, *prof)])
                r += 1
    a = np.zeros((r + 1, p))
    a[rows, cols] = vals
    a[r, 0] = 1.0  # anchor U(first profile) = 0
    return a, np.array(rhs + [0.0])


def fit_potential(game: FiniteGame, tol: float = DEFAULT_POTENTIAL_TOL) -> PotentialCertificate:
    """Least-squares potential over unilateral pure deviations.

    The residual is the largest violation of
    ``u_k(b, a_-k) - u_k(a) = U(b, a_-k) - U(a)`` over all pure profiles.
    ``tol`` is relative to the largest per-player payoff span, so the flag
    is insensitive to the payoff scale.
    """
    if tol <= 0:
        raise GameError("tol must be positive")
    a, b = _deviation_system(game)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    sol = sol - sol[0]
    resid = float(np.max(np.abs(a[:-1] @ sol - b[:-1]))) if len(b) > 1 else 0.0
    span = max([hi - lo for lo, hi in game.payoff_bounds] + [1.0])
    return PotentialCertificate(sol.reshape(game.action_counts), resid, tol * span)


def congestion_game(
    resources: int,
    delay_functions: Sequence[Sequence[float]],
    routes: Sequence[Sequence[Sequence[int]]],
) -> FiniteGame:
    """Congestion game: action = route, payoff = minus the summed resource delays.

    ``delay_functions[r][l - 1]`` is the delay on resource ``r`` under load ``l``.
    """
    n = len(routes)
    if n < 1:
        raise GameError("need at least one player")
    if len(delay_functions) != resources:
        raise GameError(f"expected {resources} delay lists, got {len(delay_functions)}")
    delays = [np.asarray(d, dtype=float) for d in delay_functions]
    for r, d in enumerate(delays):
        if d.ndim != 1 or len(d) < n:
            raise GameError(f"resource {r}: delays must cover loads 1..{n}")
    for k, rk in enumerate(routes):
        if not rk:
            raise GameError(f"player {k} has no routes")
        for route in rk:
            for res in route:
                if not 0 <= int(res) < resources:
                    raise GameError(f"player {k}: route references unknown resource {res}")
    shape = tuple(len(rk) for rk in routes)
    u = np.zeros((n,) + shape)
    for prof in itertools.product(*(range(a) for a in shape)):
        load = np.zeros(resources, dtype=int)
        for k, a in enumerate(prof):
            for res in routes[k][a]:
                load[int(res)] += 1
        for k, a in enumerate(prof):
            u[(k, *prof)] = -sum(delays[int(res)][load[int(res)] - 1] for res in routes[k][a])
    return FiniteGame(u, name="congestion")


def rosenthal_potential(
    resources: int,
    delay_functions: Sequence[Sequence[float]],
    routes: Sequence[Sequence[Sequence[int]]],
) -> np.ndarray:
    """Minus the Rosenthal potential on every joint route profile."""
    shape = tuple(len(rk) for rk in routes)
    phi = np.zeros(shape)
    for prof in itertools.product(*(range(a) for a in shape)):
        load = np.zeros(resources, dtype=int)
        for k, a in enumerate(prof):
            for res in routes[k][a]:
                load[int(res)] += 1
        phi[prof] = -sum(
            sum(delay_functions[r][l] for l in range(load[r])) for r in range(resources)
        )
    return phi


@dataclass(frozen=True)
class AffineMap:
    offset: float
    scale: float
    degenerate: bool = False

    def __call__(self, v):
        if self.degenerate:
            return np.full_like(np.asarray(v, dtype=float), self.offset)
        return self.scale * np.asarray(v, dtype=float) + self.offset


def normalize_payoffs(game: FiniteGame) -> tuple[FiniteGame, list[AffineMap]]:
    """Rescale each player's payoffs affinely onto [0, 1].

    Constant payoffs map to 0.5 and the map is flagged degenerate.
    """
    maps = []
    u = np.empty_like(game.payoffs)
    for k, (lo, hi) in enumerate(game.payoff_bounds):
        if hi > lo:
            s = 1.0 / (hi - lo)
            m = AffineMap(offset=-lo * s, scale=s)
        else:
            m = AffineMap(offset=0.5, scale=0.0, degenerate=True)
        u[k] = np.clip(m(game.payoffs[k]), 0.0, 1.0)
        maps.append(m)
    return FiniteGame(u, name=game.name), maps


# -- stock games ------------------------------------------------------------


def coordination_game(a: float = 1.0, b: float = 1.0) -> FiniteGame:
    """Symmetric 2x2 coordination game with diagonal payoffs (a, b)."""
    m = np.array([[a, 0.0], [0.0, b]])
    return FiniteGame(np.stack([m, m]), name="coordination")


def matching_pennies() -> FiniteGame:
    m = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return FiniteGame(np.stack([m, -m]), name="matching_pennies")


def zero_game(action_counts: Sequence[int]) -> FiniteGame:
    return FiniteGame(np.zeros((len(action_counts), *action_counts)), name="zero")


def identical_interest(potential: np.ndarray) -> FiniteGame:
    u = np.asarray(potential, dtype=float)
    return FiniteGame(np.stack([u] * u.ndim), name="identical_interest")


def random_game(action_counts: Sequence[int], rng: np.random.Generator) -> FiniteGame:
    n = len(action_counts)
    return FiniteGame(rng.uniform(-1, 1, size=(n, *action_counts)), name="random")


def random_potential_game(action_counts: Sequence[int], rng: np.random.Generator) -> FiniteGame:
    """Potential plus player-specific dummy terms (exact potential game)."""
    n = len(action_counts)
    pot = rng.uniform(0, 1, size=tuple(action_counts))
    u = np.empty((n, *action_counts))
    for k in range(n):
        other = list(action_counts)
        other[k] = 1
        u[k] = pot + 0.5 * rng.uniform(0, 1, size=tuple(other))
    return FiniteGame(u, name="random_potential")


# -- file format ------------------------------------------------------------


def game_from_dict(data: dict) -> FiniteGame:
    if "congestion" in data:
        c = data["congestion"]
        try:
            return congestion_game(int(c["resources"]), c["delays"], c["routes"])
        except KeyError as exc:
            raise GameError(f"congestion block missing key {exc}") from None
    try:
        n = int(data["players"])
        actions = [int(a) for a in data["actions"]]
        payoffs = data["payoffs"]
    except KeyError as exc:
        raise GameError(f"game definition missing key {exc}") from None
    if len(actions) != n:
        raise GameError(f"'actions' lists {len(actions)} players, 'players' says {n}")
    if len(payoffs) != n:
        raise GameError(f"'payoffs' has {len(payoffs)} blocks for {n} players")
    blocks = []
    for k, p in enumerate(payoffs):
        try:
            arr = np.asarray(p, dtype=float)
        except (TypeError, ValueError):
            raise GameError(f"player {k}: payoffs are not a rectangular numeric array") from None
        if arr.shape != tuple(actions):
            raise GameError(f"player {k}: payoff shape {arr.shape} != {tuple(actions)}")
        blocks.append(arr)
    return FiniteGame(np.stack(blocks), name=str(data.get("name", "")))


def game_to_dict(game: FiniteGame) -> dict:
    return {
        "players": game.num_players,
        "actions": list(game.action_counts),
        "payoffs": [game.payoffs[k].tolist() for k in range(game.num_players)],
    }


def load_game(path: str | Path) -> FiniteGame:
    with open(path) as fh:
        return game_from_dict(json.load(fh))
