"""Quantal response equilibria, rationality continuation, small-game Nash
enumeration, restricted equilibria and temperature scans."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    DynamicsSpec,
    classify_eigenvalues,
    profile_from_scores,
    scores_from_profile,
    zd_field,
    zd_jacobian,
)
from .entropy import GIBBS, Entropy, NumericalFailure, choice_map
from .games import FiniteGame

QRE_TOL = 1e-10
DEDUP_TOL = 1e-6
DAMPING_START = 0.5
DAMPING_FLOOR = 1e-3


@dataclass(frozen=True)
class QrePoint:
    x: np.ndarray
    rationality: float
    residual: float
    support: tuple[tuple[int, ...], ...] | None = None

    def blocks(self, game: FiniteGame) -> list[np.ndarray]:
        return game.split(self.x)


def _uniform(game: FiniteGame) -> np.ndarray:
    return np.concatenate([np.full(a, 1.0 / a) for a in game.action_counts])


def response(game: FiniteGame, entropy: Entropy, rho: float, x: np.ndarray) -> np.ndarray:
    """Q(rho * u(x)) player by player (flat)."""
    u = game.payoff_vectors(game.split(x))
    return np.concatenate([choice_map(entropy, rho * uk) for uk in u])


def qre_residual(game: FiniteGame, entropy: Entropy, rho: float, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.max(np.abs(x - response(game, entropy, rho, x))))


def _relative(game: FiniteGame, rho: float, x: np.ndarray) -> np.ndarray:
    u = game.payoff_vectors(game.split(x))
    return np.concatenate([rho * (uk[1:] - uk[0]) for uk in u])


def _spec(game: FiniteGame, entropy: Entropy) -> DynamicsSpec:
    return DynamicsSpec(game, entropy, 1.0)


def _newton_fixed_point(spec: DynamicsSpec, rho: float, v: np.ndarray, max_iter: int = 50):
    """Solve rho * Delta u(Q(v)) - v = 0 in relative-score space.

    This is the score field at T = 1 with payoffs scaled by rho, so the
    Jacobian comes from the dynamics module's finite differences.
    """
    scaled = DynamicsSpec(FiniteGame(rho * spec.game.payoffs), spec.entropy, 1.0)
    f = lambda w: zd_field(scaled, w)  # noqa: E731
    r = f(v)
    nrm = float(np.max(np.abs(r))) if len(r) else 0.0
    for _ in range(max_iter):
        if nrm < 1e-13 * max(1.0, float(np.max(np.abs(v)))):
            break
        jac = zd_jacobian(scaled, v, step=1e-6 * max(1.0, float(np.max(np.abs(v)))))
        try:
            d = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return v, nrm, False
        t = 1.0
        while t > 1e-8:
            cand = v + t * d
            try:
                rc = f(cand)
            except (NumericalFailure, ValueError):
                t *= 0.5
                continue
            nc = float(np.max(np.abs(rc)))
            if nc < nrm:
                break
            t *= 0.5
        else:
            return v, nrm, nrm < 1e-10
        v, r, nrm = cand, rc, nc
    return v, nrm, True


def qre_solve(
    game: FiniteGame,
    entropy: Entropy = GIBBS,
    rho: float = 1.0,
    init=None,
    tol: float = QRE_TOL,
    max_iter: int = 5000,
    polish: bool = True,
) -> QrePoint:
    """Fixed point x = Q(rho u(x)) reached from ``init``.

    Damped iteration x <- (1-s) x + s Q(rho u(x)) with s halved whenever the
    residual grows, followed by a Newton polish in relative-score space. The
    polish also lets the solver land on unstable fixed points that plain
    iteration cannot reach.
    """
    if rho < 0:
        raise ValueError("rationality must be non-negative")
    if rho == 0:
        return QrePoint(_uniform(game), 0.0, 0.0)
    x = _uniform(game) if init is None else np.asarray(
        init if isinstance(init, np.ndarray) and init.ndim == 1 else game.flatten(init), dtype=float
    )
    if np.any(x <= 0):
        raise ValueError("initial profile must be interior")
    s = DAMPING_START
    g = response(game, entropy, rho, x)
    res = float(np.max(np.abs(g - x)))
    best_x, best_res = x, res
    for _ in range(max_iter):
        if res < tol:
            break
        cand = (1 - s) * x + s * g
        gc = response(game, entropy, rho, cand)
        rc = float(np.max(np.abs(gc - cand)))
        if rc > res:
            s = max(0.5 * s, DAMPING_FLOOR)
            if s == DAMPING_FLOOR and rc > 10 * res:
                break
        x, g, res = cand, gc, rc
        if res < best_res:
            best_x, best_res = x, res
        if polish and res < 1e-4:
            break
    x = best_x
    if polish and game.reduced_dimension:
        spec = _spec(game, entropy)
        v, _, ok = _newton_fixed_point(spec, rho, _relative(game, rho, x))
        if ok:
            xn = profile_from_scores(spec, v)
            rn = qre_residual(game, entropy, rho, xn)
            if rn <= best_res:
                x, best_res = xn, rn
    res = qre_residual(game, entropy, rho, x)
    if not res < tol:
        raise NumericalFailure(f"QRE solver stalled at residual {res:.3e}", x, res)
    return QrePoint(x, float(rho), res)


def dedupe(points: Sequence[np.ndarray], tol: float = DEDUP_TOL) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in out):
            out.append(p)
    return out


# -- continuation --------------------------------------------------------------------


@dataclass
class QPath:
    rhos: list[float] = field(default_factory=list)
    points: list[QrePoint] = field(default_factory=list)
    status: str = "complete"
    terminal_nash: tuple[int, ...] | None = None
    branch_points: list[float] = field(default_factory=list)


def qre_path(
    game: FiniteGame,
    entropy: Entropy = GIBBS,
    rho_max: float = 10.0,
    steps: int = 100,
    max_jump: float = 0.1,
    min_step: float = 1e-6,
) -> QPath:
    """Predictor-corrector continuation of the QRE branch from rho = 0.

    Step sizes are halved on corrector failure or on a jump larger than
    ``max_jump`` (sup norm in strategies) and the path is truncated with
    status ``"fold"`` once the step drops below ``min_step``. Sign changes of
    the corrector Jacobian determinant are recorded as ``branch_points``.
    """
    if not rho_max > 0:
        raise ValueError("rho_max must be positive")
    spec = _spec(game, entropy)
    path = QPath()
    x = _uniform(game)
    path.rhos.append(0.0)
    path.points.append(QrePoint(x, 0.0, 0.0))
    v_prev = v = np.zeros(game.reduced_dimension)
    rho_prev = rho = 0.0
    h = rho_max / steps
    det_sign = None
    while rho < rho_max - 1e-15:
        step = min(h, rho_max - rho)
        target = rho + step
        if rho > 0:
            pred = v + (v - v_prev) * (step / (rho - rho_prev))
        else:
            pred = _relative(game, target, x)
        vn, nrm, ok = _newton_fixed_point(spec, target, pred)
        xn = profile_from_scores(spec, vn) if ok else None
        if not ok or np.max(np.abs(xn - x)) > max_jump:
            h = 0.5 * step
            if h < min_step:
                path.status = "fold"
                break
            continue
        scaled = DynamicsSpec(FiniteGame(target * game.payoffs), entropy, 1.0)
        if len(vn):
            sgn = np.sign(np.linalg.det(zd_jacobian(scaled, vn)))
            if det_sign is not None and sgn != det_sign:
                path.branch_points.append(0.5 * (rho + target))
            det_sign = sgn
        v_prev, rho_prev = v, rho
        v, rho, x = vn, target, xn
        path.rhos.append(rho)
        path.points.append(QrePoint(x, rho, qre_residual(game, entropy, rho, x)))
        h = min(2 * step, rho_max / steps)
    if path.status == "complete" and path.branch_points:
        path.status = "branch_point"
    path.terminal_nash = _nash_candidate(game, x)
    return path


def _nash_candidate(game: FiniteGame, x: np.ndarray) -> tuple[int, ...] | None:
    prof = tuple(int(np.argmax(xk)) for xk in game.split(x))
    return prof if is_pure_nash(game, prof) else None


# -- Nash enumeration -------------------------------------------------------------------


def is_pure_nash(game: FiniteGame, profile: Sequence[int], strict: bool = False) -> bool:
    for k in range(game.num_players):
        idx = list(profile)
        idx[k] = slice(None)
        row = game.payoffs[(k, *idx)]
        own = row[profile[k]]
        others = np.delete(row, profile[k])
        if others.size and (np.any(others >= own) if strict else np.any(others > own + 1e-12)):
            return False
    return True


@dataclass(frozen=True)
class NashReport:
    profiles: list[list[np.ndarray]]
    complete: bool


def nash_enumerate_small(game: FiniteGame, max_profiles: int = 10_000) -> NashReport:
    """Pure equilibria by deviation checks; for 2x2 games also the interior
    equilibrium from the indifference conditions. ``complete`` is False when
    mixed equilibria were not searched."""
    if game.num_profiles > max_profiles:
        raise ValueError(f"game has {game.num_profiles} pure profiles (limit {max_profiles})")
    eyes = [np.eye(a) for a in game.action_counts]
    found = [[eyes[k][a] for k, a in enumerate(p)] for p in game.pure_profiles() if is_pure_nash(game, p)]
    two_by_two = game.action_counts == (2, 2)
    if two_by_two:
        u1, u2 = game.payoffs
        # player 1 indifferent: q solves q*(u1[0,0]-u1[1,0]) + (1-q)*(u1[0,1]-u1[1,1]) = 0
        a, b = u1[0, 0] - u1[1, 0], u1[0, 1] - u1[1, 1]
        c, d = u2[0, 0] - u2[0, 1], u2[1, 0] - u2[1, 1]
        if a != b and c != d:
            q = b / (b - a)
            p = d / (d - c)
            if 0 < p < 1 and 0 < q < 1:
                found.append([np.array([p, 1 - p]), np.array([q, 1 - q])])
    complete = two_by_two or all(a == 1 for a in game.action_counts)
    return NashReport(found, complete)


def restricted_qre(
    game: FiniteGame,
    entropy: Entropy,
    rho: float,
    support: Sequence[Sequence[int]],
    init=None,
) -> QrePoint:
    """QRE of the sub-game on ``support``, embedded with zeros elsewhere."""
    sub = game.restrict(support)
    pt = qre_solve(sub, entropy, rho, init)
    full = []
    for k, (a, s) in enumerate(zip(game.action_counts, support)):
        xk = np.zeros(a)
        xk[sorted(int(i) for i in s)] = pt.x[sub.offsets[k] : sub.offsets[k + 1]]
        full.append(xk)
    supp = tuple(tuple(sorted(int(i) for i in s)) for s in support)
    return QrePoint(game.flatten(full), pt.rationality, pt.residual, supp)


# -- temperature scans -----------------------------------------------------------------------


@dataclass(frozen=True)
class RestPoint:
    x: np.ndarray
    eigenvalues: np.ndarray
    tag: str

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real)) if len(self.eigenvalues) else float("-inf")


@dataclass
class ScanRow:
    temperature: float
    rest_points: list[RestPoint]
    attracting_vertices: list[tuple[int, ...]]


@dataclass
class ScanResult:
    rows: list[ScanRow]
    critical_temperatures: list[float]


def seed_grid(game: FiniteGame, n: int = 21) -> list[np.ndarray]:
    axis = np.linspace(0.025, 0.975, n)
    if game.action_counts != (2, 2):
        raise ValueError("seed grid is defined for 2x2 games")
    return [np.array([p, 1 - p, q, 1 - q]) for p in axis for q in axis]


def rest_points(spec: DynamicsSpec, seeds: Sequence[np.ndarray], scan_iter: int = 25) -> list[RestPoint]:
    """Interior rest points of the score field reached by Newton from seeds."""
    game, T = spec.game, spec.temperature
    found = []
    for s in seeds:
        try:
            if T > 0:
                x = qre_solve(game, spec.entropy, 1.0 / T, s, max_iter=scan_iter).x
            else:
                z, nrm, ok = _newton_on_field(spec, scores_from_profile(spec, s))
                if not ok:
                    continue
                x = profile_from_scores(spec, z)
        except (NumericalFailure, ValueError):
            continue
        if np.all(x > 1e-12):
            found.append(x)
    out = []
    for x in sorted(dedupe(found), key=lambda p: tuple(p)):
        z = scores_from_profile(spec, x)
        eig = np.linalg.eigvals(zd_jacobian(spec, z)) if len(z) else np.zeros(0)
        out.append(RestPoint(x, eig, classify_eigenvalues(eig)))
    return out


def _newton_on_field(spec: DynamicsSpec, z: np.ndarray, max_iter: int = 60):
    r = zd_field(spec, z)
    nrm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if nrm < 1e-12:
            return z, nrm, True
        try:
            d = np.linalg.solve(zd_jacobian(spec, z), -r)
        except np.linalg.LinAlgError:
            return z, nrm, False
        t = 1.0
        while t > 1e-8:
            cand = z + t * d
            if np.all(np.abs(cand) < 600):
                rc = zd_field(spec, cand)
                nc = float(np.max(np.abs(rc)))
                if nc < nrm:
                    break
            t *= 0.5
        else:
            return z, nrm, False
        z, r, nrm = cand, rc, nc
    return z, nrm, nrm < 1e-10


def attracting_vertices(spec: DynamicsSpec) -> list[tuple[int, ...]]:
    """Pure profiles that pull in the score flow far out in their corner.

    At distance R beyond the payoff scale each score gap separating the
    vertex action from the others must keep widening (T <= 0 only).
    """
    game, T = spec.game, spec.temperature
    if T > 0:
        return []
    span = max(hi - lo for lo, hi in game.payoff_bounds) + 1.0
    R = 10.0 * span / max(abs(T), 1e-3) if T < 0 else 50.0
    out = []
    for prof in game.pure_profiles():
        zs = []
        for a, v in zip(game.action_counts, prof):
            y = np.full(a, -R)
            y[v] = 0.0
            zs.append(y[1:] - y[0])
        z = np.concatenate(zs)
        dz = zd_field(spec, z)
        ok, r = True, 0
        for a, v in zip(game.action_counts, prof):
            dy = np.concatenate([[0.0], dz[r : r + a - 1]])
            gaps = dy[v] - np.delete(dy, v)
            ok &= bool(np.all(gaps > 0))
            r += a - 1
        if ok:
            out.append(tuple(prof))
    return out


def bifurcation_scan(
    game: FiniteGame,
    entropy: Entropy = GIBBS,
    temperatures: Sequence[float] = (),
    grid: int = 21,
    refine_tol: float = 1e-4,
) -> ScanResult:
    """Rest points and their stability across temperatures (2x2 games).

    Where the count changes between neighbouring positive temperatures the
    crossing is refined by bisection on the largest real eigenvalue of the
    rest point continued from the warmer side.
    """
    seeds = seed_grid(game, grid)
    rows = []
    for T in temperatures:
        spec = DynamicsSpec(game, entropy, float(T))
        rows.append(ScanRow(float(T), rest_points(spec, seeds), attracting_vertices(spec)))
    ordered = sorted(rows, key=lambda r: r.temperature)
    crit = []
    for lo, hi in zip(ordered, ordered[1:]):
        if lo.temperature <= 0 or len(lo.rest_points) == len(hi.rest_points):
            continue
        warm = hi if len(hi.rest_points) < len(lo.rest_points) else lo
        if len(warm.rest_points) != 1:
            continue
        tc = locate_critical_temperature(game, entropy, lo.temperature, hi.temperature, warm.rest_points[0].x, refine_tol)
        if tc is not None:
            crit.append(tc)
    return ScanResult(rows, crit)


def continued_max_eig(game: FiniteGame, entropy: Entropy, T: float, x0: np.ndarray) -> tuple[float, np.ndarray]:
    spec = DynamicsSpec(game, entropy, T)
    x = qre_solve(game, entropy, 1.0 / T, x0).x
    eig = np.linalg.eigvals(zd_jacobian(spec, scores_from_profile(spec, x)))
    return float(np.max(eig.real)), x


def locate_critical_temperature(
    game: FiniteGame,
    entropy: Entropy,
    t_lo: float,
    t_hi: float,
    x_hi: np.ndarray,
    tol: float = 1e-4,
) -> float | None:
    """Bisection for the temperature where the continued rest point loses stability."""
    f_hi, x = continued_max_eig(game, entropy, t_hi, x_hi)
    f_lo, _ = continued_max_eig(game, entropy, t_lo, x)
    if np.sign(f_hi) == np.sign(f_lo):
        return None
    a, b, fa = t_lo, t_hi, f_lo
    while b - a > tol:
        m = 0.5 * (a + b)
        fm, _ = continued_max_eig(game, entropy, m, x)
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def pure_profiles_as_arrays(game: FiniteGame) -> list[np.ndarray]:
    eyes = [np.eye(a) for a in game.action_counts]
    return [game.flatten([eyes[k][a] for k, a in enumerate(p)]) for p in itertools.product(*map(range, game.action_counts))]
