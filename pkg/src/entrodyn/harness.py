"""Experiment configuration, orchestration and file output.

Every command takes a parsed JSON config, writes CSV/JSON products into an
output directory and returns a small summary dict. CSV files open with a
``#`` metadata line carrying the package version, the config hash and the
seed; JSON files carry the same data under ``"meta"``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .dynamics import DynamicsSpec, IntegrationError, field_norm, free_energy, integrate
from .entropy import EntropyError, EntropyKernel, NumericalFailure, entropy_from_config, entropy_to_config
from .equilibria import (
    ScanRow,
    attracting_vertices,
    bifurcation_scan,
    qre_path,
    qre_residual,
    qre_solve,
    rest_points,
    seed_grid,
)
from .games import (
    FiniteGame,
    GameError,
    coordination_game,
    fit_potential,
    game_from_dict,
    matching_pennies,
    zero_game,
)
from .learning import (
    DelayModel,
    LearningError,
    NoiseModel,
    RevisionProcess,
    StepSchedule,
    convergence_stats,
    run_async_learner,
    run_score_learner,
    run_strategy_learner,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3
FIG2_CHECKPOINTS = (0, 2, 5, 10, 20, 50)


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    pass


NUMERICAL_ERRORS = (NumericalFailure, IntegrationError, LearningError)


# -- config ---------------------------------------------------------------------------


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg.setdefault("_base", str(path.parent))
    return cfg


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


_BUILTIN: dict[str, Callable[..., FiniteGame]] = {
    "coordination": coordination_game,
    "matching_pennies": matching_pennies,
}


def game_of(cfg: dict) -> FiniteGame:
    spec = cfg.get("game")
    if spec is None:
        raise ConfigError("config needs a 'game' entry")
    try:
        if isinstance(spec, str):
            path = Path(spec)
            if not path.is_absolute():
                path = Path(cfg.get("_base", ".")) / path
            if not path.exists():
                raise ConfigError(f"game file {path} does not exist")
            return game_from_dict(json.loads(path.read_text()))
        if "builtin" in spec:
            name = spec["builtin"]
            if name == "zero":
                return zero_game(spec.get("actions", [2, 2]))
            if name not in _BUILTIN:
                raise ConfigError(f"unknown builtin game {name!r}")
            return _BUILTIN[name](**{k: v for k, v in spec.items() if k != "builtin"})
        return game_from_dict(spec)
    except (GameError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"game: {exc}") from None


def entropy_of(cfg: dict):
    try:
        return entropy_from_config(cfg.get("entropy", {"kernel": "gibbs"}))
    except (EntropyError, ValueError) as exc:
        raise ConfigError(f"entropy: {exc}") from None


def _number(cfg: dict, key: str, default=None, positive: bool = False) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        v = float(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must be a number") from None
    if not np.isfinite(v) or (positive and not v > 0):
        raise ConfigError(f"{key!r} must be a {'positive' if positive else 'finite'} number")
    return v


def _profile(game: FiniteGame, value, key: str) -> np.ndarray:
    if value is None:
        return np.concatenate([np.full(a, 1.0 / a) for a in game.action_counts])
    try:
        x = game.flatten(game.validate_profile([np.asarray(v, dtype=float) for v in value]))
    except (GameError, TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return x


def _temperatures(cfg: dict) -> list[float]:
    ts = cfg.get("temperatures")
    if isinstance(ts, dict):
        return [float(t) for t in np.linspace(float(ts["start"]), float(ts["stop"]), int(ts["num"]))]
    if isinstance(ts, list) and ts:
        return [float(t) for t in ts]
    if "T" in cfg:
        return [_number(cfg, "T")]
    raise ConfigError("need 'temperatures' (list or {start, stop, num}) or 'T'")


# -- output ----------------------------------------------------------------------------------


@dataclass
class Output:
    directory: Path
    meta: dict

    def header(self) -> str:
        return "# " + " ".join(f"{k}={v}" for k, v in self.meta.items())

    def csv(self, name: str, columns: Sequence[str], rows) -> Path:
        path = self.directory / name
        with open(path, "w", newline="") as fh:
            fh.write(self.header() + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.directory / name
        with open(path, "w") as fh:
            json.dump({"meta": self.meta, **payload}, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _output(cfg: dict, out_dir: str | Path, seed: int | None) -> Output:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"entrodyn": __version__, "config_sha256": config_hash(cfg), "seed": seed if seed is not None else ""}
    return Output(d, meta)


def _pool_map(fn, items, workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# -- commands ----------------------------------------------------------------------------------


def cmd_simulate(cfg: dict, out_dir, seed=None, check=False) -> dict:
    game, ent = game_of(cfg), entropy_of(cfg)
    T = _number(cfg, "T", 0.0)
    spec = DynamicsSpec(game, ent, T, cfg.get("rates"))
    x0 = _profile(game, cfg.get("x0"), "x0")
    space = cfg.get("space", "score")
    if space not in ("score", "strategy"):
        raise ConfigError("'space' must be 'score' or 'strategy'")
    traj = integrate(
        spec, x0, _number(cfg, "t_end", 10.0, True), _number(cfg, "dt", 0.01, True), space,
        record_every=int(cfg.get("record_every", 10)),
    )
    out = _output(cfg, out_dir, seed)
    rows = []
    for t, x in zip(traj.times, traj.states):
        for k, xk in enumerate(game.split(x)):
            rows.extend([t, k, a, v] for a, v in enumerate(xk))
    out.csv("trajectory.csv", ["t", "player", "action", "prob"], rows)
    cert = fit_potential(game)
    diag = []
    for t, x in zip(traj.times, traj.states):
        interior = x.min() > 0
        fe = free_energy(spec, x, cert) if cert.is_potential and interior else ""
        diag.append([t, fe, field_norm(spec, x) if interior else ""])
    out.csv("diagnostics.csv", ["t", "free_energy", "field_norm"], diag)
    summary = {"status": traj.status, "final": traj.final, "t_final": float(traj.times[-1])}
    if traj.final.min() > 0:
        summary["field_norm"] = field_norm(spec, traj.final)
    if check:
        if T <= 0:
            raise CheckFailure("--check compares against the QRE at rho = 1/T and needs T > 0")
        q = qre_solve(game, ent, 1.0 / T, traj.final)
        gap = float(np.max(np.abs(q.x - traj.final)))
        summary["check_gap"] = gap
        if gap > 1e-6:
            out.json("summary.json", summary)
            raise CheckFailure(f"trajectory endpoint is {gap:.3e} from the QRE solver output")
    out.json("summary.json", summary)
    return summary


def cmd_qre(cfg: dict, out_dir, seed=None, check=False) -> dict:
    game, ent = game_of(cfg), entropy_of(cfg)
    if "rho" in cfg:
        rho = _number(cfg, "rho")
    elif "T" in cfg:
        rho = 1.0 / _number(cfg, "T", positive=True)
    else:
        raise ConfigError("qre needs 'rho' or 'T'")
    if rho < 0:
        raise ConfigError("'rho' must be non-negative")
    init = _profile(game, cfg.get("init"), "init")
    pt = qre_solve(game, ent, rho, init)
    out = _output(cfg, out_dir, seed)
    summary: dict[str, Any] = {"rho": rho, "x": pt.x, "residual": pt.residual}
    if "path" in cfg:
        pc = cfg["path"]
        path = qre_path(game, ent, _number(pc, "rho_max", positive=True), int(pc.get("steps", 100)))
        rows = []
        for r, p in zip(path.rhos, path.points):
            for k, xk in enumerate(game.split(p.x)):
                rows.extend([r, k, a, v] for a, v in enumerate(xk))
        out.csv("qre_path.csv", ["rho", "player", "action", "prob"], rows)
        summary["path"] = {"status": path.status, "terminal_nash": path.terminal_nash, "branch_points": path.branch_points}
    if check:
        res = qre_residual(game, ent, rho, pt.x)
        summary["check_residual"] = res
        if not res < 1e-10:
            out.json("qre.json", summary)
            raise CheckFailure(f"fresh QRE residual {res:.3e} exceeds 1e-10")
        if rho > 0 and pt.x.min() > 0:
            nrm = field_norm(DynamicsSpec(game, ent, 1.0 / rho), pt.x)
            summary["check_field_norm"] = nrm
            if nrm >= 1e-8:
                out.json("qre.json", summary)
                raise CheckFailure(f"QRE is not a rest point: field norm {nrm:.3e}")
    out.json("qre.json", summary)
    return summary


def _learn_one(args):
    game, ent, T, kind, sched, iters, s, noise, revision, delay, unsafe = args
    if kind == "score":
        return run_score_learner(game, ent, T, sched, iters, s, noise)
    if revision is None and delay is None:
        return run_strategy_learner(game, ent, T, sched, iters, s, noise, unsafe_zero_temperature=unsafe)
    return run_async_learner(game, ent, T, sched, iters, s, revision, delay, noise, unsafe_zero_temperature=unsafe)


def cmd_learn(cfg: dict, out_dir, seed=None, check=False, unsafe_zero_temperature=False) -> dict:
    game, ent = game_of(cfg), entropy_of(cfg)
    T = _number(cfg, "T")
    iters = int(_number(cfg, "iters", positive=True))
    kind = cfg.get("algorithm", "strategy")
    if kind not in ("strategy", "score"):
        raise ConfigError("'algorithm' must be 'strategy' or 'score'")
    if kind == "strategy" and not isinstance(ent, EntropyKernel):
        raise ConfigError("strategy-based learning needs a decomposable kernel")
    try:
        sched = StepSchedule.from_config(cfg.get("schedule", {}))
        noise = NoiseModel.from_config(cfg.get("noise"))
        revision = RevisionProcess.from_config(cfg["revision"], game.num_players) if "revision" in cfg else None
        delay = DelayModel(int(cfg["delay"].get("M", 0))) if "delay" in cfg else None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"learning parameters: {exc}") from None
    seeds = [seed] if seed is not None else [int(s) for s in cfg.get("seeds", [0])]
    jobs = [(game, ent, T, kind, sched, iters, s, noise, revision, delay, unsafe_zero_temperature) for s in seeds]
    runs = _pool_map(_learn_one, jobs, int(cfg.get("workers", 0)))
    out = _output(cfg, out_dir, seed)
    amax = max(game.action_counts)
    cols = ["n", "player", "action_chosen", "payoff", *[f"prob_{a}" for a in range(amax)]]
    summary: dict[str, Any] = {"runs": []}
    for run in runs:
        rows = []
        for n in range(run.iterations):
            blocks = game.split(run.profiles[n + 1])
            for k, xk in enumerate(blocks):
                probs = list(xk) + [""] * (amax - len(xk))
                rows.append([n + 1, k, int(run.actions[n, k]), run.payoffs[n, k], *probs])
        out.csv(f"run_seed{run.seed}.csv", cols, rows)
        summary["runs"].append({"seed": run.seed, "status": run.status, "iterations": run.iterations, "final": run.final})
    summary["entropy"] = entropy_to_config(ent)
    if check:
        for run in runs:
            sums = np.array([[b.sum() for b in game.split(x)] for x in run.profiles])
            if run.profiles.min() < 0 or np.max(np.abs(sums - 1)) > 1e-12:
                out.json("summary.json", summary)
                raise CheckFailure(f"seed {run.seed}: recorded profiles left the simplex")
    out.json("summary.json", summary)
    return summary


def _require_2x2(game: FiniteGame, what: str) -> None:
    if game.action_counts != (2, 2):
        raise ConfigError(f"{what} needs a 2x2 game")


def _scan_rows(rows):
    out = []
    for row in rows:
        for i, rp in enumerate(row.rest_points):
            for idx, v in enumerate(rp.x):
                k, a = divmod(idx, 2)
                out.append([row.temperature, i, k, a, v, rp.max_real, rp.tag])
    return out


SCAN_COLUMNS = ["T", "rest_point_id", "player", "action", "prob", "max_eig_real", "tag"]


def cmd_portrait(cfg: dict, out_dir, seed=None, check=False) -> dict:
    game, ent = game_of(cfg), entropy_of(cfg)
    _require_2x2(game, "portrait")
    temps = _temperatures(cfg)
    n = int(cfg.get("grid", 5))
    t_end, dt = _number(cfg, "t_end", 20.0, True), _number(cfg, "dt", 0.01, True)
    every = int(cfg.get("record_every", 10))
    axis = (np.arange(n) + 0.5) / n
    out = _output(cfg, out_dir, seed)
    seeds = seed_grid(game, 11)
    summary: dict[str, Any] = {"temperatures": temps, "endpoints": {}}
    scan = []
    for T in temps:
        spec = DynamicsSpec(game, ent, T)
        rows, ends = [], []
        for i, (p, q) in enumerate((p, q) for p in axis for q in axis):
            traj = integrate(spec, np.array([p, 1 - p, q, 1 - q]), t_end, dt, "score", record_every=every)
            rows.extend([T, i, t, x[0], x[2]] for t, x in zip(traj.times, traj.states))
            ends.append([float(traj.final[0]), float(traj.final[2])])
        out.csv(f"portrait_T{T:g}.csv", ["T", "trajectory", "t", "x1", "x2"], rows)
        summary["endpoints"][f"{T:g}"] = ends
        scan.append(ScanRow(T, rest_points(spec, seeds), attracting_vertices(spec)))
    out.csv("rest_points.csv", SCAN_COLUMNS, _scan_rows(scan))
    summary["attracting_vertices"] = {f"{r.temperature:g}": r.attracting_vertices for r in scan}
    out.json("summary.json", summary)
    return summary


def cmd_bifurcate(cfg: dict, out_dir, seed=None, check=False) -> dict:
    game, ent = game_of(cfg), entropy_of(cfg)
    _require_2x2(game, "bifurcate")
    temps = _temperatures(cfg)
    res = bifurcation_scan(game, ent, temps, int(cfg.get("grid", 21)), _number(cfg, "refine_tol", 1e-4, True))
    out = _output(cfg, out_dir, seed)
    out.csv("scan.csv", SCAN_COLUMNS, _scan_rows(res.rows))
    summary = {
        "critical_temperatures": res.critical_temperatures,
        "counts": {f"{r.temperature:g}": len(r.rest_points) for r in res.rows},
        "attracting_vertices": {f"{r.temperature:g}": r.attracting_vertices for r in res.rows},
    }
    out.json("summary.json", summary)
    return summary


def _fig2_one(args):
    game, ent, T, sched, iters, s, r, x0 = args
    return run_strategy_learner(game, ent, T, sched, iters, s, x0=x0, replicate=r)


def cmd_fig2(cfg: dict, out_dir, seed=None, check=False) -> dict:
    cfg = dict(cfg)
    cfg.setdefault("game", {"builtin": "coordination"})
    game, ent = game_of(cfg), entropy_of(cfg)
    _require_2x2(game, "fig2")
    if not fit_potential(game).is_potential:
        raise ConfigError("fig2 needs a potential game")
    if not isinstance(ent, EntropyKernel):
        raise ConfigError("fig2 needs a decomposable kernel")
    T = _number(cfg, "T", 0.2, True)
    try:
        sched = StepSchedule.from_config(cfg.get("schedule", {"kind": "power", "c": 1.0, "a": 5.0, "b": 0.6}))
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    cps = sorted(int(c) for c in cfg.get("checkpoints", FIG2_CHECKPOINTS))
    reps = int(cfg.get("replicates", 1000))
    eps = _number(cfg, "eps", 0.01, True)
    grid = int(cfg.get("density_grid", 50))
    s = int(seed if seed is not None else cfg.get("seed", 0))
    iters = max(max(cps), 1)
    x0 = _profile(game, cfg.get("x0"), "x0") if "x0" in cfg else None
    refs = [rp.x for rp in rest_points(DynamicsSpec(game, ent, T), seed_grid(game, 21))]
    runs = _pool_map(_fig2_one, [(game, ent, T, sched, iters, s, r, x0) for r in range(reps)], int(cfg.get("workers", 0)))
    runs.sort(key=lambda r: r.replicate)
    stats = convergence_stats(runs, refs, eps, cps, seed=s, grid=grid)
    out = _output(cfg, out_dir, s)
    centers = (np.arange(grid) + 0.5) / grid
    for c in cps:
        d = stats.densities[c]
        out.csv(f"density_n{c}.csv", ["x1", "x2", "count"], ([centers[i], centers[j], int(d[i, j])] for i in range(grid) for j in range(grid)))
    summary = {
        "checkpoints": cps,
        "converged_fraction": stats.fractions,
        "ci_low": stats.lower,
        "ci_high": stats.upper,
        "monotone": stats.monotone,
        "qre": refs,
        "eps": eps,
        "replicates": reps,
    }
    out.json("summary.json", summary)
    if check and not stats.monotone:
        raise CheckFailure("converged fraction drops significantly between checkpoints")
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "learn": cmd_learn,
    "qre": cmd_qre,
    "portrait": cmd_portrait,
    "bifurcate": cmd_bifurcate,
    "fig2": cmd_fig2,
}


def run_command(name: str, cfg: dict, out_dir, seed=None, check=False, unsafe_zero_temperature=False) -> dict:
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}")
    kwargs = {"unsafe_zero_temperature": unsafe_zero_temperature} if name == "learn" else {}
    try:
        return COMMANDS[name](cfg, out_dir, seed, check, **kwargs)
    except (GameError, EntropyError) as exc:
        raise ConfigError(str(exc)) from None
