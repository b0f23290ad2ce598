"""Entropy functions on the simplex and their choice maps.

Two families are supported:

* :class:`EntropyKernel` -- decomposable entropies ``h(x) = sum_a theta(x_a)``
  (Gibbs, log, Tsallis), with a fast one-dimensional solve for the choice map
  and the closed-form Hessian inverse.
* :class:`GeneralEntropy` -- entropies given by value, gradient and full
  Hessian (Renyi), whose choice map is found by damped Newton in reduced
  coordinates.

Reduced coordinates drop the benchmark action 0: ``w = x[1:]`` and
``x[0] = 1 - sum(w)``. Relative scores are ``z = y[1:] - y[0]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 200


class EntropyError(ValueError):
    """Invalid entropy parameters."""


class DomainError(ValueError):
    """Point outside the open simplex."""


class NumericalFailure(RuntimeError):
    """An iterative solve did not converge."""

    def __init__(self, message: str, last_iterate=None, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class EntropyKernel:
    """Legendre kernel theta of a decomposable entropy."""

    kind: str
    q: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("gibbs", "log", "tsallis"):
            raise EntropyError(f"unknown kernel {self.kind!r}")
        if self.kind == "tsallis":
            if not 0.0 < self.q <= 1.0:
                raise EntropyError(f"tsallis q must lie in (0, 1], got {self.q}")

    @property
    def is_gibbs(self) -> bool:
        return self.kind == "gibbs" or (self.kind == "tsallis" and self.q == 1.0)

    @property
    def code(self) -> int:
        """Integer id used by the compiled kernels."""
        if self.is_gibbs:
            return 0
        return 1 if self.kind == "log" else 2

    @property
    def regular(self) -> bool:
        return self.kind != "log"

    @property
    def kernel_bound(self) -> float:
        """m with xi * theta''(xi) >= m on (0, 1)."""
        if self.kind == "tsallis" and not self.is_gibbs:
            return self.q
        return 1.0

    @property
    def label(self) -> str:
        return f"tsallis({self.q:g})" if self.kind == "tsallis" and not self.is_gibbs else self.kind

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_gibbs:
            return xlogy(x, x)
        if self.kind == "log":
            return -np.log(x)
        q = self.q
        return (x - x**q) / (1.0 - q)

    def dtheta(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_gibbs:
            return 1.0 + np.log(x)
        if self.kind == "log":
            return -1.0 / x
        q = self.q
        return (1.0 - q * x ** (q - 1.0)) / (1.0 - q)

    def d2theta(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_gibbs:
            return 1.0 / x
        if self.kind == "log":
            return 1.0 / (x * x)
        q = self.q
        return q * x ** (q - 2.0)

    def inverse_dtheta(self, s):
        """(theta')^{-1}; defined for s below sup theta'."""
        s = np.asarray(s, dtype=float)
        if self.is_gibbs:
            return np.exp(s - 1.0)
        if self.kind == "log":
            return -1.0 / s
        q = self.q
        return ((1.0 - (1.0 - q) * s) / q) ** (1.0 / (q - 1.0))

    # full-coordinate interface shared with GeneralEntropy
    def h(self, x) -> float:
        return float(np.sum(self.theta(x)))

    def grad(self, x) -> np.ndarray:
        return self.dtheta(x)

    def hess(self, x) -> np.ndarray:
        return np.diag(self.d2theta(x))


@dataclass(frozen=True)
class GeneralEntropy:
    """Non-decomposable entropy given by h, its gradient and Hessian.

    Only the Renyi family is provided: ``h(x) = log(sum x^q) / (q - 1)``.
    """

    kind: str = "renyi"
    q: float = 0.5

    def __post_init__(self) -> None:
        if self.kind != "renyi":
            raise EntropyError(f"unknown general entropy {self.kind!r}")
        if not 0.0 < self.q < 1.0:
            raise EntropyError(f"renyi q must lie in (0, 1), got {self.q}")

    regular = True
    is_gibbs = False

    @property
    def label(self) -> str:
        return f"renyi({self.q:g})"

    def h(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.log(np.sum(x**self.q)) / (self.q - 1.0))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = self.q
        s = np.sum(x**q)
        return q * x ** (q - 1.0) / ((q - 1.0) * s)

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = self.q
        s = np.sum(x**q)
        v = x ** (q - 1.0)
        return np.diag(q * x ** (q - 2.0) / s) + (q * q / (1.0 - q)) * np.outer(v, v) / (s * s)


Entropy = EntropyKernel | GeneralEntropy

GIBBS = EntropyKernel("gibbs")


def entropy_from_config(cfg: dict) -> Entropy:
    """``{"kernel": "gibbs"|"log"|"tsallis", "q": ...}`` or ``{"general": "renyi", "q": ...}``."""
    if "kernel" in cfg:
        kind = cfg["kernel"]
        q = float(cfg.get("q", 1.0))
        if kind == "tsallis" and q == 1.0:
            return GIBBS
        return EntropyKernel(kind, q if kind == "tsallis" else 1.0)
    if "general" in cfg:
        q = float(cfg.get("q", 0.5))
        if q == 1.0:
            return GIBBS
        return GeneralEntropy(cfg["general"], q)
    raise EntropyError("entropy config needs a 'kernel' or 'general' key")


def entropy_to_config(entropy: Entropy) -> dict:
    if isinstance(entropy, GeneralEntropy):
        return {"general": entropy.kind, "q": entropy.q}
    if entropy.kind == "tsallis":
        return {"kernel": "tsallis", "q": entropy.q}
    return {"kernel": entropy.kind}


# -- coordinates --------------------------------------------------------------


def relative_scores(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[1:] - y[0]


def scores_from_relative(z) -> np.ndarray:
    return np.concatenate([[0.0], np.asarray(z, dtype=float)])


def embed(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.concatenate([[1.0 - w.sum()], w])


def _interior(w: np.ndarray) -> np.ndarray:
    x = embed(w)
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError("reduced point is not strictly interior")
    return x


# -- choice maps --------------------------------------------------------------


def gibbs_map(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    e = np.exp(y - y.max())
    return e / e.sum()


def _kernel_choice(kernel: EntropyKernel, y: np.ndarray) -> np.ndarray:
    # x_a = phi(s - d_a) with phi = (theta')^{-1}, d_a = max(y) - y_a >= 0;
    # the top argument s lies in [theta'(1/n), theta'(1)].
    n = len(y)
    d = y.max() - y
    lo = float(kernel.dtheta(1.0 / n))
    hi = float(kernel.dtheta(1.0))
    s = 0.5 * (lo + hi)
    for _ in range(200):
        x = kernel.inverse_dtheta(s - d)
        g = x.sum() - 1.0
        if g > 0:
            hi = s
        else:
            lo = s
        if abs(g) <= 2e-16 * n or hi - lo <= 4e-16 * max(1.0, abs(s)):
            break
        slope = float(np.sum(1.0 / kernel.d2theta(x)))
        step = s - g / slope
        s = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        raise NumericalFailure("kernel choice map did not converge", x, abs(g))
    return x / x.sum()


def choice_map(entropy: Entropy, y, method: str = "auto") -> np.ndarray:
    """Maximizer of <x, y> - h(x) over the simplex.

    ``method="variational"`` forces the generic damped-Newton path even for
    decomposable kernels.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("scores must be finite")
    if len(y) == 1:
        return np.ones(1)
    if method == "auto":
        if entropy.is_gibbs:
            return gibbs_map(y)
        if isinstance(entropy, EntropyKernel):
            return _kernel_choice(entropy, y)
    elif method != "variational":
        raise ValueError(f"unknown method {method!r}")
    return embed(_newton_choice(entropy, relative_scores(y)))


def choice_map_reduced(entropy: Entropy, z, method: str = "auto") -> np.ndarray:
    """Q_0: relative scores -> reduced interior point w."""
    return choice_map(entropy, scores_from_relative(z), method=method)[1:]


def _newton_choice(entropy: Entropy, z: np.ndarray) -> np.ndarray:
    n = len(z) + 1
    w = np.full(n - 1, 1.0 / n)
    tol = NEWTON_TOL * max(1.0, float(np.max(np.abs(z))))

    def objective(w):
        return float(w @ z) - entropy.h(embed(w))

    f = objective(w)
    for _ in range(NEWTON_MAX_ITER):
        g = z - reduced_gradient(entropy, w)
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            return w
        d = np.linalg.solve(hessian_reduced(entropy, w), g)
        t = 1.0
        while True:
            trial = w + t * d
            x = embed(trial)
            if np.all(x > 0.0):
                break
            t *= 0.5
            if t < 1e-30:
                raise NumericalFailure("Newton step cannot stay interior", w, gnorm)
        # Armijo on the concave objective; fall back to gradient decrease
        # once objective differences drop below rounding.
        for _ in range(60):
            trial = w + t * d
            x = embed(trial)
            if np.all(x > 0.0):
                ft = objective(trial)
                if ft >= f + 1e-4 * t * float(g @ d):
                    break
                gt = float(np.max(np.abs(z - reduced_gradient(entropy, trial))))
                if gt < gnorm:
                    break
            t *= 0.5
        w, f = trial, objective(trial)
    g = z - reduced_gradient(entropy, w)
    raise NumericalFailure("choice map Newton solve hit the iteration cap", w, float(np.max(np.abs(g))))


# -- reduced derivatives -------------------------------------------------------


def reduced_gradient(entropy: Entropy, w) -> np.ndarray:
    """F_0(w) = grad h_0(w), the relative scores of the reduced point w."""
    x = _interior(np.asarray(w, dtype=float))
    g = entropy.grad(x)
    return g[1:] - g[0]


def hessian_reduced(entropy: Entropy, w) -> np.ndarray:
    x = _interior(np.asarray(w, dtype=float))
    if isinstance(entropy, EntropyKernel):
        q = entropy.d2theta(x)
        return np.diag(q[1:]) + q[0]
    hf = entropy.hess(x)
    return hf[1:, 1:] + hf[0, 0] - hf[0, 1:][None, :] - hf[0, 1:][:, None]


def harmonic_inverse(q) -> np.ndarray:
    """Inverse of A = diag(q[1:]) + q[0] via the harmonic aggregate.

    A^{mu nu} = delta/q_mu - Q_h / (q_mu q_nu), 1/Q_h = sum_a 1/q_a.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise DomainError("harmonic inverse needs positive weights")
    qh = 1.0 / np.sum(1.0 / q)
    r = 1.0 / q[1:]
    return np.diag(r) - qh * np.outer(r, r)


def hessian_inverse_reduced(entropy: Entropy, w) -> np.ndarray:
    x = _interior(np.asarray(w, dtype=float))
    if isinstance(entropy, EntropyKernel):
        return harmonic_inverse(entropy.d2theta(x))
    return np.linalg.inv(hessian_reduced(entropy, x[1:]))


def free_entropy(entropy: Entropy, y) -> float:
    """Legendre-Fenchel conjugate h*(y) = max_x <x, y> - h(x)."""
    y = np.asarray(y, dtype=float)
    if entropy.is_gibbs:
        return float(logsumexp(y))
    x = choice_map(entropy, y)
    return float(x @ y) - entropy.h(x)


def kernel_property_report(kernel: EntropyKernel) -> dict:
    """Sampled checks of the kernel axioms (convexity, steepness, regularity)."""
    xi = np.geomspace(1e-9, 1.0 - 1e-9, 400)
    d2 = kernel.d2theta(xi)
    near0 = kernel.dtheta(np.array([1e-3, 1e-6, 1e-9]))
    ratio = np.abs(kernel.dtheta(np.array([1e-3, 1e-6, 1e-9])) / kernel.d2theta(np.array([1e-3, 1e-6, 1e-9])))
    return {
        "convex": bool(np.all(d2 > 0)),
        "steep": bool(near0[0] > near0[1] > near0[2] and near0[2] < -10.0),
        "ratio_vanishes": bool(ratio[0] > ratio[1] > ratio[2] and ratio[2] < 1e-6),
        "bound_holds": bool(np.all(xi * d2 >= kernel.kernel_bound * (1 - 1e-12))),
    }
