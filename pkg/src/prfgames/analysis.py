"""Concavity audits, the non-concave counterexample and symmetric equilibria."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UnsupportedOperationError
from .model import (
    Activation,
    DemandDistribution,
    PublishersGame,
    SemiMetric,
    all_utilities,
    proportional_shares,
    users_welfare,
)
from .response import ResponseObjective, segment_bisection

MIDPOINT_TOLERANCE = 1e-9
CURVATURE_TOLERANCE = 1e-12
GRID_POINTS = 10_000


@dataclass
class ConcavityVerdict:
    activation_concave: bool
    own_concavity_violations: int
    opponent_convexity_violations: int
    samples: int
    witness: dict | None = None

    def to_dict(self) -> dict:
        return {
            "activation_concave": self.activation_concave,
            "own_concavity_violations": self.own_concavity_violations,
            "opponent_convexity_violations": self.opponent_convexity_violations,
            "samples": self.samples,
            "witness": self.witness,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def activation_is_concave(activation: Activation, points: int = GRID_POINTS) -> bool:
    with np.errstate(divide="ignore", invalid="ignore"):
        curvature = activation.second_derivative(np.linspace(0.0, 1.0, points))
    return bool(np.all(curvature <= CURVATURE_TOLERANCE))


def audit_concavity(game: PublishersGame, samples: int = 1000, seed: int = 0) -> ConcavityVerdict:
    """Randomized midpoint audit of the two conditions behind concavity.

    Each sample draws a player, her opponents and a segment, then checks that
    her utility is midpoint-concave along the segment of her own document and
    that her ranking share at a single atom is midpoint-convex along a
    segment of opponent profiles. Half of the samples put the opponents on a
    demand atom, where non-concave activations fail most visibly.
    """
    rng = np.random.default_rng(seed)
    n, k = game.n, game.k
    atoms = game.demand.atoms
    own_bad = opp_bad = 0
    witness = None
    for trial in range(samples):
        i = int(rng.integers(n))
        x = rng.random((n, k))
        if trial % 2:
            x[:] = atoms[rng.integers(atoms.shape[0])]
        p, q = rng.random(k), rng.random(k)
        ends = []
        for point in (p, q, 0.5 * (p + q)):
            prof = x.copy()
            prof[i] = point
            ends.append(all_utilities(game, prof)[i])
        if ends[2] < 0.5 * (ends[0] + ends[1]) - MIDPOINT_TOLERANCE:
            own_bad += 1
            if witness is None:
                witness = {"kind": "own-concavity", "player": i, "profile": x.tolist(),
                           "segment": [p.tolist(), q.tolist()],
                           "shortfall": 0.5 * (ends[0] + ends[1]) - ends[2]}

        atom = atoms[rng.integers(atoms.shape[0])]
        own_doc = rng.random(k)
        a, b = rng.random((n, k)), rng.random((n, k))
        a[i] = b[i] = own_doc
        shares = [
            proportional_shares(game.activation.value(game.metric(prof, atom)))[i]
            for prof in (a, b, 0.5 * (a + b))
        ]
        if shares[2] > 0.5 * (shares[0] + shares[1]) + MIDPOINT_TOLERANCE:
            opp_bad += 1
            if witness is None:
                witness = {"kind": "opponent-convexity", "player": i, "atom": atom.tolist(),
                           "segment": [a.tolist(), b.tolist()],
                           "excess": shares[2] - 0.5 * (shares[0] + shares[1])}
    return ConcavityVerdict(activation_is_concave(game.activation), own_bad, opp_bad, samples, witness)


def curvature_peak(activation: Activation, points: int = GRID_POINTS) -> float:
    """Interior grid point maximizing ``g''``."""
    grid = np.linspace(0.0, 1.0, points + 2)[1:-1]
    return float(grid[int(np.argmax(activation.second_derivative(grid)))])


def build_counterexample(activation: Activation, a_hat: float | None = None,
                         lam: float = 0.5) -> PublishersGame:
    """One-dimensional game whose first player has a non-concave utility.

    All initial documents sit at 1, the single information need at 0, and
    the player count exceeds ``2 g'(a)^2 / (g''(a) g(0)) + 1``.
    """
    if a_hat is None:
        a_hat = curvature_peak(activation)
    a_hat = float(a_hat)
    if not 0.0 < a_hat < 1.0:
        raise InvalidInputError(f"a_hat must lie in (0, 1), got {a_hat}")
    g0 = float(activation.value(0.0))
    _, dg, d2g = (float(v) for v in activation.evaluate(a_hat))
    if not d2g > 0.0:
        raise InvalidInputError(f"g'' is not positive at a_hat={a_hat}; no counterexample exists there")
    threshold = 2.0 * dg * dg / (d2g * g0) + 1.0
    n = max(2, math.floor(threshold) + 1)
    return PublishersGame(
        n=n,
        k=1,
        metric=SemiMetric("absolute-1d"),
        activation=activation,
        demand=DemandDistribution.one_hot([0.0]),
        initial_docs=np.ones((n, 1)),
        lambdas=np.full(n, lam),
    )


def counterexample_profile(game: PublishersGame, x1: float) -> np.ndarray:
    """Profile where player 0 plays ``x1`` and everyone else sits on the information need."""
    x = np.zeros((game.n, 1))
    x[0, 0] = x1
    return x


def counterexample_second_derivative(activation: Activation, n: int, a_hat: float) -> float:
    """Closed-form second derivative of player 0's utility at ``a_hat``."""
    c = (n - 1) * float(activation.value(0.0))
    g, dg, d2g = (float(v) for v in activation.evaluate(a_hat))
    return c / (c + g) ** 3 * (d2g * (c + g) - 2.0 * dg * dg)


@dataclass(frozen=True)
class SymmetricInstance:
    """Shared initial document at distance ``c1`` from a single information need."""

    n: int
    c1: float
    lam: float
    activation: Activation

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError("need n >= 2")
        if not 0.0 < self.c1 <= 1.0:
            raise InvalidInputError(f"c1 must lie in (0, 1], got {self.c1}")
        if not self.lam > 0.0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")


def _log_slope(activation: Activation, t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"activation argument {t} is outside [0, 1]")
    g, dg, _ = activation.evaluate(t)
    # root at t = 1 has g = 0 and an infinite log-slope
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.float64(dg) / np.float64(g))


def psi_eval(inst: SymmetricInstance, alpha: float) -> float:
    """Scalar equilibrium equation with the integrity term scaled by ``c1``.

    The exposure term carries no ``c1`` factor, so the root is the symmetric
    equilibrium of the game with integrity weight ``lam * c1``; it matches
    ``stationarity_eval`` only when ``c1 = 1``.
    """
    n = inst.n
    t = (1.0 - alpha) ** 2 * inst.c1
    return (n - 1) / n ** 2 * _log_slope(inst.activation, t) * (1.0 - alpha) + inst.lam * inst.c1 * alpha


def stationarity_eval(inst: SymmetricInstance, alpha: float) -> float:
    """First-order condition of the symmetric game along the segment.

    This is ``-d u_1 / d alpha`` divided by ``2 c1`` at the symmetric
    profile, so its root is the game's equilibrium for every ``c1``.
    """
    n = inst.n
    t = (1.0 - alpha) ** 2 * inst.c1
    return (n - 1) / n ** 2 * _log_slope(inst.activation, t) * (1.0 - alpha) + inst.lam * alpha


EQUATIONS = {"exact": stationarity_eval, "scaled": psi_eval}


def bisect_increasing(func, lo: float, hi: float, tolerance: float, max_iter: int = 500) -> float:
    """Root of an increasing function bracketed by ``func(lo) < 0 < func(hi)``."""
    f_lo, f_hi = func(lo), func(hi)
    if not (f_lo <= 0.0 <= f_hi):
        raise InvalidInputError(f"no sign change on [{lo}, {hi}]: values {f_lo}, {f_hi}")
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = func(mid)
        if abs(f_mid) <= tolerance and hi - lo <= 2.0 * tolerance:
            break
        if f_mid < 0.0:
            lo = mid
        elif f_mid > 0.0:
            hi = mid
        else:
            break
    return mid


def symmetric_equilibrium(inst: SymmetricInstance, tolerance: float = 1e-10,
                          equation: str = "exact") -> tuple[float, float]:
    """Equilibrium step toward the information need and the users' welfare there.

    ``equation`` selects the exact first-order condition (``"exact"``) or
    ``psi_eval`` (``"scaled"``); both are strictly increasing with a sign change on
    [0, 1] under a concave activation.
    """
    if not inst.activation.concave:
        raise UnsupportedOperationError("the symmetric solver needs a concave activation")
    if not tolerance > 0.0:
        raise InvalidInputError("tolerance must be positive")
    if equation not in EQUATIONS:
        raise InvalidInputError(f"unknown equation {equation!r}; choose from {sorted(EQUATIONS)}")
    psi = EQUATIONS[equation]
    alpha = bisect_increasing(lambda a: psi(inst, a), 0.0, 1.0, tolerance)
    return alpha, 1.0 - (1.0 - alpha) ** 2 * inst.c1


def symmetric_game(inst: SymmetricInstance, k: int = 1) -> PublishersGame:
    """Game realizing ``inst`` in dimension ``k``: need at the origin, documents on the diagonal."""
    origin = np.full(k, math.sqrt(inst.c1))
    return PublishersGame(
        n=inst.n,
        k=k,
        metric=SemiMetric(),
        activation=inst.activation,
        demand=DemandDistribution.one_hot(np.zeros(k)),
        initial_docs=np.tile(origin, (inst.n, 1)),
        lambdas=np.full(inst.n, inst.lam),
    )


def segment_position(game: PublishersGame, x) -> np.ndarray:
    """Per-player position along the segment from her initial document to the first atom."""
    direction = game.demand.atoms[0] - game.initial_docs
    offset = np.asarray(x) - game.initial_docs
    return np.sum(offset * direction, axis=1) / np.sum(direction * direction, axis=1)


@dataclass
class MonotonicityReport:
    base: SymmetricInstance
    equation: str = "exact"
    by_lambda: list = field(default_factory=list)
    by_n: list = field(default_factory=list)
    by_k: list = field(default_factory=list)

    @property
    def decreasing_in_lambda(self) -> bool:
        v = [row["users_welfare"] for row in self.by_lambda]
        return all(b < a for a, b in zip(v, v[1:]))

    @property
    def decreasing_in_n(self) -> bool:
        v = [row["users_welfare"] for row in self.by_n]
        return all(b < a for a, b in zip(v, v[1:]))

    @property
    def constant_in_k(self) -> bool:
        v = [row["users_welfare"] for row in self.by_k]
        return all(b == v[0] for b in v)

    def to_dict(self) -> dict:
        return {
            "base": {"n": self.base.n, "c1": self.base.c1, "lambda": self.base.lam,
                     "activation": self.base.activation.to_dict()},
            "equation": self.equation,
            "lambda": self.by_lambda,
            "n": self.by_n,
            "k": self.by_k,
            "decreasing_in_lambda": self.decreasing_in_lambda,
            "decreasing_in_n": self.decreasing_in_n,
            "constant_in_k": self.constant_in_k,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def symmetric_welfare_monotonicity(base: SymmetricInstance, lambdas=(0.1, 0.5, 1.0, 2.0),
                                   ns=(2, 3, 5, 10), ks=(1, 3, 10), tolerance: float = 1e-12,
                                   equation: str = "exact") -> MonotonicityReport:
    """Equilibrium users' welfare along grids of lambda, n and k.

    For each k the equilibrium profile is also evaluated on the k-dimensional
    game (``game_users_welfare``) and re-derived by the best-response oracle
    (``oracle_alpha``).
    """
    report = MonotonicityReport(base, equation)
    for lam in sorted(lambdas):
        inst = SymmetricInstance(base.n, base.c1, lam, base.activation)
        alpha, v = symmetric_equilibrium(inst, tolerance, equation)
        report.by_lambda.append({"lambda": lam, "alpha": alpha, "users_welfare": v})
    for n in sorted(ns):
        inst = SymmetricInstance(n, base.c1, base.lam, base.activation)
        alpha, v = symmetric_equilibrium(inst, tolerance, equation)
        report.by_n.append({"n": n, "alpha": alpha, "users_welfare": v})
    alpha, v = symmetric_equilibrium(base, tolerance, equation)
    for k in sorted(ks):
        game = symmetric_game(base, k)
        x_eq = game.initial_docs + alpha * (game.demand.atoms[0] - game.initial_docs)
        objective = ResponseObjective.from_profiles(game, 0, x_eq)
        br = segment_bisection(objective, game.demand.atoms[0], tolerance)
        report.by_k.append({
            "k": k,
            "alpha": alpha,
            "users_welfare": v,
            "game_users_welfare": users_welfare(game, x_eq),
            "oracle_alpha": float(segment_position(game, br.action[None].repeat(game.n, 0))[0]),
        })
    return report


def max_uniformity_deviation(activation: Activation, n: int = 3, k: int = 3, samples: int = 1000,
                             seed: int = 0) -> float:
    """Largest departure of a ranking share from ``1/n`` over random documents and needs."""
    rng = np.random.default_rng(seed)
    metric = SemiMetric()
    worst = 0.0
    for _ in range(samples):
        shares = proportional_shares(activation.value(metric(rng.random((n, k)), rng.random(k))))
        worst = max(worst, float(np.max(np.abs(shares - 1.0 / n))))
    return worst
