"""Publishers' games under proportional ranking.

Documents and information needs are points of the unit cube ``[0, 1]^k``
stored as float arrays. A profile is an ``(n, k)`` array holding one
document per publisher.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InvalidInputError, UnsupportedOperationError

DELTA = 1e-5

METRICS = ("scaled-squared-euclidean", "absolute-1d")
FAMILIES = ("linear", "root", "log", "exponential")
CONCAVE_FAMILIES = ("linear", "root", "log")

DEFAULT_PARAMS = {
    "linear": 1.0 + DELTA,
    "root": 0.5,
    "log": 2.0 + DELTA,
    "exponential": 10.0,
}

_VALIDATION_GRID = np.linspace(0.0, 1.0, 1001)


def as_point(values, k: int | None = None) -> np.ndarray:
    """Return ``values`` as a float vector inside the unit cube."""
    point = np.atleast_1d(np.asarray(values, dtype=float))
    if point.ndim != 1:
        raise InvalidInputError(f"a point must be one-dimensional, got shape {point.shape}")
    if k is not None and point.shape[0] != k:
        raise InvalidInputError(f"expected a point of dimension {k}, got {point.shape[0]}")
    if not np.all(np.isfinite(point)) or np.any(point < 0.0) or np.any(point > 1.0):
        raise InvalidInputError(f"point {point.tolist()} is outside the unit cube")
    return point


@dataclass(frozen=True)
class SemiMetric:
    kind: str = "scaled-squared-euclidean"

    def __post_init__(self):
        if self.kind not in METRICS:
            raise InvalidInputError(f"unknown metric {self.kind!r}; choose from {METRICS}")

    @property
    def differentiable(self) -> bool:
        return self.kind == "scaled-squared-euclidean"

    def __call__(self, a, b) -> np.ndarray:
        """Broadcast distance over the last axis, no validation."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        diff = a - b
        if self.kind == "absolute-1d":
            return np.abs(diff[..., 0])
        # clip guards the activation domain against rounding just above 1
        return np.minimum(np.einsum("...i,...i->...", diff, diff) / diff.shape[-1], 1.0)


def distance(metric: SemiMetric, a, b) -> float:
    a = as_point(a)
    b = as_point(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if metric.kind == "absolute-1d" and a.shape[0] != 1:
        raise InvalidInputError("the absolute-1d metric needs k = 1")
    return float(metric(a, b))


@dataclass(frozen=True)
class Activation:
    """Activation function ``g`` of a proportional ranking function.

    ``param`` is the intercept ``b`` (linear), the power ``a`` (root), the
    shift ``c`` (log) or the inverse temperature ``beta`` (exponential).
    """

    family: str
    param: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown activation family {self.family!r}")
        if self.param is None:
            object.__setattr__(self, "param", DEFAULT_PARAMS[self.family])
        p = float(self.param)
        object.__setattr__(self, "param", p)
        ok = {
            "linear": p > 1.0,
            "root": 0.0 < p < 1.0,
            "log": p > 2.0,
            "exponential": p > 0.0,
        }[self.family]
        if not ok or not np.isfinite(p):
            raise InvalidInputError(f"param {p!r} is out of range for the {self.family} family")
        g, dg, _ = self.evaluate(_VALIDATION_GRID)
        # root has g(1) = 0; positivity is required on [0, 1) only
        positive = g[:-1] if self.family == "root" else g
        if not np.all(positive > 0.0):
            raise InvalidInputError(f"{self.family} activation with param {p} is not positive on [0, 1]")
        if not np.all(dg[:-1] < 0.0):
            raise InvalidInputError(f"{self.family} activation with param {p} is not strictly decreasing")

    @property
    def concave(self) -> bool:
        return self.family in CONCAVE_FAMILIES

    def value(self, t):
        t = np.asarray(t, dtype=float)
        p = self.param
        if self.family == "linear":
            return p - t
        if self.family == "root":
            return (1.0 - t) ** p
        if self.family == "log":
            return np.log(p - t)
        return np.exp(-p * t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        p = self.param
        if self.family == "linear":
            return np.full_like(t, -1.0)
        if self.family == "root":
            with np.errstate(divide="ignore"):
                return -p * (1.0 - t) ** (p - 1.0)
        if self.family == "log":
            return -1.0 / (p - t)
        return -p * np.exp(-p * t)

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        p = self.param
        if self.family == "linear":
            return np.zeros_like(t)
        if self.family == "root":
            with np.errstate(divide="ignore"):
                return p * (p - 1.0) * (1.0 - t) ** (p - 2.0)
        if self.family == "log":
            return -1.0 / (p - t) ** 2
        return p * p * np.exp(-p * t)

    def evaluate(self, t):
        return self.value(t), self.derivative(t), self.second_derivative(t)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "param": self.param}


def activation_eval(act: Activation, t: float) -> tuple[float, float, float]:
    """Value, first and second derivative of ``g`` at ``t`` in [0, 1]."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"activation argument {t} is outside [0, 1]")
    g, dg, d2g = act.evaluate(t)
    return float(g), float(dg), float(d2g)


@dataclass(frozen=True, eq=False)
class DemandDistribution:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if atoms.shape[0] < 1:
            raise InvalidInputError("a demand distribution needs at least one atom")
        if weights.shape != (atoms.shape[0],):
            raise InvalidInputError("one weight per atom is required")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError("demand weights must be nonnegative and sum to 1")
        for atom in atoms:
            as_point(atom)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms) -> DemandDistribution:
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        return cls(atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0]))

    @classmethod
    def one_hot(cls, atom) -> DemandDistribution:
        return cls(np.atleast_2d(np.asarray(atom, dtype=float)), np.ones(1))

    @property
    def s(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True, eq=False)
class PublishersGame:
    n: int
    k: int
    metric: SemiMetric
    activation: Activation
    demand: DemandDistribution
    initial_docs: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        if self.n < 2 or self.k < 1:
            raise InvalidInputError(f"need n >= 2 and k >= 1, got n={self.n}, k={self.k}")
        docs = np.atleast_2d(np.asarray(self.initial_docs, dtype=float))
        lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if lambdas.shape == (1,) and self.n > 1:
            lambdas = np.full(self.n, lambdas[0])
        if docs.shape != (self.n, self.k):
            raise InvalidInputError(f"initial_docs must have shape ({self.n}, {self.k}), got {docs.shape}")
        if lambdas.shape != (self.n,) or not np.all(lambdas > 0.0) or not np.all(np.isfinite(lambdas)):
            raise InvalidInputError("lambdas must hold n positive finite values")
        if self.demand.atoms.shape[1] != self.k:
            raise InvalidInputError("demand atoms must have the game's dimension")
        if self.metric.kind == "absolute-1d" and self.k != 1:
            raise InvalidInputError("the absolute-1d metric needs k = 1")
        for doc in docs:
            as_point(doc)
        object.__setattr__(self, "initial_docs", docs)
        object.__setattr__(self, "lambdas", lambdas)

    @property
    def s(self) -> int:
        return self.demand.s

    def with_activation(self, activation: Activation) -> PublishersGame:
        return PublishersGame(self.n, self.k, self.metric, activation, self.demand,
                              self.initial_docs, self.lambdas)

    def with_lambdas(self, lambdas) -> PublishersGame:
        return PublishersGame(self.n, self.k, self.metric, self.activation, self.demand,
                              self.initial_docs, lambdas)

    def check_profile(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n, self.k):
            raise InvalidInputError(f"profile must have shape ({self.n}, {self.k}), got {x.shape}")
        if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
            raise InvalidInputError("profile leaves the unit cube")
        return x

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "metric": self.metric.kind,
            "activation": self.activation.to_dict(),
            "demand": {
                "atoms": self.demand.atoms.tolist(),
                "weights": self.demand.weights.tolist(),
            },
            "initial_docs": self.initial_docs.tolist(),
            "lambdas": self.lambdas.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PublishersGame:
        try:
            return cls(
                n=int(data["n"]),
                k=int(data["k"]),
                metric=SemiMetric(data["metric"]),
                activation=Activation(data["activation"]["family"], data["activation"]["param"]),
                demand=DemandDistribution(data["demand"]["atoms"], data["demand"]["weights"]),
                initial_docs=data["initial_docs"],
                lambdas=data["lambdas"],
            )
        except KeyError as exc:
            raise InvalidInputError(f"game document is missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> PublishersGame:
        return cls.from_dict(json.loads(text))


def proportional_shares(values) -> np.ndarray:
    """Normalize activation values along axis 0 into exposure shares.

    A column whose values are all zero (every document at distance 1 under
    the root family) is split uniformly.
    """
    values = np.asarray(values, dtype=float)
    total = values.sum(axis=0)
    degenerate = total <= 0.0
    if np.any(degenerate):
        safe = np.where(degenerate, 1.0, total)
        shares = values / safe
        return np.where(degenerate, 1.0 / values.shape[0], shares)
    return values / total


# Unchecked kernels used by the dynamics loop. ``x`` is an (n, k) profile.

def atom_distances(game: PublishersGame, x) -> np.ndarray:
    """(n, s) distances between documents and demand atoms."""
    return game.metric(np.asarray(x)[:, None, :], game.demand.atoms[None, :, :])


def exposure_shares(game: PublishersGame, x) -> np.ndarray:
    """(n, s) ranking shares of every publisher at every atom."""
    return proportional_shares(game.activation.value(atom_distances(game, x)))


def all_utilities(game: PublishersGame, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    exposure = exposure_shares(game, x) @ game.demand.weights
    return exposure - game.lambdas * game.metric(x, game.initial_docs)


def all_gradients(game: PublishersGame, x) -> np.ndarray:
    """(n, k) array of own-action utility gradients for every player."""
    return utilities_and_gradients(game, x)[1]


def utilities_and_gradients(game: PublishersGame, x):
    """Utilities ``(n,)`` and own-action gradients ``(n, k)`` in one pass."""
    x = np.asarray(x, dtype=float)
    k = game.k
    atoms = game.demand.atoms
    dist = atom_distances(game, x)
    g = game.activation.value(dist)
    dg = game.activation.derivative(dist)
    total = g.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = game.demand.weights * dg * (total - g) / total ** 2
    coef = coef * (2.0 / k)
    exposure_grad = coef.sum(axis=1)[:, None] * x - coef @ atoms
    offset = x - game.initial_docs
    penalty_grad = (2.0 / k) * game.lambdas[:, None] * offset
    utils = proportional_shares(g) @ game.demand.weights - game.lambdas * game.metric(x, game.initial_docs)
    return utils, exposure_grad - penalty_grad


def _player(game: PublishersGame, i: int) -> int:
    if not 0 <= int(i) < game.n:
        raise InvalidInputError(f"player index {i} out of range for n={game.n}")
    return int(i)


def rank(game: PublishersGame, x, xstar) -> np.ndarray:
    x = game.check_profile(x)
    xstar = as_point(xstar, game.k)
    return proportional_shares(game.activation.value(game.metric(x, xstar)))


def expected_exposure(game: PublishersGame, x, i: int) -> float:
    x = game.check_profile(x)
    return float(exposure_shares(game, x)[_player(game, i)] @ game.demand.weights)


def utility(game: PublishersGame, x, i: int) -> float:
    x = game.check_profile(x)
    return float(all_utilities(game, x)[_player(game, i)])


def utility_gradient(game: PublishersGame, x, i: int) -> np.ndarray:
    if not game.metric.differentiable:
        raise UnsupportedOperationError("utility gradients need the scaled-squared-euclidean metric")
    x = game.check_profile(x)
    return all_gradients(game, x)[_player(game, i)]


def publishers_welfare(game: PublishersGame, x) -> float:
    x = game.check_profile(x)
    return float(all_utilities(game, x).sum())


def users_welfare(game: PublishersGame, x) -> float:
    x = game.check_profile(x)
    dist = atom_distances(game, x)
    shares = proportional_shares(game.activation.value(dist))
    return float(1.0 - (dist * shares).sum(axis=0) @ game.demand.weights)


def social_objective(game: PublishersGame, x) -> float:
    """Equally weighted utility sum; concave in the joint profile."""
    return publishers_welfare(game, x) / game.n
