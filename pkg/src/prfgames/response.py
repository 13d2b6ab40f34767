"""Best responses of one publisher against fixed opponents.

The opponents only enter a player's utility through the per-atom mass
``sum_{j != i} g(d(x_j, a_s))``, so a batch of opponent snapshots (one per
round) is stored as an ``(m, s)`` array. The objective is the snapshot
average of the player's utility, which covers both a single-profile best
response (``m = 1``) and the best fixed action in hindsight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnsupportedOperationError
from .model import PublishersGame, all_gradients, all_utilities

RANDOM_RESTARTS = 8
MAX_ITERATIONS = 5000
GRID_PER_AXIS = 32
GRID_REFINE = 4
_CHUNK = 2_000_000


class ResponseObjective:
    """Snapshot-averaged utility of player ``i`` as a function of her document."""

    def __init__(self, game: PublishersGame, i: int, opponent_mass):
        mass = np.atleast_2d(np.asarray(opponent_mass, dtype=float))
        if mass.shape[1] != game.s:
            raise InvalidInputError("opponent mass must have one column per demand atom")
        self.game = game
        self.i = i
        self.mass = mass
        self.atoms = game.demand.atoms
        self.weights = game.demand.weights
        self.lam = float(game.lambdas[i])
        self.origin = game.initial_docs[i]
        self.activation = game.activation

    @classmethod
    def from_profiles(cls, game: PublishersGame, i: int, profiles) -> ResponseObjective:
        """Build from an ``(m, n, k)`` stack of profiles (row ``i`` is ignored)."""
        profiles = np.asarray(profiles, dtype=float)
        if profiles.ndim == 2:
            profiles = profiles[None]
        others = np.delete(profiles, i, axis=1)
        dist = game.metric(others[:, :, None, :], game.demand.atoms[None, None, :, :])
        return cls(game, i, game.activation.value(dist).sum(axis=1))

    @property
    def rounds(self) -> int:
        return self.mass.shape[0]

    def _shares(self, own):
        # own: (p, s) activation values; returns (p, m, s) shares and the
        # derivative of each share with respect to the own value
        own = own[:, None, :]
        total = own + self.mass[None, :, :]
        degenerate = total <= 0.0
        if np.any(degenerate):
            safe = np.where(degenerate, 1.0, total)
            share = np.where(degenerate, 1.0 / self.game.n, own / safe)
            slope = np.where(degenerate, 0.0, self.mass[None] / safe ** 2)
            return share, slope
        return own / total, self.mass[None] / total ** 2

    def _chunks(self, p):
        step = max(1, _CHUNK // max(1, self.rounds * self.atoms.shape[0]))
        for start in range(0, p, step):
            yield slice(start, min(p, start + step))

    def value(self, points) -> np.ndarray:
        """Objective at each row of a ``(p, k)`` array."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0])
        metric = self.game.metric
        for sl in self._chunks(points.shape[0]):
            y = points[sl]
            own = self.activation.value(metric(y[:, None, :], self.atoms[None]))
            share, _ = self._shares(own)
            exposure = share.mean(axis=1) @ self.weights
            out[sl] = exposure - self.lam * metric(y, self.origin)
        return out

    def value_and_gradient(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.game.metric.differentiable:
            raise UnsupportedOperationError("gradients need the scaled-squared-euclidean metric")
        k = self.game.k
        metric = self.game.metric
        values = np.empty(points.shape[0])
        grads = np.empty_like(points)
        for sl in self._chunks(points.shape[0]):
            y = points[sl]
            dist = metric(y[:, None, :], self.atoms[None])
            own = self.activation.value(dist)
            dg = self.activation.derivative(dist)
            share, slope = self._shares(own)
            values[sl] = share.mean(axis=1) @ self.weights - self.lam * metric(y, self.origin)
            coef = self.weights * slope.mean(axis=1) * dg * (2.0 / k)
            grads[sl] = (coef.sum(axis=1)[:, None] * y - coef @ self.atoms
                         - (2.0 / k) * self.lam * (y - self.origin))
        return values, grads


@dataclass
class Response:
    action: np.ndarray
    value: float
    iterations: int = 0
    certificate: float = 0.0


def frank_wolfe_gap(points, grads) -> np.ndarray:
    """Linearization bound ``max_y grad . (y - x)`` over the unit cube.

    For a concave objective this bounds the distance to the maximum value.
    """
    return np.sum(np.where(grads > 0.0, grads * (1.0 - points), -grads * points), axis=-1)


def projected_gradient_norm(points, grads) -> np.ndarray:
    return np.linalg.norm(np.clip(points + grads, 0.0, 1.0) - points, axis=-1)


def ascend(objective: ResponseObjective, starts, tolerance: float, concave: bool,
           max_iterations: int = MAX_ITERATIONS) -> Response:
    """Projected gradient ascent from several starts at once.

    Each start keeps its own step size, doubled after an accepted Armijo step
    and halved after a rejected one. Concave objectives stop once the
    Frank-Wolfe gap of the leading start is within ``tolerance``; only the
    leading start is kept after a short warm-up since every local maximum is
    global. Otherwise all starts run until their projected gradients are
    within ``tolerance`` or the iteration budget is spent.
    """
    y = np.clip(np.atleast_2d(np.asarray(starts, dtype=float)), 0.0, 1.0)
    f, grad = objective.value_and_gradient(y)
    step = np.ones(y.shape[0])
    it = 0
    for it in range(1, max_iterations + 1):
        if concave:
            lead = int(np.argmax(f))
            gap = frank_wolfe_gap(y[lead], grad[lead])
            if gap <= tolerance:
                break
            if it == 20 and y.shape[0] > 1:
                y, f, grad, step = y[lead:lead + 1], f[lead:lead + 1], grad[lead:lead + 1], step[lead:lead + 1]
        elif np.all(projected_gradient_norm(y, grad) <= tolerance):
            break
        cand = np.clip(y + step[:, None] * grad, 0.0, 1.0)
        f_new, grad_new = objective.value_and_gradient(cand)
        moved = np.sum(grad * (cand - y), axis=1)
        ok = (f_new >= f + 0.5 * moved) & np.isfinite(f_new)
        stalled = ~ok & (step < 1e-14)
        if np.all(stalled | (moved <= 0.0)):
            break
        y = np.where(ok[:, None], cand, y)
        f = np.where(ok, f_new, f)
        grad = np.where(ok[:, None], grad_new, grad)
        step = np.where(ok, np.minimum(step * 2.0, 1e6), step * 0.5)
    lead = int(np.argmax(f))
    cert = float(frank_wolfe_gap(y[lead], grad[lead])) if concave else float("nan")
    return Response(y[lead].copy(), float(f[lead]), it, cert)


def segment_bisection(objective: ResponseObjective, target, tolerance: float) -> Response:
    """Maximize a concave objective along the segment from the origin to ``target``.

    With one information need and the squared Euclidean metric the best
    response lies on that segment, and the directional derivative along it
    is decreasing, so its sign change is bracketed by bisection.
    """
    origin = objective.origin
    direction = np.asarray(target, dtype=float) - origin

    def slope(alpha):
        _, grad = objective.value_and_gradient(origin + alpha * direction)
        return float(grad[0] @ direction)

    if not np.any(direction):
        alpha = 0.0
    elif slope(1.0) >= 0.0:
        alpha = 1.0
    elif slope(0.0) <= 0.0:
        alpha = 0.0
    else:
        lo, hi = 0.0, 1.0
        it = 0
        # the value error is at most |slope| * width, so stop well below tolerance
        while hi - lo > 1e-13 and it < 200:
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0.0:
                lo = mid
            else:
                hi = mid
            it += 1
        alpha = 0.5 * (lo + hi)
    action = np.clip(origin + alpha * direction, 0.0, 1.0)
    return Response(action, float(objective.value(action)[0]), 0, 0.0)


def _starts(objective: ResponseObjective, rng) -> np.ndarray:
    k = objective.game.k
    return np.vstack([objective.origin, objective.atoms, rng.random((RANDOM_RESTARTS, k))])


def maximize(objective: ResponseObjective, tolerance: float, seed: int = 0) -> Response:
    """Concave maximization used for best responses and hindsight regret."""
    game = objective.game
    if not game.activation.concave:
        raise UnsupportedOperationError(
            "best responses under a non-concave activation need global_maximize")
    if not game.metric.differentiable:
        raise UnsupportedOperationError("best responses need the scaled-squared-euclidean metric")
    if game.s == 1:
        return segment_bisection(objective, game.demand.atoms[0], tolerance)
    rng = np.random.default_rng([seed, objective.i])
    return ascend(objective, _starts(objective, rng), tolerance, concave=True)


def coarse_grid(k: int, per_axis: int = GRID_PER_AXIS) -> np.ndarray:
    axis = (np.arange(per_axis) + 0.5) / per_axis
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def global_maximize(objective: ResponseObjective, tolerance: float, seed: int = 0,
                    grid_values=None, max_iterations: int = MAX_ITERATIONS) -> Response:
    """Multi-start plus coarse-grid search; the value is a lower bound on the maximum.

    ``grid_values`` may carry precomputed objective values on ``coarse_grid``.
    """
    k = objective.game.k
    if k > 3:
        raise UnsupportedOperationError(f"global search is limited to k <= 3, got k={k}")
    grid = coarse_grid(k)
    if grid_values is None:
        grid_values = objective.value(grid)
    best_grid = np.argsort(grid_values)[::-1][:GRID_REFINE]
    rng = np.random.default_rng([seed, objective.i])
    starts = np.vstack([_starts(objective, rng), grid[best_grid]])
    local = ascend(objective, starts, tolerance, concave=False, max_iterations=max_iterations)
    top = int(best_grid[0])
    if grid_values[top] > local.value:
        return Response(grid[top].copy(), float(grid_values[top]), local.iterations, float("nan"))
    return local


def opponents_profile(game: PublishersGame, x_minus_i, i: int) -> np.ndarray:
    """Full profile from either an (n-1, k) opponent array or an (n, k) profile."""
    arr = np.asarray(x_minus_i, dtype=float)
    if arr.shape == (game.n, game.k):
        return game.check_profile(arr)
    if arr.shape != (game.n - 1, game.k):
        raise InvalidInputError(f"opponent profile must have shape ({game.n - 1}, {game.k})")
    full = np.insert(arr, i, game.initial_docs[i], axis=0)
    return game.check_profile(full)


def best_response(game: PublishersGame, x_minus_i, i: int, tolerance: float = 1e-6,
                  seed: int = 0) -> tuple[np.ndarray, float]:
    """Maximizer of ``u_i(., x_minus_i)`` and its value, within ``tolerance``."""
    if not 0 <= i < game.n:
        raise InvalidInputError(f"player index {i} out of range")
    profile = opponents_profile(game, x_minus_i, i)
    res = maximize(ResponseObjective.from_profiles(game, i, profile), tolerance, seed)
    return res.action, res.value


def global_best_response(game: PublishersGame, x_minus_i, i: int, tolerance: float = 1e-6,
                         seed: int = 0) -> tuple[np.ndarray, float]:
    """Best response for any activation; the value is a certified lower bound."""
    if not 0 <= i < game.n:
        raise InvalidInputError(f"player index {i} out of range")
    profile = opponents_profile(game, x_minus_i, i)
    res = global_maximize(ResponseObjective.from_profiles(game, i, profile), tolerance, seed)
    return res.action, res.value


def player_gaps(game: PublishersGame, x, tolerance: float, global_search: bool = False,
                seed: int = 0) -> np.ndarray:
    """Per-player improvement available by a unilateral deviation."""
    x = game.check_profile(x)
    current = all_utilities(game, x)
    solve = global_maximize if global_search else maximize
    gaps = np.empty(game.n)
    for i in range(game.n):
        res = solve(ResponseObjective.from_profiles(game, i, x), tolerance, seed)
        gaps[i] = res.value - current[i]
    return gaps


def epsilon_gap(game: PublishersGame, x, tolerance: float = 1e-6, global_search: bool = False,
                seed: int = 0) -> float:
    """Largest unilateral gain at ``x``, clipped at zero.

    ``x`` is a ``(gap + tolerance)``-Nash equilibrium.
    """
    return max(0.0, float(np.max(player_gaps(game, x, tolerance, global_search, seed))))


def improvement_lower_bound(game: PublishersGame, x) -> np.ndarray:
    """Cheap per-player lower bound on the available gain.

    One Armijo-backtracked projected gradient step per player; any feasible
    improvement found is a valid lower bound on the epsilon gap.
    """
    grads = all_gradients(game, x)
    base = all_utilities(game, x)
    best = np.zeros(game.n)
    for step in (4.0, 1.0, 0.25, 0.0625):
        cand = np.clip(x + step * grads, 0.0, 1.0)
        for i in range(game.n):
            trial = x.copy()
            trial[i] = cand[i]
            best[i] = max(best[i], all_utilities(game, trial)[i] - base[i])
    return best
