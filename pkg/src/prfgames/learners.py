"""No-regret learners driven by gradient feedback, and the regret ledger."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .model import PublishersGame, all_utilities
from .response import ResponseObjective, global_maximize, maximize

KINDS = ("projected-gradient-ascent", "optimistic-gradient-ascent")
SCHEDULES = ("constant", "inverse-sqrt")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "projected-gradient-ascent"
    base_rate: float = 0.5
    schedule: str = "inverse-sqrt"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown learner kind {self.kind!r}")
        if self.schedule not in SCHEDULES:
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")
        if not self.base_rate > 0.0 or not math.isfinite(self.base_rate):
            raise InvalidInputError(f"base_rate must be positive, got {self.base_rate}")

    def rate(self, t: int) -> float:
        if self.schedule == "constant":
            return self.base_rate
        return self.base_rate / math.sqrt(t + 1)


@dataclass(frozen=True)
class LearnerState:
    """Learner state; arrays may hold one action ``(k,)`` or a stack ``(n, k)``."""

    spec: LearnerSpec
    current_action: np.ndarray
    gradient_sum: np.ndarray
    previous_gradient: np.ndarray | None = None
    round: int = 0


def learner_init(spec: LearnerSpec, start) -> LearnerState:
    start = np.array(start, dtype=float)
    if not np.all(np.isfinite(start)) or np.any(start < 0.0) or np.any(start > 1.0):
        raise InvalidInputError("the starting action must lie in the unit cube")
    return LearnerState(spec, start, np.zeros_like(start))


def learner_step(state: LearnerState, gradient) -> LearnerState:
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != state.current_action.shape:
        raise InvalidInputError(
            f"gradient shape {gradient.shape} does not match action shape {state.current_action.shape}")
    spec = state.spec
    eta = spec.rate(state.round)
    move = gradient
    if spec.kind == "optimistic-gradient-ascent" and state.previous_gradient is not None:
        move = gradient + (gradient - state.previous_gradient)
    nxt = np.clip(state.current_action + eta * move, 0.0, 1.0)
    return LearnerState(spec, nxt, state.gradient_sum + gradient, gradient, state.round + 1)


@dataclass
class RegretLedger:
    """Everything needed to evaluate hindsight regret after the fact.

    ``profiles[t]`` is the joint profile played in round ``t + 1`` and
    ``utilities[t, i]`` the utility player ``i`` realized there.
    """

    game: PublishersGame
    profiles: list = field(default_factory=list)
    utilities: list = field(default_factory=list)

    def record(self, profile, utilities) -> None:
        self.profiles.append(np.array(profile, dtype=float))
        self.utilities.append(np.array(utilities, dtype=float))

    @property
    def rounds(self) -> int:
        return len(self.profiles)

    def profile_array(self, T: int | None = None) -> np.ndarray:
        T = self.rounds if T is None else T
        return np.asarray(self.profiles[:T])

    def utility_array(self, T: int | None = None) -> np.ndarray:
        T = self.rounds if T is None else T
        return np.asarray(self.utilities[:T])

    def truncated(self, T: int) -> RegretLedger:
        return replace(self, profiles=self.profiles[:T], utilities=self.utilities[:T])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        k = self.game.k
        writer.writerow(["round", "player", *[f"x{c}" for c in range(k)], "utility"])
        for t, (profile, utils) in enumerate(zip(self.profiles, self.utilities), start=1):
            for i in range(self.game.n):
                writer.writerow([t, i, *[repr(float(v)) for v in profile[i]], repr(float(utils[i]))])
        return buf.getvalue()


def _check_rounds(ledger: RegretLedger, T: int | None) -> int:
    if ledger.rounds == 0:
        raise InvalidInputError("the ledger is empty")
    T = ledger.rounds if T is None else int(T)
    if not 1 <= T <= ledger.rounds:
        raise InvalidInputError(f"ledger has {ledger.rounds} rounds, {T} requested")
    return T


def hindsight_regret(game: PublishersGame, ledger: RegretLedger, i: int,
                     oracle_tolerance: float = 1e-7, T: int | None = None,
                     global_search: bool | None = None) -> float:
    """Regret of player ``i`` over the first ``T`` rounds against the best fixed action.

    Under a concave activation the result is accurate to ``T * oracle_tolerance``.
    Otherwise a multi-start and coarse-grid search is used and the result is
    a lower bound on the true regret.
    """
    T = _check_rounds(ledger, T)
    if global_search is None:
        global_search = not game.activation.concave
    objective = ResponseObjective.from_profiles(game, i, ledger.profile_array(T))
    if global_search:
        best = global_maximize(objective, oracle_tolerance)
    else:
        best = maximize(objective, oracle_tolerance)
    realized = float(ledger.utility_array(T)[:, i].sum())
    return T * best.value - realized


def all_regrets(game: PublishersGame, ledger: RegretLedger, oracle_tolerance: float = 1e-7,
                T: int | None = None, global_search: bool | None = None) -> np.ndarray:
    return np.array([hindsight_regret(game, ledger, i, oracle_tolerance, T, global_search)
                     for i in range(game.n)])


def average_regret_at_T(game: PublishersGame, ledger: RegretLedger, T: int = 100,
                        oracle_tolerance: float = 1e-7) -> float:
    """Regret normalized by the horizon and averaged over publishers."""
    if ledger.rounds < T:
        raise InvalidInputError(f"ledger has {ledger.rounds} rounds, fewer than T={T}")
    return float(all_regrets(game, ledger, oracle_tolerance, T).sum() / (T * game.n))


def replay_utilities(game: PublishersGame, ledger: RegretLedger) -> np.ndarray:
    """Recompute realized utilities from stored profiles."""
    return np.array([all_utilities(game, x) for x in ledger.profiles])
