"""Repeated play, running averages and epsilon-Nash certification."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import AbortedRunError, InvalidInputError
from .learners import (
    LearnerSpec,
    RegretLedger,
    all_regrets,
    hindsight_regret,
    learner_init,
    learner_step,
)
from .model import PublishersGame, publishers_welfare, users_welfare, utilities_and_gradients
from .response import best_response, epsilon_gap, global_best_response, improvement_lower_bound

__all__ = [
    "ConvergenceReport",
    "Trajectory",
    "best_response",
    "epsilon_gap",
    "global_best_response",
    "proposition_bound",
    "run_dynamics",
    "run_heterogeneous_stops",
    "theorem_epsilon",
]

CHECK_EVERY = 10
MAX_ROUNDS = 200_000


@dataclass
class Trajectory:
    profiles: list = field(default_factory=list)
    utilities: list = field(default_factory=list)
    running_average: np.ndarray | None = None
    rounds_completed: int = 0

    def profile_array(self) -> np.ndarray:
        return np.asarray(self.profiles)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        k = self.profiles[0].shape[1] if self.profiles else 0
        writer.writerow(["round", "player", *[f"x{c}" for c in range(k)], "utility"])
        for t, (profile, utils) in enumerate(zip(self.profiles, self.utilities), start=1):
            for i, doc in enumerate(profile):
                writer.writerow([t, i, *[repr(float(v)) for v in doc], repr(float(utils[i]))])
        return buf.getvalue()


@dataclass
class ConvergenceReport:
    converged: bool
    rounds: int
    certified_epsilon: float
    final_average: np.ndarray
    publishers_welfare: float
    users_welfare: float
    oracle_tolerance: float
    last_iterate_gap: float = float("nan")

    @property
    def welfare_at_equilibrium(self) -> tuple[float, float]:
        return self.publishers_welfare, self.users_welfare

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "rounds": self.rounds,
            "certified_epsilon": self.certified_epsilon,
            "oracle_tolerance": self.oracle_tolerance,
            "welfare": {"publishers": self.publishers_welfare, "users": self.users_welfare},
            "final_average": self.final_average.tolist(),
            "last_iterate_gap": self.last_iterate_gap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _certify(game: PublishersGame, x, epsilon: float, tolerance: float, global_search: bool,
             seed: int) -> float | None:
    """Gap at ``x`` if it may be within ``epsilon``; ``None`` if a cheap step already beats it."""
    if np.max(improvement_lower_bound(game, x)) > epsilon:
        return None
    return epsilon_gap(game, x, tolerance, global_search, seed)


def run_dynamics(game: PublishersGame, learner_spec: LearnerSpec | None = None, epsilon: float = 1e-4,
                 check_every: int = CHECK_EVERY, max_rounds: int = MAX_ROUNDS, seed: int = 0,
                 oracle_tolerance: float | None = None, last_iterate: bool = True):
    """Play the game with every publisher running her own learner.

    Each player starts at her initial document. Every ``check_every`` rounds
    the running average is certified with a best-response oracle at
    tolerance ``epsilon / 10`` and the run stops once its gap is at most
    ``epsilon``. Returns the trajectory, a convergence report and the regret
    ledger. ``seed`` drives the oracle's random restarts.
    """
    if not epsilon > 0.0:
        raise InvalidInputError("epsilon must be positive")
    if max_rounds < 1 or check_every < 1:
        raise InvalidInputError("max_rounds and check_every must be at least 1")
    spec = learner_spec or LearnerSpec()
    tol = epsilon / 10.0 if oracle_tolerance is None else oracle_tolerance
    global_search = not game.activation.concave

    state = learner_init(spec, game.initial_docs)
    ledger = RegretLedger(game)
    traj = Trajectory(ledger.profiles, ledger.utilities)
    total = np.zeros_like(game.initial_docs)
    converged = False
    gap = float("nan")
    t = 0
    for t in range(1, max_rounds + 1):
        x = state.current_action
        utils, grads = utilities_and_gradients(game, x)
        if not (np.all(np.isfinite(grads)) and np.all(np.isfinite(utils))):
            raise AbortedRunError(f"non-finite gradient in round {t}",
                                  {"round": t, "profile": x.tolist(), "gradient": grads.tolist()})
        ledger.record(x, utils)
        total += x
        if t % check_every == 0 or t == max_rounds:
            found = _certify(game, total / t, epsilon, tol, global_search, seed)
            if found is not None:
                gap = found
                if gap <= epsilon:
                    converged = True
                    break
        state = learner_step(state, grads)

    average = total / t
    if not converged:
        gap = epsilon_gap(game, average, tol, global_search, seed)
    last_gap = float("nan")
    if last_iterate:
        last_gap = epsilon_gap(game, ledger.profiles[-1], tol, global_search, seed)
    traj.running_average = average
    traj.rounds_completed = t
    report = ConvergenceReport(
        converged=converged,
        rounds=t,
        certified_epsilon=gap,
        final_average=average,
        publishers_welfare=publishers_welfare(game, average),
        users_welfare=users_welfare(game, average),
        oracle_tolerance=tol,
        last_iterate_gap=last_gap,
    )
    return traj, report, ledger


def run_fixed_rounds(game: PublishersGame, learner_spec: LearnerSpec | None, T: int) -> RegretLedger:
    """Play exactly ``T`` rounds with no stopping rule."""
    spec = learner_spec or LearnerSpec()
    state = learner_init(spec, game.initial_docs)
    ledger = RegretLedger(game)
    for t in range(1, T + 1):
        utils, grads = utilities_and_gradients(game, state.current_action)
        if not np.all(np.isfinite(grads)):
            raise AbortedRunError(f"non-finite gradient in round {t}", {"round": t})
        ledger.record(state.current_action, utils)
        state = learner_step(state, grads)
    return ledger


def theorem_epsilon(ledger: RegretLedger, T: int | None = None, oracle_tolerance: float = 1e-7,
                    regrets=None) -> float:
    """Certificate ``sum_j max(Reg_j, 0) / T`` for the average of the first ``T`` rounds.

    With equal weights on every player the weighted certificate reduces to
    the plain regret sum over the horizon. ``regrets`` skips the oracle.
    """
    T = ledger.rounds if T is None else T
    if regrets is None:
        regrets = all_regrets(ledger.game, ledger, oracle_tolerance, T)
    return float(np.sum(np.maximum(np.asarray(regrets, dtype=float), 0.0)) / T)


def proposition_bound(regrets, stop_times, lambdas) -> float:
    """Gap bound for players committing to their averages at different times."""
    regrets = np.maximum(np.asarray(regrets, dtype=float), 0.0)
    stops = np.asarray(stop_times, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    t_max = stops.max()
    return float(np.sum(regrets + (1.0 + lambdas) * (t_max - stops)) / t_max)


class CommitmentResult(NamedTuple):
    profile: np.ndarray
    certified_gap: float
    bound: float


def run_heterogeneous_stops(game: PublishersGame, learner_spec: LearnerSpec | None, stop_times,
                            seed: int = 0, oracle_tolerance: float = 1e-6) -> CommitmentResult:
    """Players learn for their own number of rounds, then commit to their averages."""
    stops = np.asarray(stop_times, dtype=int)
    if stops.shape != (game.n,) or np.any(stops < 1):
        raise InvalidInputError("need one stop time >= 1 per player")
    spec = learner_spec or LearnerSpec()
    t_max = int(stops.max())
    state = learner_init(spec, game.initial_docs)
    ledger = RegretLedger(game)
    total = np.zeros_like(game.initial_docs)
    committed = np.zeros(game.n, dtype=bool)
    commitment = np.zeros_like(game.initial_docs)
    x = state.current_action
    for t in range(1, t_max + 1):
        utils, grads = utilities_and_gradients(game, x)
        if not np.all(np.isfinite(grads)):
            raise AbortedRunError(f"non-finite gradient in round {t}", {"round": t})
        ledger.record(x, utils)
        total += np.where(committed[:, None], 0.0, x)
        done = (stops == t) & ~committed
        commitment[done] = total[done] / t
        committed |= done
        state = learner_step(state, grads)
        x = np.where(committed[:, None], commitment, state.current_action)

    regrets = np.array([
        hindsight_regret(game, ledger, j, oracle_tolerance, int(stops[j])) for j in range(game.n)
    ])
    gap = epsilon_gap(game, commitment, oracle_tolerance, seed=seed)
    return CommitmentResult(commitment, gap, proposition_bound(regrets, stops, game.lambdas))

