"""Instance sampling, parameter sweeps with bootstrap intervals, regret studies."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import run_dynamics, run_fixed_rounds
from .errors import InvalidInputError, SamplingError, UnsupportedOperationError
from .learners import LearnerSpec, RegretLedger, average_regret_at_T
from .model import Activation, DemandDistribution, PublishersGame, SemiMetric
from .response import ResponseObjective, coarse_grid, global_maximize, maximize

SAMPLER_KINDS = ("uniform-iid", "truncated-normal")
SWEPT = ("lambda", "n", "s", "k", "activation-hyperparameter")
METRICS = ("publishers_welfare", "users_welfare", "rounds")
MAX_ATTEMPTS = 10_000
# local refinement budget for the global regret oracle; its values are lower bounds anyway
TRACE_ITERATIONS = 300
SOFTMAX_LEARNER = LearnerSpec("optimistic-gradient-ascent", 0.5, "constant")


@dataclass(frozen=True)
class EcosystemSampler:
    kind: str = "uniform-iid"
    rho1: float = 0.0
    rho2: float = 0.0
    sigma1: float = 0.2
    sigma2: float = 0.2
    mean: float = 0.5

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InvalidInputError(f"unknown sampler kind {self.kind!r}")
        if not (-1.0 < self.rho1 < 1.0 and -1.0 < self.rho2 < 1.0):
            raise InvalidInputError("correlations must lie in (-1, 1)")
        if not (self.sigma1 > 0.0 and self.sigma2 > 0.0):
            raise InvalidInputError("scales must be positive")


def chain_covariance(rho: float, sigma: float) -> np.ndarray:
    """``sigma^2 * [[1, r, r^2], [r, 1, r], [r^2, r, 1]]``."""
    idx = np.arange(3)
    return sigma ** 2 * rho ** np.abs(idx[:, None] - idx[None, :])


def truncated_normal_draws(rng, rho: float, sigma: float, size: int, mean: float = 0.5,
                           max_attempts: int = MAX_ATTEMPTS) -> np.ndarray:
    """``size`` draws of a 3-variate normal truncated to the unit cube, by rejection."""
    cov = chain_covariance(rho, sigma)
    chol = np.linalg.cholesky(cov)
    out = np.empty((size, 3))
    pending = np.arange(size)
    attempts = 0
    while pending.size:
        attempts += 1
        if attempts > max_attempts:
            raise SamplingError(f"{pending.size} draws still rejected after {max_attempts} attempts")
        cand = mean + rng.standard_normal((pending.size, 3)) @ chol.T
        inside = np.all((cand >= 0.0) & (cand <= 1.0), axis=1)
        out[pending[inside]] = cand[inside]
        pending = pending[~inside]
    return out


def sample_instance(sampler: EcosystemSampler, n: int, s: int, k: int, lam: float,
                    activation: Activation, seed) -> PublishersGame:
    """Random game with uniform demand over ``s`` sampled information needs.

    Documents and needs come from separate child streams of ``seed``, so a
    change in ``n`` leaves the needs untouched and keeps the first documents.
    """
    doc_seq, atom_seq = np.random.SeedSequence(seed).spawn(2)
    doc_rng, atom_rng = np.random.default_rng(doc_seq), np.random.default_rng(atom_seq)
    if sampler.kind == "uniform-iid":
        docs = doc_rng.random((n, k))
        atoms = atom_rng.random((s, k))
    else:
        if n != 3 or s != 3:
            raise InvalidInputError("the truncated-normal sampler needs n = s = 3")
        docs = truncated_normal_draws(doc_rng, sampler.rho1, sampler.sigma1, k, sampler.mean).T.copy()
        atoms = truncated_normal_draws(atom_rng, sampler.rho2, sampler.sigma2, k, sampler.mean).T.copy()
    return PublishersGame(n, k, SemiMetric(), activation, DemandDistribution.uniform(atoms),
                          docs, np.full(n, float(lam)))


def bootstrap_ci(values, B: int = 500, confidence: float = 0.95, seed=0) -> tuple[float, float, float]:
    """Percentile bootstrap interval for the mean: ``(low, mean, high)``.

    The interval is widened to contain the sample mean when the resampled
    distribution is skewed enough to exclude it.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise InvalidInputError("bootstrap needs at least 2 values")
    if not 0.0 < confidence < 1.0:
        raise InvalidInputError("confidence must lie in (0, 1)")
    if np.all(values == values[0]):
        # summation would round a constant sample away from its own value
        v = float(values[0])
        return v, v, v
    rng = np.random.default_rng(seed)
    means = values[rng.integers(0, values.size, (B, values.size))].mean(axis=1)
    tail = (1.0 - confidence) / 2.0
    low, high = np.quantile(means, [tail, 1.0 - tail])
    mean = float(values.mean())
    return min(float(low), mean), mean, max(float(high), mean)


@dataclass
class SweepSpec:
    swept_parameter: str
    grid: tuple
    fixed: dict = field(default_factory=lambda: {"lambda": 0.5, "n": 3, "s": 3, "k": 3})
    activations: tuple = ("linear", "root", "log")
    activation_params: dict = field(default_factory=dict)
    instances_per_point: int = 500
    bootstrap_B: int = 500
    confidence: float = 0.95
    seed: int = 0
    sampler: EcosystemSampler = field(default_factory=EcosystemSampler)
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    epsilon: float = 1e-4
    check_every: int = 10
    max_rounds: int = 200_000
    pair_across_grid: bool = True
    instance_seeds: tuple | None = None

    def __post_init__(self):
        if self.swept_parameter not in SWEPT:
            raise InvalidInputError(f"swept_parameter must be one of {SWEPT}")
        self.grid = tuple(self.grid)
        if not self.grid:
            raise InvalidInputError("grid must not be empty")
        if self.instances_per_point < 2:
            raise InvalidInputError("instances_per_point must be at least 2")
        fixed = {"lambda": 0.5, "n": 3, "s": 3, "k": 3}
        fixed.update(self.fixed)
        self.fixed = fixed
        self.activations = tuple(self.activations)
        for fam in self.activations:
            Activation(fam, self.activation_params.get(fam))
        if self.instance_seeds is not None:
            self.instance_seeds = tuple(self.instance_seeds)
            if len(self.instance_seeds) != self.instances_per_point:
                raise InvalidInputError("instance_seeds needs one seed per instance")

    def instance_seed(self, grid_index: int, instance: int) -> int:
        if self.instance_seeds is not None:
            return int(self.instance_seeds[instance])
        key = [self.seed, instance] if self.pair_across_grid else [self.seed, grid_index, instance]
        return int(np.random.SeedSequence(key).generate_state(1)[0])

    def configuration(self, value, family: str):
        """``(n, s, k, lambda, activation)`` at one grid value."""
        params = dict(self.fixed)
        param = self.activation_params.get(family)
        if self.swept_parameter == "activation-hyperparameter":
            param = value
        else:
            params[self.swept_parameter] = value
        return (int(params["n"]), int(params["s"]), int(params["k"]), float(params["lambda"]),
                Activation(family, param))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = list(self.grid)
        out["activations"] = list(self.activations)
        return out


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    records: list
    flagged: list = field(default_factory=list)

    def row(self, value, activation: str, metric: str) -> dict:
        for r in self.rows:
            if r["value"] == value and r["activation"] == activation and r["metric"] == metric:
                return r
        raise KeyError((value, activation, metric))

    def series(self, activation: str, metric: str) -> list:
        return [self.row(v, activation, metric) for v in self.spec.grid]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["swept_parameter", "value", "activation", "metric", "mean", "ci_low", "ci_high",
                "n_instances", "n_failed"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols})
        return buf.getvalue()

    def manifest(self) -> str:
        return json.dumps({"spec": self.spec.to_dict(), "flagged": self.flagged}, indent=2, sort_keys=True)


def _run_instance(task):
    spec, value, family, seed = task
    record = {"value": value, "activation": family, "seed": seed}
    try:
        n, s, k, lam, act = spec.configuration(value, family)
        game = sample_instance(spec.sampler, n, s, k, lam, act, seed)
        _, report, _ = run_dynamics(game, spec.learner, spec.epsilon, spec.check_every,
                                    spec.max_rounds, seed=0, last_iterate=False)
        record.update(converged=report.converged, rounds=report.rounds,
                      publishers_welfare=report.publishers_welfare,
                      users_welfare=report.users_welfare, error=None)
    except Exception as exc:  # recorded, not fatal
        record.update(converged=False, error=f"{type(exc).__name__}: {exc}")
    return record


def _regret_instance(task):
    spec, value, family, seed, T, tol = task
    record = {"value": value, "activation": family, "seed": seed}
    try:
        n, s, k, lam, act = spec.configuration(value, family)
        game = sample_instance(spec.sampler, n, s, k, lam, act, seed)
        ledger = run_fixed_rounds(game, spec.learner, T)
        record.update(average_regret=average_regret_at_T(game, ledger, T, tol), converged=True, error=None)
    except Exception as exc:
        record.update(converged=False, error=f"{type(exc).__name__}: {exc}")
    return record


def _map(func, tasks, jobs):
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _tasks(spec: SweepSpec, *extra):
    return [
        (spec, value, family, spec.instance_seed(g, inst), *extra)
        for g, value in enumerate(spec.grid)
        for family in spec.activations
        for inst in range(spec.instances_per_point)
    ]


def _aggregate(spec: SweepSpec, records: list, metrics) -> SweepResult:
    rows, flagged = [], []
    for g, value in enumerate(spec.grid):
        for a, family in enumerate(spec.activations):
            group = [r for r in records if r["value"] == value and r["activation"] == family]
            ok = [r for r in group if r["converged"]]
            failed = len(group) - len(ok)
            if failed > 0.5 * len(group):
                flagged.append({"value": value, "activation": family, "n_failed": failed})
            for m, metric in enumerate(metrics):
                vals = [r[metric] for r in ok]
                if len(vals) >= 2:
                    low, mean, high = bootstrap_ci(vals, spec.bootstrap_B, spec.confidence,
                                                   seed=[spec.seed, g, a, m])
                else:
                    low = mean = high = float(vals[0]) if vals else float("nan")
                rows.append({"swept_parameter": spec.swept_parameter, "value": value,
                             "activation": family, "metric": metric, "mean": mean,
                             "ci_low": low, "ci_high": high, "n_instances": len(vals),
                             "n_failed": failed})
    return SweepResult(spec, rows, records, flagged)


def run_sweep(spec: SweepSpec, jobs: int | None = None) -> SweepResult:
    """Seeded dynamics for every grid value, activation and instance index.

    Instance ``j`` uses the same seed for every activation (and, with
    ``pair_across_grid``, for every grid value), so comparisons are paired.
    Welfare is measured at the certified average profile; runs that fail or
    do not converge count in ``n_failed``.
    """
    records = _map(_run_instance, _tasks(spec), jobs)
    return _aggregate(spec, records, METRICS)


def regret_audit(spec: SweepSpec, T: int = 100, oracle_tolerance: float = 1e-7,
                 jobs: int | None = None) -> SweepResult:
    """Average regret after exactly ``T`` rounds, with bootstrap intervals."""
    records = _map(_regret_instance, _tasks(spec, T, oracle_tolerance), jobs)
    return _aggregate(spec, records, ("average_regret",))


SHOWCASE_ATOMS = [(0.55, 0.72, 0.60), (0.54, 0.42, 0.65), (0.44, 0.89, 0.96)]
SHOWCASE_DOCS = [(0.38, 0.79, 0.59), (0.57, 0.93, 0.07), (0.09, 0.02, 0.83)]


def showcase_instance(activation: Activation, lam: float = 0.5) -> PublishersGame:
    """Fixed three-publisher, three-need instance in dimension 3."""
    return PublishersGame(3, 3, SemiMetric(), activation, DemandDistribution.uniform(SHOWCASE_ATOMS),
                          SHOWCASE_DOCS, np.full(3, lam))


@dataclass
class SoftmaxTrace:
    checkpoints: list
    regrets: np.ndarray
    slopes: np.ndarray
    companion_regrets: np.ndarray
    companion_slopes: np.ndarray
    beta: float
    companion: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "player", "softmax_regret", "companion_regret"])
        for c, t in enumerate(self.checkpoints):
            for i in range(self.regrets.shape[1]):
                writer.writerow([t, i, repr(float(self.regrets[c, i])),
                                 repr(float(self.companion_regrets[c, i]))])
        return buf.getvalue()


def log_checkpoints(T: int, count: int = 12, first: int = 10) -> list:
    pts = np.unique(np.round(np.geomspace(first, T, count)).astype(int))
    return sorted(set(pts.tolist()) | {T})


def _least_squares_slopes(ts, regrets) -> np.ndarray:
    return np.polyfit(np.asarray(ts, dtype=float), regrets, 1)[0]


def regret_series(ledger: RegretLedger, checkpoints, oracle_tolerance: float = 1e-7,
                  global_search: bool = False, seed: int = 0) -> np.ndarray:
    """``Reg_i^t`` for every checkpoint ``t`` and player ``i``.

    With ``global_search`` the coarse-grid sums are accumulated round by
    round, and each value is a lower bound on the true regret.
    """
    game = ledger.game
    profiles = ledger.profile_array()
    utils = ledger.utility_array()
    out = np.empty((len(checkpoints), game.n))
    if global_search and game.k > 3:
        raise UnsupportedOperationError("global regret search is limited to k <= 3")
    grid = coarse_grid(game.k) if global_search else None
    for i in range(game.n):
        grid_sum = np.zeros(len(grid)) if global_search else None
        done = 0
        for c, t in enumerate(checkpoints):
            objective = ResponseObjective.from_profiles(game, i, profiles[:t])
            if global_search:
                window = ResponseObjective(game, i, objective.mass[done:t])
                grid_sum += window.value(grid) * (t - done)
                done = t
                best = global_maximize(objective, oracle_tolerance, seed, grid_values=grid_sum / t,
                                       max_iterations=TRACE_ITERATIONS)
            else:
                best = maximize(objective, oracle_tolerance, seed)
            out[c, i] = t * best.value - utils[:t, i].sum()
    return out


def softmax_regret_trace(game: PublishersGame, beta: float = 10.0, T: int = 5000, seed: int = 0,
                         checkpoints=None, learner: LearnerSpec | None = None,
                         companion: Activation | None = None,
                         oracle_tolerance: float = 1e-7) -> SoftmaxTrace:
    """Regret over time under exponential activation next to a concave companion.

    The game's activation is replaced by ``exp(-beta t)``; the companion run
    uses the same instance with ``companion`` (linear by default). Both runs
    use ``learner``, by default optimistic ascent with a constant rate of 1/2.
    """
    if game.k > 3:
        raise UnsupportedOperationError("the softmax trace needs k <= 3 for its global regret oracle")
    checkpoints = log_checkpoints(T) if checkpoints is None else sorted(int(t) for t in checkpoints)
    if checkpoints[-1] > T:
        raise InvalidInputError("checkpoints beyond T")
    softmax_game = game.with_activation(Activation("exponential", beta))
    companion = companion or Activation("linear")
    if not companion.concave:
        raise InvalidInputError("the companion activation must be concave")
    companion_game = game.with_activation(companion)
    learner = learner or SOFTMAX_LEARNER

    ledger = run_fixed_rounds(softmax_game, learner, T)
    regrets = regret_series(ledger, checkpoints, oracle_tolerance, global_search=True, seed=seed)
    comp_ledger = run_fixed_rounds(companion_game, learner, T)
    comp_regrets = regret_series(comp_ledger, checkpoints, oracle_tolerance, seed=seed)
    return SoftmaxTrace(
        checkpoints=list(checkpoints),
        regrets=regrets,
        slopes=_least_squares_slopes(checkpoints, regrets),
        companion_regrets=comp_regrets,
        companion_slopes=_least_squares_slopes(checkpoints, comp_regrets),
        beta=beta,
        companion=companion.to_dict(),
    )
