"""Command-line entry point: ``prfgames <subcommand> [options]``.

Every option can also come from a JSON file given with ``--config``.
Values resolve as command-line flag, then config file, then default, and
the resolved values with their sources are written to ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .analysis import (
    SymmetricInstance,
    audit_concavity,
    build_counterexample,
    counterexample_second_derivative,
    curvature_peak,
    symmetric_equilibrium,
)
from .dynamics import run_dynamics
from .errors import AbortedRunError, InvalidInputError, SamplingError, UnsupportedOperationError
from .experiments import (
    EcosystemSampler,
    SweepSpec,
    log_checkpoints,
    regret_audit,
    run_sweep,
    sample_instance,
    softmax_regret_trace,
)
from .learners import KINDS, SCHEDULES, LearnerSpec
from .model import DEFAULT_PARAMS, FAMILIES, Activation, PublishersGame

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class ConfigError(InvalidInputError):
    pass


def _positive_int(name):
    def check(v):
        if isinstance(v, bool) or int(v) != v or v < 1:
            raise ConfigError(f"invalid {name}: must be a positive integer (got {v!r})")
        return int(v)
    return check


def _real(name, low=None, high=None, strict_low=False):
    def check(v):
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid {name}: must be a number (got {v!r})") from None
        if not np.isfinite(v):
            raise ConfigError(f"invalid {name}: must be finite (got {v!r})")
        if low is not None and (v < low or (strict_low and v == low)):
            bound = ">" if strict_low else ">="
            raise ConfigError(f"invalid {name}: must be {bound} {low} (got {v!r})")
        if high is not None and v > high:
            raise ConfigError(f"invalid {name}: must be <= {high} (got {v!r})")
        return v
    return check


def _choice(name, options):
    def check(v):
        if v not in options:
            raise ConfigError(f"invalid {name}: must be one of {', '.join(options)} (got {v!r})")
        return v
    return check


def _optional(check):
    return lambda v: None if v is None else check(v)


def _real_list(name):
    def check(v):
        if isinstance(v, str):
            v = [p for p in v.split(",") if p.strip()]
        if not isinstance(v, (list, tuple)) or not v:
            raise ConfigError(f"invalid {name}: must be a non-empty list")
        return [_real(name)(p) for p in v]
    return check


def _name_list(name, options):
    def check(v):
        if isinstance(v, str):
            v = [p.strip() for p in v.split(",") if p.strip()]
        if not v:
            raise ConfigError(f"invalid {name}: must be a non-empty list")
        return [_choice(name, options)(p) for p in v]
    return check


# (field, flag type, default, validator, help); flags use dashes for underscores
COMMON = [
    ("seed", int, 0, lambda v: int(_real("seed", 0)(v)), "master random seed"),
    ("out", str, "results", str, "output directory"),
]
GAME = [
    ("activation", str, "linear", _choice("activation", FAMILIES), "activation family"),
    ("param", float, None, _optional(_real("param")), "activation hyperparameter (family default if omitted)"),
    ("n", int, 3, _positive_int("n"), "number of publishers"),
    ("s", int, 3, _positive_int("s"), "number of information needs"),
    ("k", int, 3, _positive_int("k"), "embedding dimension"),
    ("lambda", float, 0.5, _real("lambda", 0.0, strict_low=True), "integrity penalty"),
    ("sampler", str, "uniform-iid", _choice("sampler", ("uniform-iid", "truncated-normal")), "instance sampler"),
    ("rho1", float, 0.0, _real("rho1", -0.999, 0.999), "document correlation (truncated-normal)"),
    ("rho2", float, 0.0, _real("rho2", -0.999, 0.999), "need correlation (truncated-normal)"),
]
LEARNING = [
    ("learner", str, KINDS[0], _choice("learner", KINDS), "learner kind"),
    ("eta0", float, 0.5, _real("eta0", 0.0, strict_low=True), "base learning rate"),
    ("schedule", str, "inverse-sqrt", _choice("schedule", SCHEDULES), "learning-rate schedule"),
]
CERTIFY = [
    ("epsilon", float, 1e-4, _real("epsilon", 0.0, strict_low=True), "equilibrium gap target"),
    ("check_every", int, 10, _positive_int("check_every"), "rounds between certifications"),
    ("max_rounds", int, 200_000, _positive_int("max_rounds"), "round budget"),
]
SWEEP = [
    ("parameter", str, "lambda", _choice("parameter", ("lambda", "n", "s", "k", "activation-hyperparameter")),
     "swept parameter"),
    ("grid", str, "0.1,0.5,1,2", _real_list("grid"), "comma-separated grid values"),
    ("activations", str, "linear,root,log", _name_list("activations", FAMILIES), "comma-separated families"),
    ("instances", int, 50, _positive_int("instances"), "instances per grid point"),
    ("bootstrap", int, 500, _positive_int("bootstrap"), "bootstrap resamples"),
    ("confidence", float, 0.95, _real("confidence", 0.0, 1.0, strict_low=True), "interval confidence"),
    ("jobs", int, None, _optional(_positive_int("jobs")), "worker processes (default: all cores)"),
]

COMMANDS = {
    "simulate": ("run one dynamics instance and certify its running average",
                 COMMON + GAME + LEARNING + CERTIFY),
    "sweep": ("seeded parameter sweep with bootstrap intervals",
              COMMON + [f for f in GAME if f[0] not in ("activation", "param")] + LEARNING + CERTIFY + SWEEP),
    "concavity": ("audit the concavity conditions on a random instance",
                  COMMON + GAME + [("samples", int, 1000, _positive_int("samples"), "random tests")]),
    "equilibrium": ("solve the symmetric single-need equilibrium", COMMON + [
        ("n", int, 2, _positive_int("n"), "number of publishers"),
        ("c1", float, 0.25, _real("c1", 0.0, 1.0, strict_low=True), "initial distance to the need"),
        ("lambda", float, 0.5, _real("lambda", 0.0, strict_low=True), "integrity penalty"),
        ("activation", str, "linear", _choice("activation", ("linear", "root", "log")), "activation family"),
        ("param", float, None, _optional(_real("param")), "activation hyperparameter"),
        ("equation", str, "exact", _choice("equation", ("exact", "scaled")), "first-order condition"),
        ("tolerance", float, 1e-10, _real("tolerance", 0.0, strict_low=True), "bisection tolerance"),
    ]),
    "counterexample": ("build a non-concave one-dimensional instance", COMMON + [
        ("activation", str, "exponential", _choice("activation", FAMILIES), "activation family"),
        ("param", float, None, _optional(_real("param")), "activation hyperparameter"),
        ("ahat", float, None, _optional(_real("ahat", 0.0, 1.0, strict_low=True)),
         "curvature point (strongest curvature if omitted)"),
        ("lambda", float, 0.5, _real("lambda", 0.0, strict_low=True), "integrity penalty"),
    ]),
    "regret-audit": ("average regret after a fixed number of rounds",
                     COMMON + [f for f in GAME if f[0] not in ("activation", "param")] + LEARNING + SWEEP
                     + [("T", int, 100, _positive_int("T"), "rounds per run"),
                        ("oracle_tolerance", float, 1e-7, _real("oracle_tolerance", 0.0, strict_low=True),
                         "best-response tolerance")]),
    "softmax-trace": ("regret over time under exponential activation", COMMON + [
        ("beta", float, 10.0, _real("beta", 0.0, strict_low=True), "inverse temperature"),
        ("T", int, 5000, _positive_int("T"), "rounds"),
        ("n", int, 3, _positive_int("n"), "number of publishers"),
        ("s", int, 3, _positive_int("s"), "number of information needs"),
        ("k", int, 3, _positive_int("k"), "embedding dimension (at most 3)"),
        ("lambda", float, 0.5, _real("lambda", 0.0, strict_low=True), "integrity penalty"),
        ("learner", str, "optimistic-gradient-ascent", _choice("learner", KINDS), "learner kind"),
        ("eta0", float, 0.5, _real("eta0", 0.0, strict_low=True), "base learning rate"),
        ("schedule", str, "constant", _choice("schedule", SCHEDULES), "learning-rate schedule"),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prfgames",
        description="Publishers' games under proportional ranking: dynamics, audits and sweeps.",
        epilog=("defaults: lambda=0.5, n=3, s=3, k=3, epsilon=1e-4, eta0=0.5, "
                + ", ".join(f"{fam} param={DEFAULT_PARAMS[fam]!r}" for fam in FAMILIES)
                + "; run '<subcommand> --help' for every option"),
    )
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name, (summary, fields) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", help="JSON file with option values", default=None)
        for field, ftype, default, _, text in fields:
            # defaults live in the table; None marks "not given" for precedence
            p.add_argument("--" + field.replace("_", "-"), dest=field, type=ftype, default=None,
                           help=f"{text} (default: {default})")
    return parser


def resolve(command: str, args: argparse.Namespace) -> tuple[dict, dict]:
    """Validated option values and where each came from."""
    _, fields = COMMANDS[command]
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid config: cannot read {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("invalid config: top level must be a JSON object")
    known = {f[0] for f in fields} | {"game"}
    unknown = sorted(set(config) - known)
    if unknown:
        raise ConfigError(f"invalid config: unknown field {unknown[0]!r}")
    values, sources = {}, {}
    for field, _, default, check, _ in fields:
        flag = getattr(args, field)
        if flag is not None:
            raw, sources[field] = flag, "flag"
        elif field in config:
            raw, sources[field] = config[field], "config"
        else:
            raw, sources[field] = default, "default"
        values[field] = check(raw) if raw is not None else None
    if "game" in config:
        values["game"], sources["game"] = config["game"], "config"
    return values, sources


def _activation(values, family_key="activation") -> Activation:
    return Activation(values[family_key], values.get("param"))


def _learner(values) -> LearnerSpec:
    return LearnerSpec(values["learner"], values["eta0"], values["schedule"])


def _sampler(values) -> EcosystemSampler:
    return EcosystemSampler(values["sampler"], values["rho1"], values["rho2"])


def _game(values) -> PublishersGame:
    if values.get("game") is not None:
        try:
            return PublishersGame.from_dict(values["game"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid game: {exc}") from None
    return sample_instance(_sampler(values), values["n"], values["s"], values["k"], values["lambda"],
                           _activation(values), values["seed"])


def _write(out: str, files: dict) -> None:
    try:
        os.makedirs(out, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(out, name), "w") as fh:
                fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write to output directory {out!r}: {exc.strerror or exc}") from None


def _manifest(command, values, sources) -> str:
    return json.dumps({"command": command, "values": values, "sources": sources}, indent=2, sort_keys=True)


def _sweep_spec(values, activations) -> SweepSpec:
    grid = values["grid"]
    if values["parameter"] in ("n", "s", "k"):
        if any(v != int(v) or v < 1 for v in grid):
            raise ConfigError(f"invalid grid: {values['parameter']} values must be positive integers")
        grid = [int(v) for v in grid]
    return SweepSpec(
        swept_parameter=values["parameter"],
        grid=tuple(grid),
        fixed={"lambda": values["lambda"], "n": values["n"], "s": values["s"], "k": values["k"]},
        activations=tuple(activations),
        instances_per_point=values["instances"],
        bootstrap_B=values["bootstrap"],
        confidence=values["confidence"],
        seed=values["seed"],
        sampler=_sampler(values),
        learner=_learner(values),
        **({k: values[k] for k in ("epsilon", "check_every", "max_rounds") if k in values}),
    )


def cmd_simulate(values):
    game = _game(values)
    traj, report, _ = run_dynamics(game, _learner(values), values["epsilon"], values["check_every"],
                                   values["max_rounds"], seed=values["seed"])
    files = {"trajectory.csv": traj.to_csv(), "report.json": report.to_json(), "game.json": game.to_json()}
    status = "converged" if report.converged else "not converged"
    summary = (f"simulate: {status} after {report.rounds} rounds, gap {report.certified_epsilon:.3g}, "
               f"publishers' welfare {report.publishers_welfare:.6f}, users' welfare {report.users_welfare:.6f}")
    return files, summary, EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_sweep(values):
    result = run_sweep(_sweep_spec(values, values["activations"]), jobs=values["jobs"])
    failed = sum(1 for r in result.records if not r["converged"])
    summary = (f"sweep: {values['parameter']} over {len(result.spec.grid)} values, "
               f"{len(result.records)} runs, {failed} not converged")
    return {"sweep.csv": result.to_csv(), "sweep_manifest.json": result.manifest()}, summary, EXIT_OK


def cmd_concavity(values):
    verdict = audit_concavity(_game(values), values["samples"], values["seed"])
    summary = (f"concavity: activation_concave={str(verdict.activation_concave).lower()}, "
               f"{verdict.own_concavity_violations} concavity and {verdict.opponent_convexity_violations} "
               f"convexity violations in {values['samples']} tests")
    return {"concavity.json": verdict.to_json()}, summary, EXIT_OK


def equilibrium_payload(values) -> dict:
    inst = SymmetricInstance(values["n"], values["c1"], values["lambda"], _activation(values))
    alpha, welfare = symmetric_equilibrium(inst, values["tolerance"], values["equation"])
    return {"n": inst.n, "c1": inst.c1, "lambda": inst.lam, "activation": inst.activation.to_dict(),
            "equation": values["equation"], "alpha": alpha, "users_welfare": welfare}


def cmd_equilibrium(values):
    payload = equilibrium_payload(values)
    summary = (f"equilibrium: alpha={payload['alpha']:.6f}, users' welfare={payload['users_welfare']:.6f} "
               f"({payload['equation']} condition)")
    return {"equilibrium.json": json.dumps(payload, indent=2, sort_keys=True)}, summary, EXIT_OK


def counterexample_payload(values) -> dict:
    act = _activation(values)
    a_hat = values["ahat"] if values["ahat"] is not None else curvature_peak(act)
    game = build_counterexample(act, a_hat, values["lambda"])
    return {"a_hat": a_hat, "n": game.n, "second_derivative": counterexample_second_derivative(act, game.n, a_hat),
            "game": game.to_dict()}


def cmd_counterexample(values):
    payload = counterexample_payload(values)
    summary = f"counterexample: n={payload['n']}, f''(a_hat={payload['a_hat']:.6g})={payload['second_derivative']:.6f}"
    return {"counterexample.json": json.dumps(payload, indent=2, sort_keys=True)}, summary, EXIT_OK


def cmd_regret_audit(values):
    spec = _sweep_spec(values, values["activations"])
    result = regret_audit(spec, values["T"], values["oracle_tolerance"], jobs=values["jobs"])
    summary = f"regret-audit: {values['parameter']} over {len(spec.grid)} values at T={values['T']}"
    return {"regret_audit.csv": result.to_csv(), "regret_audit_manifest.json": result.manifest()}, summary, EXIT_OK


def cmd_softmax_trace(values):
    if values.get("game") is not None:
        game = _game(values)
    else:
        game = sample_instance(EcosystemSampler(), values["n"], values["s"], values["k"], values["lambda"],
                               Activation("linear"), values["seed"])
    trace = softmax_regret_trace(game, values["beta"], values["T"], seed=values["seed"],
                                 checkpoints=log_checkpoints(values["T"]), learner=_learner(values))
    payload = {"beta": trace.beta, "checkpoints": trace.checkpoints, "slopes": trace.slopes.tolist(),
               "companion": trace.companion, "companion_slopes": trace.companion_slopes.tolist()}
    summary = (f"softmax-trace: largest softmax slope {max(trace.slopes):.4g}, "
               f"largest companion slope {max(trace.companion_slopes):.4g}")
    files = {"softmax_trace.csv": trace.to_csv(),
             "softmax_trace.json": json.dumps(payload, indent=2, sort_keys=True)}
    return files, summary, EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "concavity": cmd_concavity,
    "equilibrium": cmd_equilibrium,
    "counterexample": cmd_counterexample,
    "regret-audit": cmd_regret_audit,
    "softmax-trace": cmd_softmax_trace,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_ERROR
    try:
        values, sources = resolve(args.command, args)
        files, summary, status = HANDLERS[args.command](values)
        files["manifest.json"] = _manifest(args.command, values, sources)
        _write(values["out"], files)
    except (InvalidInputError, UnsupportedOperationError, SamplingError, AbortedRunError, OSError) as exc:
        print(f"prfgames {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(summary)
    return status


if __name__ == "__main__":
    sys.exit(main())
