"""Command-line entry point.

Exit codes: 0 success, 2 statistical Reject (``test``), 1 operational
failure or a validation run below its threshold.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import estimators as est
from .config import (
    CampaignConfig,
    build_initial_states,
    build_policy,
    build_space,
    build_system,
    control_plan,
    expected_plan,
    initial_support,
    load_config,
    reach_plan,
    resolve_x0,
    space_dim,
)
from .errors import ConfigError, PacReachError
from .planner import ReachPlan, small_p_approximations
from .runs import SETS, RunDir, dumps, reach_record, sets_record, state_file, write_report
from .space import BoxSpace
from .systems import _jsonable

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_REJECT = 2


def _say(msg: str = ""):
    print(msg, flush=True)


def describe_space(space) -> str:
    if isinstance(space, BoxSpace):
        return f"box lo={list(space.lo)} hi={list(space.hi)} gamma={space.gamma:g}"
    return f"categorical labels={list(space.labels)}"


def shortcut_note(N: int, p: float, delta_R: float, m: int) -> str:
    approx = small_p_approximations(N, p, delta_R)
    return (
        f"note: exact bound m={m}; the small-p shortcut ln(N/delta_R)/p gives {approx['ln_small_p']:.1f} "
        f"and the base-10 variant log10(N/delta_R)/p gives {approx['log10_small_p']:.1f}. "
        f"The base-10 variant under-samples and does not carry the stated guarantee."
    )


# ---------------------------------------------------------------------------
# commands


def cmd_plan(cfg: CampaignConfig, out=None) -> int:
    space = build_space(cfg)
    N = space.n_bins
    k = cfg.knobs
    _say(f"space: {describe_space(space)}")
    _say(f"N = {N} bins")
    cp = control_plan(cfg, N)
    _say(f"controllability plan (alpha={k.alpha:g}, epsilon={k.epsilon:g}, delta={k.delta:g}, p={k.p:g}):")
    _say(f"  m = {cp.m} rollouts per initial state")
    _say(f"  k = {cp.k} initial states")
    _say(f"  n = m*k = {cp.total_n}")
    _say(f"  delta_R = {cp.delta_R:.6g}")
    _say(f"  delta_C = {cp.delta_C:.6g}")
    _say(f"  guarantee: {cp.guarantee()}")
    rp = reach_plan(cfg, N)
    _say(f"single-state reach plan (delta_R={rp.delta_R:g}, p={rp.p:g}): m = {rp.m}")
    _say(f"  guarantee: {rp.guarantee()}")
    _say("  " + shortcut_note(N, rp.p, rp.delta_R, rp.m))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        doc = {"N": N, "control": cp.to_dict(), "reach": rp.to_dict(), "space": space.to_dict()}
        doc["reach"]["shortcuts"] = small_p_approximations(N, rp.p, rp.delta_R)
        (Path(out) / "plan.json").write_text(dumps(doc))
    return EXIT_OK


def _abort(run: RunDir, exc: est.EstimationAborted, records) -> int:
    run.write_trajectories(records)
    run.finish("invalid", error=str(exc.cause), completed_trajectories=len(exc.partial))
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_FAILURE


def cmd_reach(cfg: CampaignConfig, out, force=False) -> int:
    space = build_space(cfg)
    plan = reach_plan(cfg, space.n_bins)
    system = build_system(cfg)
    policy = build_policy(cfg)
    x0 = resolve_x0(cfg)
    run = RunDir(out, force)
    guarantees = [f"turn {t}: {plan.guarantee()}" for t in range(1, cfg.horizon + 1)]
    run.start("reach", cfg.to_dict(), plan.to_dict(), space.to_dict(), guarantees)
    try:
        e = est.estimate_reachable(
            system, x0, policy, space, plan, cfg.horizon, cfg.seed,
            parallelism=cfg.parallelism, retries=cfg.retries,
        )
    except est.EstimationAborted as exc:
        return _abort(run, exc, [(0, j, tr) for j, tr in enumerate(exc.partial)])
    finally:
        _close(system)
    run.write_trajectories((0, j, tr) for j, tr in enumerate(e.trajectories))
    run.write_json(state_file(0), reach_record(e, 0))
    run.write_json(SETS, sets_record("reach", space, e.bins, guarantees, [state_file(0)]))
    run.finish("ok", retries_used=sum(tr.attempt for tr in e.trajectories))
    for t in range(1, e.horizon + 1):
        _say(f"turn {t}: {len(e.at(t))} of {space.n_bins} bins reached: {sorted(e.at(t))}")
    _say(f"run directory: {run.path}")
    return EXIT_OK


def cmd_control(cfg: CampaignConfig, out, force=False) -> int:
    space = build_space(cfg)
    plan = control_plan(cfg, space.n_bins)
    system = build_system(cfg)
    policy = build_policy(cfg)
    init = build_initial_states(cfg)
    run = RunDir(out, force)
    guarantees = [f"turn {t}: {plan.guarantee()}" for t in range(1, cfg.horizon + 1)]
    run.start("control", cfg.to_dict(), plan.to_dict(), space.to_dict(), guarantees)
    m = plan.m
    try:
        e = est.estimate_controllable(
            system, init, policy, space, plan, cfg.horizon, cfg.seed,
            parallelism=cfg.parallelism, retries=cfg.retries,
        )
    except est.EstimationAborted as exc:
        return _abort(run, exc, [(n // m, n % m, tr) for n, tr in enumerate(exc.partial)])
    finally:
        _close(system)
    run.write_trajectories((i, j, tr) for i, r in enumerate(e.reach) for j, tr in enumerate(r.trajectories))
    files = []
    for i, r in enumerate(e.reach):
        run.write_json(state_file(i), reach_record(r, i))
        files.append(state_file(i))
    run.write_json(SETS, sets_record("control", space, e.bins, guarantees, files))
    retries = sum(tr.attempt for r in e.reach for tr in r.trajectories)
    run.finish("ok", retries_used=retries, initial_states=[_jsonable(x) for x in e.initial_states])
    for t in range(1, e.horizon + 1):
        _say(f"turn {t}: controllable set has {len(e.at(t))} of {space.n_bins} bins: {sorted(e.at(t))}")
    _say(f"run directory: {run.path}")
    return EXIT_OK


def _threshold(cfg: CampaignConfig, nominal: float, reps: int) -> float:
    if "threshold" in cfg.validate:
        return float(cfg.validate["threshold"])
    # nominal confidence minus three binomial standard deviations
    return nominal - 3.0 * math.sqrt(nominal * (1.0 - nominal) / reps)


def cmd_validate(cfg: CampaignConfig, out, force=False) -> int:
    space = build_space(cfg)
    mode = cfg.validate.get("mode", "reach")
    reps = int(cfg.validate.get("repetitions", 200 if mode != "expected" else 100))
    if reps < 1:
        raise ConfigError("validate.repetitions: must be >= 1")
    system = build_system(cfg)
    policy = build_policy(cfg)
    turn = cfg.validate.get("turn")
    common = dict(policy=policy, horizon=cfg.horizon, repetitions=reps, seed=cfg.seed, turn=turn,
                  parallelism=cfg.parallelism)
    if mode == "reach":
        if "m" in cfg.validate:
            # deliberately undersized plans are allowed here to show the bound failing
            plan = ReachPlan(space.n_bins, cfg.knobs.p, cfg.knobs.delta, int(cfg.validate["m"]))
        else:
            plan = reach_plan(cfg, space.n_bins)
        nominal = 1.0 - plan.delta_R
        harness = est.validate_bound
        common.update(x0=resolve_x0(cfg), space=space)
    elif mode == "control":
        plan = control_plan(cfg, space.n_bins)
        init = initial_support(build_initial_states(cfg))
        if init is None:
            raise ConfigError("initial_states: control validation needs a discrete initial-state distribution")
        nominal = 1.0 - plan.delta
        harness = est.validate_control_bound
        common.update(initial=init, space=space)
    elif mode == "expected":
        plan = expected_plan(cfg, space_dim(space))
        nominal = 1.0 - plan.delta
        harness = est.validate_expected_bound
        common.update(x0=resolve_x0(cfg))
    else:
        raise ConfigError(f"validate.mode: expected reach, control or expected, got {mode!r}")
    threshold = _threshold(cfg, nominal, reps)
    run = RunDir(out, force)
    run.start("validate", cfg.to_dict(), plan.to_dict(), space.to_dict(), [plan.guarantee()])
    try:
        result = harness(system, plan, **common)
    except PacReachError as exc:
        run.finish("failed", error=str(exc))
        raise
    passed = result.confidence >= threshold
    doc = result.to_dict()
    doc.update(mode=mode, nominal=nominal, threshold=threshold, passed=passed, compliant=not plan.violations())
    run.write_json("validation.json", doc)
    run.finish("ok")
    _say(
        f"empirical confidence: {result.confidence:.4f} over {reps} repetitions "
        f"(nominal {nominal:.4f}, threshold {threshold:.4f}) -> {'PASS' if passed else 'FAIL'}"
    )
    return EXIT_OK if passed else EXIT_FAILURE


def cmd_test(cfg: CampaignConfig, out, force=False) -> int:
    if not cfg.test or "target" not in cfg.test:
        raise ConfigError("test.target: required (bin list, label list or {lo, hi} region)")
    space = build_space(cfg)
    target = est.target_bins(space, cfg.test["target"])
    plan = reach_plan(cfg, space.n_bins)
    system = build_system(cfg)
    policy = build_policy(cfg)
    x0 = resolve_x0(cfg)
    run = RunDir(out, force)
    guarantees = [f"turn {t}: {plan.guarantee()}" for t in range(1, cfg.horizon + 1)]
    run.start("test", cfg.to_dict(), plan.to_dict(), space.to_dict(), guarantees)
    try:
        e = est.estimate_reachable(
            system, x0, policy, space, plan, cfg.horizon, cfg.seed,
            parallelism=cfg.parallelism, retries=cfg.retries,
        )
    except est.EstimationAborted as exc:
        return _abort(run, exc, [(0, j, tr) for j, tr in enumerate(exc.partial)])
    finally:
        _close(system)
    res = est.test_reachability(target, e, cfg.test.get("turn"))
    note = shortcut_note(space.n_bins, plan.p, plan.delta_R, plan.m)
    run.write_trajectories((0, j, tr) for j, tr in enumerate(e.trajectories))
    run.write_json(state_file(0), reach_record(e, 0))
    run.write_json(SETS, sets_record("reach", space, e.bins, guarantees, [state_file(0)]))
    run.write_json(
        "test.json",
        {
            "decision": res.decision,
            "turn": res.turn,
            "target": sorted(res.target),
            "missing": sorted(res.missing),
            "report": res.report,
            "sample_size_note": note,
        },
    )
    run.write_text("report.txt", res.report + "\n" + note + "\n")
    run.finish("ok", decision=res.decision)
    _say(res.report)
    _say(note)
    return EXIT_REJECT if res.rejected else EXIT_OK


def cmd_expected(cfg: CampaignConfig, out, force=False) -> int:
    space = build_space(cfg)
    plan = expected_plan(cfg, space_dim(space))
    system = build_system(cfg)
    policy = build_policy(cfg)
    run = RunDir(out, force)
    run.start("expected", cfg.to_dict(), plan.to_dict(), space.to_dict(), [plan.guarantee()])
    try:
        e = est.estimate_expected(system, resolve_x0(cfg), policy, plan, cfg.horizon, cfg.seed,
                                  parallelism=cfg.parallelism)
    finally:
        _close(system)
    doc = e.to_dict()
    doc["requests"] = [_jsonable(u) for u in e.requests]
    doc["means"] = [m.tolist() for m in e.means]
    run.write_json("expected.json", doc)
    run.finish("ok")
    for t in range(len(e.lo)):
        _say(f"turn {t + 1}: expected-output interval lo={e.lo[t].tolist()} hi={e.hi[t].tolist()}")
    return EXIT_OK


def cmd_report(run_dir) -> int:
    for p in write_report(run_dir):
        _say(str(p))
    return EXIT_OK


def _close(system):
    close = getattr(system, "close", None)
    if close is not None:
        close()


# ---------------------------------------------------------------------------
# argument parsing

RUN_COMMANDS = {
    "reach": cmd_reach,
    "control": cmd_control,
    "validate": cmd_validate,
    "test": cmd_test,
    "expected": cmd_expected,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="campaign config (JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--parallelism", type=int, help="concurrent rollouts (overrides the config)")
    common.add_argument("--out", metavar="DIR", help="output / run directory")
    common.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    parser = argparse.ArgumentParser(prog="pacreach", description="PAC reachability and controllability campaigns")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="print the sample plan")
    sub.add_parser("reach", parents=[common], help="estimate the reachable set from one initial state")
    sub.add_parser("control", parents=[common], help="estimate the controllable set")
    sub.add_parser("validate", parents=[common], help="check a sample bound against a synthetic oracle")
    sub.add_parser("test", parents=[common], help="test whether a target region is reachable")
    sub.add_parser("expected", parents=[common], help="estimate the expected-output reachable interval")
    rep = sub.add_parser("report", parents=[common], help="write CSV tables for a finished run")
    rep.add_argument("run_dir", nargs="?", help="run directory (defaults to --out)")
    return parser


def _load(args) -> CampaignConfig:
    if not args.config:
        raise ConfigError("--config: required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed: must be >= 0")
        cfg.seed = args.seed
    if args.parallelism is not None:
        if args.parallelism < 1:
            raise ConfigError("--parallelism: must be >= 1")
        cfg.parallelism = args.parallelism
    if args.out is not None:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            run_dir = args.run_dir or args.out
            if not run_dir:
                raise ConfigError("run_dir: required")
            return cmd_report(run_dir)
        cfg = _load(args)
        if args.command == "plan":
            return cmd_plan(cfg, cfg.out)
        out = cfg.out or f"runs/{args.command}"
        return RUN_COMMANDS[args.command](cfg, out, args.force)
    except PacReachError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
