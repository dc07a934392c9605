"""Monte Carlo reachable, controllable and expected-output set estimators.

Every estimator derives one seed per trajectory from the master seed and
the trajectory's index path, then orders results by index before building
sets.  Output therefore does not depend on how rollouts are scheduled
across worker threads.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import (
    BackendFailure,
    OracleUnavailable,
    PacReachError,
    ReadoutError,
    SpaceMismatch,
)
from .planner import ControlPlan, ExpectedPlan, ReachPlan
from .space import BallCover, BoxSpace, MeasurementSpace, ball_cover
from .systems import (
    CategoricalTable,
    ClippedGaussianMixture,
    DeterministicAffine,
    FeedbackConvergent,
    Discrete,
    InputPolicy,
    SyntheticSystem,
    Trajectory,
    derive_seed,
    make_rng,
    mu_of,
    p_approximate_bins,
    rollout,
    true_alpha_controllable_set,
    true_mu,
)

# seed-path tags keep the streams of different estimator stages disjoint
_INIT_STREAM = 0
_STATE_STREAM = 1


class EstimationAborted(PacReachError):
    """A rollout failed; ``partial`` holds the trajectories finished so far."""

    def __init__(self, cause: Exception, partial: list):
        super().__init__(f"estimation aborted: {cause}")
        self.cause = cause
        self.partial = partial


class _Serialized:
    """Lock-guarded proxy for systems that are not thread-safe."""

    thread_safe = True

    def __init__(self, system):
        self._system = system
        self._lock = threading.Lock()
        self.deterministic = getattr(system, "deterministic", False)

    def step(self, states, inputs, rng):
        with self._lock:
            return self._system.step(states, inputs, rng)

    def readout(self, state):
        with self._lock:
            return self._system.readout(state)


def _guarded(system, parallelism):
    if parallelism > 1 and not getattr(system, "thread_safe", False):
        return _Serialized(system)
    return system


def _one(system, x0, policy, horizon, seed_path, master, retries):
    last = None
    for attempt in range(retries + 1):
        seed = derive_seed(master, *seed_path, attempt) if attempt else derive_seed(master, *seed_path)
        try:
            tr = rollout(system, x0, policy, horizon, seed)
            tr.attempt = attempt
            return tr
        except (BackendFailure, ReadoutError) as exc:
            last = exc
    raise last


def run_rollouts(system, jobs: Sequence, policy, horizon, master, parallelism=1, retries=0) -> list:
    """Run ``jobs`` = [(x0, seed_path), ...]; results keep job order."""
    system = _guarded(system, parallelism)
    done: list = []
    if parallelism <= 1:
        for x0, path in jobs:
            try:
                done.append(_one(system, x0, policy, horizon, path, master, retries))
            except (BackendFailure, ReadoutError) as exc:
                raise EstimationAborted(exc, done) from exc
        return done
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(_one, system, x0, policy, horizon, path, master, retries) for x0, path in jobs]
        results = []
        for f in futures:
            try:
                results.append(f.result())
            except (BackendFailure, ReadoutError) as exc:
                for g in futures:
                    g.cancel()
                partial = [g.result() for g in futures if g.done() and not g.cancelled() and g.exception() is None]
                raise EstimationAborted(exc, partial) from exc
        return results


# ---------------------------------------------------------------------------
# reachability


@dataclass
class ReachEstimate:
    space: MeasurementSpace
    plan: ReachPlan
    x0: Any
    bins: list  # frozenset of bin indices per turn 1..T
    samples: list  # measurements per turn
    trajectories: list = field(repr=False, default_factory=list)
    seed: Optional[int] = None

    @property
    def horizon(self) -> int:
        return len(self.bins)

    def at(self, turn: int) -> frozenset:
        return self.bins[turn - 1]

    def ball_cover(self, turn: int) -> BallCover:
        if not isinstance(self.space, BoxSpace):
            raise SpaceMismatch("ball covers are only defined for box spaces")
        return ball_cover(self.samples[turn - 1], self.space.gamma)

    def guarantees(self) -> list:
        return [f"turn {t}: {self.plan.guarantee()}" for t in range(1, self.horizon + 1)]

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "compliant": self.plan.is_compliant,
            "seed": self.seed,
            "turns": [
                {"turn": t + 1, "bins": sorted(b), "n_samples": len(s)}
                for t, (b, s) in enumerate(zip(self.bins, self.samples))
            ],
            "guarantees": self.guarantees(),
        }


def _reach_from_trajectories(space, plan, x0, trajectories, seed) -> ReachEstimate:
    horizon = trajectories[0].horizon if trajectories else 0
    samples = [[tr.measurements[t] for tr in trajectories] for t in range(horizon)]
    bins = [frozenset(space.bin_of(y) for y in col) for col in samples]
    return ReachEstimate(space, plan, x0, bins, samples, trajectories, seed)


def estimate_reachable(
    system,
    x0,
    policy: InputPolicy,
    space: MeasurementSpace,
    plan: ReachPlan,
    horizon: int,
    seed: int,
    *,
    parallelism: int = 1,
    retries: int = 0,
    strict: bool = True,
) -> ReachEstimate:
    """Sample ``plan.m`` trajectories from ``x0`` and bin the measurements per turn."""
    if plan.N != space.n_bins:
        raise SpaceMismatch(f"plan was made for N={plan.N} bins, space has {space.n_bins}")
    if strict:
        plan.check()
    jobs = [(x0, (i,)) for i in range(plan.m)]
    trajs = run_rollouts(system, jobs, policy, horizon, seed, parallelism, retries)
    return _reach_from_trajectories(space, plan, x0, trajs, seed)


# ---------------------------------------------------------------------------
# controllability


@dataclass
class ControlEstimate:
    space: MeasurementSpace
    plan: ControlPlan
    initial_states: list
    reach: list  # ReachEstimate per sampled initial state
    bins: list  # intersection per turn
    seed: Optional[int] = None

    @property
    def horizon(self) -> int:
        return len(self.bins)

    def at(self, turn: int) -> frozenset:
        return self.bins[turn - 1]

    def running_intersections(self, turn: int) -> list:
        """Intersection after 1, 2, ..., k initial states."""
        out = []
        cur = None
        for r in self.reach:
            cur = r.at(turn) if cur is None else cur & r.at(turn)
            out.append(cur)
        return out

    def guarantees(self) -> list:
        return [f"turn {t}: {self.plan.guarantee()}" for t in range(1, self.horizon + 1)]

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "compliant": self.plan.is_compliant,
            "seed": self.seed,
            "k": len(self.reach),
            "turns": [{"turn": t + 1, "bins": sorted(b)} for t, b in enumerate(self.bins)],
            "guarantees": self.guarantees(),
        }


def sample_initial_states(init_sampler, k: int, seed: int) -> list:
    rng = make_rng(derive_seed(seed, _INIT_STREAM))
    return [init_sampler.sample(rng) for _ in range(k)]


def estimate_controllable(
    system,
    init_sampler,
    policy: InputPolicy,
    space: MeasurementSpace,
    plan: ControlPlan,
    horizon: int,
    seed: int,
    *,
    parallelism: int = 1,
    retries: int = 0,
    strict: bool = True,
) -> ControlEstimate:
    """Intersect per-state reachable sets of ``plan.k`` sampled initial states."""
    if plan.reach.N != space.n_bins:
        raise SpaceMismatch(f"plan was made for N={plan.reach.N} bins, space has {space.n_bins}")
    if strict:
        plan.check()
    states = sample_initial_states(init_sampler, plan.k, seed)
    m = plan.m
    jobs = [(x0, (_STATE_STREAM, i, j)) for i, x0 in enumerate(states) for j in range(m)]
    trajs = run_rollouts(system, jobs, policy, horizon, seed, parallelism, retries)
    reach = [
        _reach_from_trajectories(space, plan.reach, x0, trajs[i * m : (i + 1) * m], seed)
        for i, x0 in enumerate(states)
    ]
    bins = [frozenset.intersection(*(r.at(t) for r in reach)) for t in range(1, horizon + 1)]
    return ControlEstimate(space, plan, states, reach, bins, seed)


# ---------------------------------------------------------------------------
# expected output


@dataclass
class ExpectedEstimate:
    plan: ExpectedPlan
    lo: list  # per-turn lower corner, pushed out by epsilon_mu
    hi: list
    means: list  # per-turn array (m, d) of sampled means
    requests: list  # u_0 used for each outer sample
    seed: Optional[int] = None

    def interval(self, turn: int) -> tuple:
        return self.lo[turn - 1], self.hi[turn - 1]

    def contains(self, point, turn: int) -> bool:
        lo, hi = self.interval(turn)
        q = np.atleast_1d(np.asarray(point, dtype=float))
        return bool(np.all(lo <= q) and np.all(q <= hi))

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "seed": self.seed,
            "turns": [
                {"turn": t + 1, "lo": self.lo[t].tolist(), "hi": self.hi[t].tolist()}
                for t in range(len(self.lo))
            ],
            "guarantee": self.plan.guarantee(),
        }


def interval_of_means(means: np.ndarray, epsilon_mu: float) -> tuple:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    return means.min(axis=0) - epsilon_mu, means.max(axis=0) + epsilon_mu


def _outer_sample(system, x0, policy, horizon, inner_N, seed):
    rng = make_rng(seed)
    u0 = policy.first(rng)
    acc = None
    for _ in range(inner_N):
        tr = rollout(system, x0, policy, horizon, rng=rng, u0=u0)
        ys = np.array([np.atleast_1d(np.asarray(y, dtype=float)) for y in tr.measurements])
        acc = ys if acc is None else acc + ys
    return u0, acc / inner_N


def estimate_expected(
    system,
    x0,
    policy: InputPolicy,
    plan: ExpectedPlan,
    horizon: int,
    seed: int,
    *,
    parallelism: int = 1,
) -> ExpectedEstimate:
    """Bounding interval of ``plan.m`` sampled mean outputs, pushed out by epsilon_mu.

    Each outer sample draws one request u_0 and averages ``plan.inner_N``
    rollouts that share it, all from a single per-sample stream.
    """
    system = _guarded(system, parallelism)
    seeds = [derive_seed(seed, j) for j in range(plan.m)]
    if parallelism <= 1:
        outs = [_outer_sample(system, x0, policy, horizon, plan.inner_N, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outs = list(pool.map(lambda s: _outer_sample(system, x0, policy, horizon, plan.inner_N, s), seeds))
    requests = [u for u, _ in outs]
    stacked = np.stack([m for _, m in outs])  # (m, T, d)
    lo, hi, means = [], [], []
    for t in range(horizon):
        a, b = interval_of_means(stacked[:, t, :], plan.epsilon_mu)
        lo.append(a)
        hi.append(b)
        means.append(stacked[:, t, :])
    return ExpectedEstimate(plan, lo, hi, means, requests, seed)


# ---------------------------------------------------------------------------
# hypothesis testing


REJECT = "Reject"
FAIL_TO_REJECT = "FailToReject"


@dataclass(frozen=True)
class TestResult:
    decision: str
    turn: int
    target: frozenset
    missing: frozenset
    report: str

    __test__ = False  # keep pytest from collecting this class

    @property
    def rejected(self) -> bool:
        return self.decision == REJECT


def target_bins(space: MeasurementSpace, target) -> frozenset:
    """Normalise a target (bin set, label set or ``{"lo", "hi"}`` region) to bins."""
    if isinstance(target, dict):
        if not isinstance(space, BoxSpace):
            raise SpaceMismatch("region targets need a box space")
        return space.bins_in_region(target["lo"], target["hi"])
    bins = set()
    for b in target:
        if isinstance(b, str):
            bins.add(space.bin_of(b))
        elif isinstance(b, (int, np.integer)) and 0 <= b < space.n_bins:
            bins.add(int(b))
        else:
            raise SpaceMismatch(f"{b!r} is not a bin of this space (N={space.n_bins})")
    return frozenset(bins)


def test_reachability(target, estimate: ReachEstimate, turn: Optional[int] = None) -> TestResult:
    """Test the null hypothesis that ``target`` is reachable at ``turn``.

    Reject when some target bin was never observed: with probability at least
    1 - delta_R every bin of mass >= p has been observed, so the missing bins
    are unreachable (at precision p) at that cutoff.
    """
    turn = estimate.horizon if turn is None else turn
    space = estimate.space
    tgt = target_bins(space, target)
    observed = estimate.at(turn)
    missing = tgt - observed
    plan = estimate.plan
    within = f" within gamma={space.gamma:g}" if isinstance(space, BoxSpace) else ""
    if missing:
        report = (
            f"{REJECT}: target not reachable{within} at cutoff delta={plan.delta_R:g} "
            f"(turn {turn}, p={plan.p:g}, m={plan.m}); "
            f"{len(missing)} of {len(tgt)} target bins never observed: "
            + ", ".join(space.describe_bin(b) for b in sorted(missing))
        )
        return TestResult(REJECT, turn, tgt, frozenset(missing), report)
    report = (
        f"{FAIL_TO_REJECT}: no evidence of unreachability at cutoff delta={plan.delta_R:g} "
        f"(turn {turn}, p={plan.p:g}, m={plan.m}); all {len(tgt)} target bins were observed"
        + (f", so each is reached{within}" if tgt else "")
    )
    return TestResult(FAIL_TO_REJECT, turn, tgt, frozenset(), report)


# keep pytest from collecting the public function above as a test
test_reachability.__test__ = False


# ---------------------------------------------------------------------------
# validation harnesses against analytic oracles


@dataclass(frozen=True)
class BoundValidation:
    confidence: float  # headline: fraction of runs covering the true set at `turn`
    turn: int
    per_turn: tuple  # coverage fraction at every turn
    repetitions: int
    true_bins: tuple  # true p-approximate bin set per turn

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "turn": self.turn,
            "per_turn": list(self.per_turn),
            "repetitions": self.repetitions,
            "true_bins": [sorted(b) for b in self.true_bins],
        }


def _oracle_system(system):
    if isinstance(system, (CategoricalTable, ClippedGaussianMixture, DeterministicAffine, FeedbackConvergent)):
        system = SyntheticSystem(system)
    if not isinstance(system, SyntheticSystem):
        raise OracleUnavailable("bound validation needs a synthetic system with analytic bin masses")
    return system


def validate_bound(
    system: SyntheticSystem,
    plan: ReachPlan,
    *,
    x0,
    policy: InputPolicy,
    space: MeasurementSpace,
    horizon: int = 1,
    repetitions: int = 200,
    seed: int = 0,
    turn: Optional[int] = None,
    parallelism: int = 1,
) -> BoundValidation:
    """Fraction of independent reach estimates that contain the true p-approximate set."""
    system = _oracle_system(system)
    turn = horizon if turn is None else turn
    truth = tuple(
        p_approximate_bins(system.bin_masses(space, x0, t, policy.initial), plan.p)
        for t in range(1, horizon + 1)
    )
    hits = np.zeros(horizon)
    for r in range(repetitions):
        est = estimate_reachable(
            system, x0, policy, space, plan, horizon, derive_seed(seed, r), parallelism=parallelism, strict=False
        )
        for t in range(horizon):
            hits[t] += truth[t] <= est.bins[t]
    per_turn = tuple(float(h / repetitions) for h in hits)
    return BoundValidation(per_turn[turn - 1], turn, per_turn, repetitions, truth)


@dataclass(frozen=True)
class ControlValidation:
    confidence: float  # fraction of runs with mu(C_hat \ C_alpha) < epsilon at `turn`
    turn: int
    repetitions: int
    alpha_set: frozenset
    mu: tuple
    superset_rate: float  # fraction of runs with C_alpha subset of C_hat
    errors: tuple  # mu(C_hat \ C_alpha) per run

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "turn": self.turn,
            "repetitions": self.repetitions,
            "alpha_set": sorted(self.alpha_set),
            "mu": list(self.mu),
            "superset_rate": self.superset_rate,
        }


def validate_control_bound(
    system: SyntheticSystem,
    plan: ControlPlan,
    *,
    initial: Discrete,
    policy: InputPolicy,
    space: MeasurementSpace,
    horizon: int = 1,
    repetitions: int = 200,
    seed: int = 0,
    turn: Optional[int] = None,
    parallelism: int = 1,
) -> ControlValidation:
    """Fraction of independent controllable-set estimates whose false-positive mu-mass is < epsilon."""
    system = _oracle_system(system)
    turn = horizon if turn is None else turn
    mu = true_mu(system, space, initial, turn, plan.reach.p, policy.initial)
    c_alpha = true_alpha_controllable_set(mu, plan.alpha)
    ok = 0
    superset = 0
    errs = []
    for r in range(repetitions):
        est = estimate_controllable(
            system, initial, policy, space, plan, horizon, derive_seed(seed, r), parallelism=parallelism, strict=False
        )
        c_hat = est.at(turn)
        err = mu_of(mu, c_hat - c_alpha)
        errs.append(err)
        ok += err < plan.epsilon
        superset += c_alpha <= c_hat
    return ControlValidation(
        ok / repetitions, turn, repetitions, c_alpha, tuple(float(v) for v in mu), superset / repetitions, tuple(errs)
    )


@dataclass(frozen=True)
class ExpectedValidation:
    confidence: float  # fraction of runs whose interval holds every analytic mean
    turn: int
    repetitions: int
    true_means: tuple

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "turn": self.turn,
            "repetitions": self.repetitions,
            "true_means": [list(m) for m in self.true_means],
        }


def validate_expected_bound(
    system: SyntheticSystem,
    plan: ExpectedPlan,
    *,
    x0,
    policy: InputPolicy,
    horizon: int = 1,
    repetitions: int = 100,
    seed: int = 0,
    turn: Optional[int] = None,
    parallelism: int = 1,
) -> ExpectedValidation:
    """Fraction of runs whose pushed-out interval contains the mean output of every request value.

    Needs a discrete request distribution so the set of true means is finite.
    """
    system = _oracle_system(system)
    turn = horizon if turn is None else turn
    if not isinstance(policy.initial, Discrete):
        raise OracleUnavailable("expected-output validation needs a discrete request distribution")
    truth = tuple(system.mean_output(x0, u) for u in policy.initial.values)
    hits = 0
    for r in range(repetitions):
        est = estimate_expected(system, x0, policy, plan, horizon, derive_seed(seed, r), parallelism=parallelism)
        hits += all(est.contains(m, turn) for m in truth)
    return ExpectedValidation(hits / repetitions, turn, repetitions, truth)
