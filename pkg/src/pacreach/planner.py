"""Sample-size planning for reachability and controllability estimates.

All logarithms are natural; the reach and control bounds are ratios of
logarithms so the base cancels.  Real-valued bounds are rounded up only
after evaluation and no planner ever returns zero.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import Infeasible, InvalidParameter, PlanViolation

GRID_LO = 1e-6
GRID_HI = 0.999
GRID_POINTS = 250
EXPECTED_SCAN_CAP = 10**7

# tolerance for rounding a real bound up to an integer
_CEIL_RTOL = 1e-12


def _ceil(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _CEIL_RTOL * max(1.0, abs(x)):
        return max(int(r), 1)
    return max(int(math.ceil(x)), 1)


def _unit(name: str, v: float) -> float:
    if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
        raise InvalidParameter(f"{name} must lie in the open interval (0, 1), got {v!r}")
    return float(v)


def _positive_int(name: str, v) -> int:
    if isinstance(v, bool) or int(v) != v or v < 1:
        raise InvalidParameter(f"{name} must be a positive integer, got {v!r}")
    return int(v)


def reach_sample_size(N: int, p: float, delta_R: float) -> int:
    """Number of i.i.d. rollouts that hit every bin of mass >= p w.p. >= 1 - delta_R."""
    N = _positive_int("N", N)
    p = _unit("p", p)
    delta_R = _unit("delta_R", delta_R)
    return max(N, _ceil(math.log(delta_R / N) / math.log1p(-p)))


def control_sample_size(alpha: float, epsilon: float, delta_C: float) -> int:
    """Number of sampled initial states for the controllable-set bound."""
    alpha = _unit("alpha", alpha)
    epsilon = _unit("epsilon", epsilon)
    delta_C = _unit("delta_C", delta_C)
    return _ceil(math.log(epsilon * delta_C) / math.log1p(-alpha))


def hoeffding_inner_size(R_bound: float, epsilon_mu: float, delta_mu: float) -> int:
    if not R_bound > 0:
        raise InvalidParameter(f"R_bound must be positive, got {R_bound!r}")
    if not epsilon_mu > 0:
        raise InvalidParameter(f"epsilon_mu must be positive, got {epsilon_mu!r}")
    delta_mu = _unit("delta_mu", delta_mu)
    return _ceil(2.0 * R_bound**2 / epsilon_mu**2 * math.log(2.0 / delta_mu))


def da19_interval_size(out_dim: int, epsilon: float, delta: float) -> int:
    """Samples for a bounding interval to contain an epsilon-accurate reachable set."""
    n = _positive_int("out_dim", out_dim)
    epsilon = _unit("epsilon", epsilon)
    delta = _unit("delta", delta)
    return _ceil(2 * n / epsilon * math.log(2 * n / delta))


def expected_confidence(m, out_dim: int, epsilon: float, delta_mu: float):
    """Lower confidence bound for the pushed-out interval of sampled means."""
    m = np.asarray(m, dtype=float)
    n = out_dim
    return (1.0 - delta_mu) ** m * (1.0 - 2 * n * (1.0 - epsilon / (2 * n)) ** m)


def expected_output_sample_size(
    out_dim: int, epsilon: float, delta: float, delta_mu: float, cap: int = EXPECTED_SCAN_CAP
) -> int:
    """Smallest m whose confidence bound reaches 1 - delta, by forward scan.

    The bound is not monotone in m, so this is a plain linear scan in
    chunks.  The scan stops early once ``(1 - delta_mu)**m`` alone drops
    below the target, since the second factor never exceeds one.
    """
    n = _positive_int("out_dim", out_dim)
    epsilon = _unit("epsilon", epsilon)
    delta = _unit("delta", delta)
    delta_mu = _unit("delta_mu", delta_mu)
    target = 1.0 - delta
    chunk = 65536
    start = 1
    while start <= cap:
        ms = np.arange(start, min(start + chunk, cap + 1))
        ok = np.nonzero(expected_confidence(ms, n, epsilon, delta_mu) >= target)[0]
        if ok.size:
            return int(ms[ok[0]])
        if (1.0 - delta_mu) ** ms[-1] < target:
            break
        start += chunk
    raise Infeasible(f"no m <= {cap} satisfies the expected-output bound at 1 - delta = {target}")


@dataclass(frozen=True)
class ReachPlan:
    N: int
    p: float
    delta_R: float
    m: int

    @classmethod
    def auto(cls, N: int, p: float, delta_R: float) -> "ReachPlan":
        return cls(N, p, delta_R, reach_sample_size(N, p, delta_R))

    @property
    def required_m(self) -> int:
        return reach_sample_size(self.N, self.p, self.delta_R)

    def violations(self) -> list:
        out = []
        if self.m < self.N:
            out.append(f"m >= N violated: m={self.m} < N={self.N}")
        req = self.required_m
        if self.m < req:
            out.append(
                f"m >= log(delta_R/N)/log(1-p) violated: m={self.m} < {req} "
                f"(N={self.N}, p={self.p}, delta_R={self.delta_R})"
            )
        return out

    @property
    def is_compliant(self) -> bool:
        return not self.violations()

    def check(self) -> "ReachPlan":
        v = self.violations()
        if v:
            raise PlanViolation("; ".join(v))
        return self

    def guarantee(self) -> str:
        return (
            f"every bin of mass >= {self.p:g} is contained in the estimate at each turn "
            f"with probability >= {1 - self.delta_R:.6g} (m={self.m}, N={self.N})"
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ControlPlan:
    alpha: float
    epsilon: float
    delta: float
    delta_C: float
    delta_R: float
    k: int
    reach: ReachPlan

    @property
    def m(self) -> int:
        return self.reach.m

    @property
    def total_n(self) -> int:
        return self.reach.m * self.k

    @property
    def confidence(self) -> float:
        return (1.0 - self.delta_R) ** self.k * (1.0 - self.delta_C)

    def violations(self) -> list:
        out = list(self.reach.violations())
        if self.reach.delta_R != self.delta_R:
            out.append("reach plan delta_R differs from control plan delta_R")
        req_k = control_sample_size(self.alpha, self.epsilon, self.delta_C)
        if self.k < req_k:
            out.append(
                f"k >= log(epsilon*delta_C)/log(1-alpha) violated: k={self.k} < {req_k}"
            )
        if self.confidence < 1.0 - self.delta:
            out.append(
                f"(1-delta_R)^k (1-delta_C) >= 1-delta violated: "
                f"{self.confidence:.6g} < {1 - self.delta:.6g}"
            )
        return out

    @property
    def is_compliant(self) -> bool:
        return not self.violations()

    def check(self) -> "ControlPlan":
        v = self.violations()
        if v:
            raise PlanViolation("; ".join(v))
        return self

    def guarantee(self) -> str:
        return (
            f"mu(C_hat \\ C_alpha) < {self.epsilon:g} at each turn with probability >= "
            f"(1-delta_C)(1-delta_R)^k = {self.confidence:.6g} >= {1 - self.delta:.6g} "
            f"(alpha={self.alpha:g}, k={self.k}, m={self.m}, n={self.total_n})"
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["m"] = self.m
        d["total_n"] = self.total_n
        d["confidence"] = self.confidence
        return d


def log_grid(points: int = GRID_POINTS, lo: float = GRID_LO, hi: float = GRID_HI) -> np.ndarray:
    return np.geomspace(lo, hi, points)


def auto_split(
    delta: float,
    p: float,
    alpha: float,
    epsilon: float,
    N: int,
    grid_points: int = GRID_POINTS,
    grid_lo: float = GRID_LO,
    grid_hi: float = GRID_HI,
) -> ControlPlan:
    """Pick (delta_C, delta_R) on a log grid minimising the total sample count m*k.

    Ties go to the smaller k, then the smaller delta_R grid index, then the
    smaller delta_C grid index.
    """
    delta = _unit("delta", delta)
    p = _unit("p", p)
    alpha = _unit("alpha", alpha)
    epsilon = _unit("epsilon", epsilon)
    N = _positive_int("N", N)
    grid = log_grid(grid_points, grid_lo, grid_hi)

    # m depends only on delta_R, k only on delta_C
    ms = np.array([reach_sample_size(N, p, float(d)) for d in grid], dtype=np.int64)
    ks = np.array([control_sample_size(alpha, epsilon, float(d)) for d in grid], dtype=np.int64)
    K = ks[:, None]  # rows: delta_C
    conf = (1.0 - grid[None, :]) ** K * (1.0 - grid[:, None])
    feasible = conf >= 1.0 - delta
    if not feasible.any():
        raise Infeasible(
            f"no (delta_C, delta_R) pair on the {grid_points}-point grid reaches confidence {1 - delta:g}"
        )
    total = np.where(feasible, K * ms[None, :], np.iinfo(np.int64).max)
    ic, ir = np.nonzero(total == total.min())
    order = np.lexsort((ic, ir, ks[ic]))
    ic, ir = int(ic[order[0]]), int(ir[order[0]])
    dC, dR = float(grid[ic]), float(grid[ir])
    reach = ReachPlan(N, p, dR, int(ms[ir]))
    return ControlPlan(alpha, epsilon, delta, dC, dR, int(ks[ic]), reach)


@dataclass(frozen=True)
class ExpectedPlan:
    out_dim: int
    epsilon: float
    delta: float
    delta_mu: float
    epsilon_mu: float
    R_bound: float
    m: int
    inner_N: int

    @classmethod
    def auto(cls, out_dim, epsilon, delta, delta_mu, epsilon_mu, R_bound=1.0, cap=EXPECTED_SCAN_CAP):
        m = expected_output_sample_size(out_dim, epsilon, delta, delta_mu, cap)
        inner = hoeffding_inner_size(R_bound, epsilon_mu, delta_mu)
        return cls(out_dim, epsilon, delta, delta_mu, epsilon_mu, R_bound, m, inner)

    @property
    def confidence(self) -> float:
        return float(expected_confidence(self.m, self.out_dim, self.epsilon, self.delta_mu))

    def violations(self) -> list:
        out = []
        if self.confidence < 1 - self.delta:
            out.append(f"expected-output confidence {self.confidence:.6g} < {1 - self.delta:.6g}")
        req = hoeffding_inner_size(self.R_bound, self.epsilon_mu, self.delta_mu)
        if self.inner_N < req:
            out.append(f"inner_N >= (2R^2/eps_mu^2) log(2/delta_mu) violated: {self.inner_N} < {req}")
        return out

    def check(self) -> "ExpectedPlan":
        v = self.violations()
        if v:
            raise PlanViolation("; ".join(v))
        return self

    def guarantee(self) -> str:
        return (
            f"interval contains an {self.epsilon:g}-accurate reachable set of the expected output "
            f"with probability >= {self.confidence:.6g} (m={self.m}, inner_N={self.inner_N}, "
            f"eps_mu={self.epsilon_mu:g})"
        )

    def to_dict(self) -> dict:
        return asdict(self)


def small_p_approximations(N: int, p: float, delta_R: float) -> dict:
    """Common shortcuts for the reach bound that replace log(1-p) by -p."""
    return {
        "ln_small_p": math.log(N / delta_R) / p,
        "log10_small_p": math.log10(N / delta_R) / p,
    }
