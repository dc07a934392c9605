"""Opaque control systems, input policies, rollouts and synthetic ground truth.

A system is anything with ``step(states, inputs, rng)`` returning the next
state and ``readout(state)`` returning a measurement.  ``states`` holds
x_0..x_{t-1} and ``inputs`` holds u_0..u_{t-1} when x_t is produced, so
systems may depend on the full dialogue history.

Synthetic systems additionally expose analytic bin masses so that sample
bounds can be checked against ground truth.
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence, Union

import numpy as np
from scipy.stats import norm

from .errors import InvalidSpec, OracleUnavailable, ReadoutError, BackendFailure
from .space import BoxSpace, CategoricalSpace, MeasurementSpace

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Mix a path of indices into a master seed; independent of call order."""
    h = splitmix64(master & _MASK64)
    for i in path:
        h = splitmix64(h ^ splitmix64(i & _MASK64))
    return h


class CounterStream(random.Random):
    """Counter-based stream: the n-th draw is splitmix64(seed + n * golden).

    Construction is O(1), unlike Mersenne Twister seeding, which matters
    when every trajectory gets its own stream.  All ``random.Random``
    helpers (gauss, choice, shuffle, ...) work on top of it.
    """

    def seed(self, a=None, version=2):
        self._state = (a or 0) & _MASK64
        self.gauss_next = None

    def _next64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self._next64() >> 11) * (1.0 / 9007199254740992.0)

    def getrandbits(self, k: int) -> int:
        out = 0
        for shift in range(0, k, 64):
            out |= self._next64() << shift
        return out & ((1 << k) - 1)

    def getstate(self):
        return (self._state, self.gauss_next)

    def setstate(self, state):
        self._state, self.gauss_next = state


def make_rng(seed: int) -> random.Random:
    return CounterStream(seed)


class System(Protocol):
    deterministic: bool
    thread_safe: bool

    def step(self, states: Sequence, inputs: Sequence, rng: random.Random) -> Any: ...

    def readout(self, state) -> Any: ...


# ---------------------------------------------------------------------------
# distributions over inputs and initial states


@dataclass(frozen=True)
class Constant:
    value: Any

    def sample(self, rng):
        return self.value

    def to_dict(self):
        return {"kind": "constant", "value": _jsonable(self.value)}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise InvalidSpec(f"uniform needs lo <= hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng):
        return self.lo + (self.hi - self.lo) * rng.random()

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Discrete:
    values: tuple
    weights: Optional[tuple] = None

    def __post_init__(self):
        values = tuple(self.values)
        if not values:
            raise InvalidSpec("discrete distribution needs at least one value")
        w = self.weights
        w = tuple(1.0 / len(values) for _ in values) if w is None else tuple(float(x) for x in w)
        if len(w) != len(values) or any(x < 0 for x in w):
            raise InvalidSpec("discrete weights must be non-negative and match values")
        if not math.isclose(sum(w), 1.0, abs_tol=1e-9):
            raise InvalidSpec(f"discrete weights must sum to 1, got {sum(w)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_cum", tuple(np.cumsum(w)))

    def sample(self, rng):
        i = bisect.bisect_right(self._cum, rng.random() * self._cum[-1])
        return self.values[min(i, len(self.values) - 1)]

    def to_dict(self):
        return {"kind": "discrete", "values": [_jsonable(v) for v in self.values], "weights": list(self.weights)}


@dataclass(frozen=True)
class Mixture:
    components: tuple  # of (weight, distribution)

    def __post_init__(self):
        comps = tuple((float(w), d) for w, d in self.components)
        if not comps or not math.isclose(sum(w for w, _ in comps), 1.0, abs_tol=1e-9):
            raise InvalidSpec("mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "_picker", Discrete(tuple(range(len(comps))), tuple(w for w, _ in comps)))

    def sample(self, rng):
        return self.components[self._picker.sample(rng)][1].sample(rng)

    def to_dict(self):
        return {"kind": "mixture", "components": [{"weight": w, "dist": d.to_dict()} for w, d in self.components]}


Distribution = Union[Constant, Uniform, Discrete, Mixture]


def dist_from_dict(d) -> Distribution:
    if not isinstance(d, Mapping):
        return Constant(d)
    kind = d.get("kind")
    if kind == "constant":
        return Constant(_hashable(d["value"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "discrete":
        w = d.get("weights")
        return Discrete(tuple(_hashable(v) for v in d["values"]), None if w is None else tuple(w))
    if kind == "mixture":
        return Mixture(tuple((c["weight"], dist_from_dict(c["dist"])) for c in d["components"]))
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def _hashable(v):
    return tuple(_hashable(x) for x in v) if isinstance(v, list) else v


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# ---------------------------------------------------------------------------
# input policies


FeedbackRule = Callable[[Any, Any, int], Any]


def hold_input(u0, last_y, t):
    """Feedback rule that repeats the initial request every turn."""
    return u0


@dataclass(frozen=True)
class InputPolicy:
    """Draws u_0 from ``initial``; later inputs come from ``feedback``.

    ``feedback(u0, last_y, t)`` returns u_t from the most recent measurement
    y_t.  With ``feedback=None`` every u_t is drawn afresh from ``initial``.
    """

    initial: Distribution
    feedback: Optional[FeedbackRule] = None

    def first(self, rng):
        return self.initial.sample(rng)

    def next(self, u0, last_y, t: int, rng):
        if self.feedback is None:
            return self.initial.sample(rng)
        return self.feedback(u0, last_y, t)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    x0: Any
    inputs: list
    states: list
    measurements: list
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    attempt: int = 0  # > 0 when produced by a retry with a fresh seed

    @property
    def horizon(self) -> int:
        return len(self.states)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "status": self.status,
            "x0": _jsonable(self.x0),
            "inputs": [_jsonable(u) for u in self.inputs],
            "states": [_jsonable(x) for x in self.states],
            "measurements": [_jsonable(y) for y in self.measurements],
        }
        if self.error is not None:
            d["error"] = self.error
        if self.attempt:
            d["attempt"] = self.attempt
        return d


def rollout(
    system: System,
    x0,
    policy: InputPolicy,
    horizon: int,
    seed: Optional[int] = None,
    *,
    rng: Optional[random.Random] = None,
    u0=None,
) -> Trajectory:
    """Integrate the system for ``horizon`` turns.

    Either ``seed`` or an explicit ``rng`` stream must be given.  Passing
    ``u0`` pins the initial request instead of drawing it from the policy.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if rng is None:
        if seed is None:
            raise ValueError("rollout needs a seed or an rng")
        rng = make_rng(seed)
    u = policy.first(rng) if u0 is None else u0
    states = [x0]
    inputs = [u]
    ys = []
    for t in range(1, horizon + 1):
        try:
            x = system.step(states, inputs, rng)
        except BackendFailure as exc:
            if exc.turn is None:
                exc.turn = t
            raise
        try:
            y = system.readout(x)
        except ReadoutError as exc:
            if exc.turn is None:
                exc.turn = t
            raise
        states.append(x)
        ys.append(y)
        if t < horizon:
            inputs.append(policy.next(u, y, t, rng))
    return Trajectory(x0, inputs, states[1:], ys, seed if seed is not None else -1)


# ---------------------------------------------------------------------------
# synthetic systems with analytic oracles


def _per_state(value, x0, name):
    if isinstance(value, Mapping):
        key = x0 if x0 in value else str(x0)
        if key not in value:
            raise InvalidSpec(f"{name} has no entry for initial state {x0!r}")
        return value[key]
    return value


def _shift_vector(u, dim):
    if isinstance(u, (tuple, list)):
        if len(u) != dim:
            raise InvalidSpec(f"input of dimension {len(u)} cannot shift a {dim}-d mixture")
        return tuple(float(v) for v in u)
    return (float(u),) * dim


def _clip(v, lo, hi):
    return min(max(v, lo), hi)


def _edges(space: BoxSpace, axis: int) -> np.ndarray:
    c = space.cells[axis]
    e = space.lo[axis] + space.gamma * np.arange(c + 1, dtype=float)
    e[-1] = space.hi[axis]
    return e


def _interval_masses(space: BoxSpace, a: float, b: float) -> np.ndarray:
    """Bin masses of Uniform[a, b] clipped into a 1-d box."""
    edges = _edges(space, 0)
    lo, hi = space.lo[0], space.hi[0]
    out = np.zeros(space.cells[0])
    if b - a <= 0:
        out[space.bin_of(_clip(a, lo, hi))] = 1.0
        return out
    lower = edges[:-1].copy()
    upper = edges[1:].copy()
    lower[0] = -np.inf
    upper[-1] = np.inf
    overlap = np.clip(np.minimum(upper, b) - np.maximum(lower, a), 0.0, None)
    return overlap / (b - a)


def _affine_masses(space: BoxSpace, A: float, B: float, dist: Distribution) -> np.ndarray:
    """Bin masses of clip(A*u + B) for u ~ dist on a 1-d box."""
    lo, hi = space.lo[0], space.hi[0]
    if isinstance(dist, Constant):
        out = np.zeros(space.n_bins)
        out[space.bin_of(_clip(A * float(dist.value) + B, lo, hi))] = 1.0
        return out
    if isinstance(dist, Discrete):
        out = np.zeros(space.n_bins)
        for v, w in zip(dist.values, dist.weights):
            out[space.bin_of(_clip(A * float(v) + B, lo, hi))] += w
        return out
    if isinstance(dist, Uniform):
        a, b = sorted((A * dist.lo + B, A * dist.hi + B))
        return _interval_masses(space, a, b)
    if isinstance(dist, Mixture):
        return sum(w * _affine_masses(space, A, B, d) for w, d in dist.components)
    raise OracleUnavailable(f"no analytic pushforward for {type(dist).__name__}")


def _require_1d_box(space, name):
    if not isinstance(space, BoxSpace) or space.dim != 1:
        raise InvalidSpec(f"{name} is defined on 1-d boxes only")


@dataclass(frozen=True)
class CategoricalTable:
    """Each initial state draws labels i.i.d. from its own pmf, ignoring inputs.

    ``pmfs[x0]`` is either one ``{label: prob}`` mapping used at every turn
    or a list with one mapping per turn (the last repeats past its end).
    """

    labels: tuple
    pmfs: Mapping

    kind = "categorical_table"

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        for x0, pmf in self.pmfs.items():
            for table in pmf if isinstance(pmf, (list, tuple)) else [pmf]:
                if not math.isclose(sum(table.values()), 1.0, abs_tol=1e-9):
                    raise InvalidSpec(f"pmf for {x0!r} does not sum to 1")
                if any(v < 0 for v in table.values()):
                    raise InvalidSpec(f"pmf for {x0!r} has negative mass")
                unknown = set(table) - set(self.labels)
                if unknown:
                    raise InvalidSpec(f"pmf for {x0!r} uses unknown labels {sorted(unknown)}")

    def space(self, gamma=None) -> CategoricalSpace:
        return CategoricalSpace(self.labels)

    def to_dict(self):
        return {"type": self.kind, "labels": list(self.labels), "pmfs": dict(self.pmfs)}


@dataclass(frozen=True)
class ClippedGaussianMixture:
    """I.i.d. draws from a per-state diagonal Gaussian mixture, clipped to the box.

    ``components[x0]`` is a list of ``(weight, mean, std)`` with vector
    ``mean``/``std``.  With ``input_shift`` the request u_0 is added to every
    component mean.
    """

    lo: tuple
    hi: tuple
    components: Mapping
    input_shift: bool = False

    kind = "gaussian_mixture"

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(np.atleast_1d(self.lo).astype(float)))
        object.__setattr__(self, "hi", tuple(np.atleast_1d(self.hi).astype(float)))
        comps = {}
        for x0, cs in self.components.items():
            norm_cs = []
            for w, mu, sd in cs:
                mu = tuple(np.atleast_1d(mu).astype(float))
                sd = tuple(np.atleast_1d(sd).astype(float))
                if len(mu) != len(self.lo) or len(sd) != len(self.lo):
                    raise InvalidSpec(f"component of {x0!r} has wrong dimension")
                if any(s < 0 for s in sd):
                    raise InvalidSpec("negative standard deviation")
                norm_cs.append((float(w), mu, sd))
            if not math.isclose(sum(w for w, _, _ in norm_cs), 1.0, abs_tol=1e-9):
                raise InvalidSpec(f"mixture weights for {x0!r} do not sum to 1")
            comps[x0] = tuple(norm_cs)
        object.__setattr__(self, "components", comps)

    def space(self, gamma: float) -> BoxSpace:
        return BoxSpace(self.lo, self.hi, gamma)

    def to_dict(self):
        return {
            "type": self.kind,
            "lo": list(self.lo),
            "hi": list(self.hi),
            "components": {str(k): [[w, list(m), list(s)] for w, m, s in v] for k, v in self.components.items()},
            "input_shift": self.input_shift,
        }


@dataclass(frozen=True)
class DeterministicAffine:
    """y_t = clip(a * u_0 + b(x_0)) at every turn, on a 1-d box."""

    lo: float
    hi: float
    a: float = 1.0
    b: Any = 0.0  # float, or mapping x0 -> offset

    kind = "affine"

    def space(self, gamma: float) -> BoxSpace:
        return BoxSpace((self.lo,), (self.hi,), gamma)

    def to_dict(self):
        return {"type": self.kind, "lo": self.lo, "hi": self.hi, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class FeedbackConvergent:
    """y_t = y_{t-1} + rate * (u_0 - y_{t-1}) + noise * N(0, 1), clipped; y_0 = x_0."""

    lo: float
    hi: float
    rate: Any = 0.5  # float, or mapping x0 -> rate
    noise: Any = 0.0

    kind = "feedback"

    def space(self, gamma: float) -> BoxSpace:
        return BoxSpace((self.lo,), (self.hi,), gamma)

    def to_dict(self):
        return {"type": self.kind, "lo": self.lo, "hi": self.hi, "rate": self.rate, "noise": self.noise}


SyntheticSpec = Union[CategoricalTable, ClippedGaussianMixture, DeterministicAffine, FeedbackConvergent]


def spec_from_dict(d: Mapping) -> SyntheticSpec:
    t = d.get("type")
    try:
        if t == "categorical_table":
            return CategoricalTable(tuple(d["labels"]), dict(d["pmfs"]))
        if t == "gaussian_mixture":
            comps = {k: [tuple(c) for c in v] for k, v in d["components"].items()}
            return ClippedGaussianMixture(tuple(d["lo"]), tuple(d["hi"]), comps, bool(d.get("input_shift", False)))
        if t == "affine":
            return DeterministicAffine(float(d["lo"]), float(d["hi"]), float(d.get("a", 1.0)), d.get("b", 0.0))
        if t == "feedback":
            return FeedbackConvergent(float(d["lo"]), float(d["hi"]), d.get("rate", 0.5), d.get("noise", 0.0))
    except (KeyError, TypeError) as exc:
        raise InvalidSpec(f"malformed synthetic spec {t!r}: {exc}") from None
    raise InvalidSpec(f"unknown synthetic system type {t!r}")


class SyntheticSystem:
    """Executable synthetic system plus its analytic oracle."""

    thread_safe = True

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        if isinstance(spec, CategoricalTable):
            self.deterministic = all(
                max(t.values()) == 1.0
                for pmf in spec.pmfs.values()
                for t in (pmf if isinstance(pmf, (list, tuple)) else [pmf])
            )
            self._samplers = {}
        elif isinstance(spec, ClippedGaussianMixture):
            self.deterministic = all(
                len(cs) == 1 and not any(cs[0][2]) for cs in spec.components.values()
            )
        elif isinstance(spec, DeterministicAffine):
            self.deterministic = True
        elif isinstance(spec, FeedbackConvergent):
            self.deterministic = not isinstance(spec.noise, Mapping) and spec.noise == 0
        else:
            raise InvalidSpec(f"not a synthetic spec: {spec!r}")

    # -- dynamics --------------------------------------------------------

    def step(self, states, inputs, rng):
        spec = self.spec
        x0 = states[0]
        t = len(states)
        if isinstance(spec, CategoricalTable):
            return self._table_sampler(x0, t).sample(rng)
        if isinstance(spec, ClippedGaussianMixture):
            comps = _per_state(spec.components, x0, "components")
            if len(comps) == 1:
                _, mu, sd = comps[0]
            else:
                r = rng.random()
                acc = 0.0
                for w, mu, sd in comps:
                    acc += w
                    if r < acc:
                        break
            shift = _shift_vector(inputs[0], len(mu)) if spec.input_shift else (0.0,) * len(mu)
            return tuple(
                _clip(m + s + (d * rng.gauss(0.0, 1.0) if d else 0.0), lo, hi)
                for m, s, d, lo, hi in zip(mu, shift, sd, spec.lo, spec.hi)
            )
        if isinstance(spec, DeterministicAffine):
            b = float(_per_state(spec.b, x0, "b"))
            return _clip(spec.a * float(inputs[0]) + b, spec.lo, spec.hi)
        # FeedbackConvergent
        r = float(_per_state(spec.rate, x0, "rate"))
        s = float(_per_state(spec.noise, x0, "noise"))
        prev = float(states[-1])
        y = prev + r * (float(inputs[0]) - prev)
        if s:
            y += s * rng.gauss(0.0, 1.0)
        return _clip(y, spec.lo, spec.hi)

    def readout(self, state):
        if isinstance(self.spec, CategoricalTable):
            return state
        if isinstance(state, tuple):
            return state
        return (float(state),)

    def _table_sampler(self, x0, t):
        key = (x0, t)
        s = self._samplers.get(key)
        if s is None:
            pmf = _per_state(self.spec.pmfs, x0, "pmfs")
            if isinstance(pmf, (list, tuple)):
                pmf = pmf[min(t, len(pmf)) - 1]
            labels = [l for l in self.spec.labels if pmf.get(l, 0.0) > 0]
            s = Discrete(tuple(labels), tuple(pmf[l] / sum(pmf[l2] for l2 in labels) for l in labels))
            self._samplers[key] = s
        return s

    # -- oracle ----------------------------------------------------------

    def bin_masses(self, space: MeasurementSpace, x0, t: int, inputs: Optional[Distribution] = None) -> np.ndarray:
        """True probability of each bin of ``space`` at turn ``t`` from ``x0``."""
        spec = self.spec
        if isinstance(spec, CategoricalTable):
            if not isinstance(space, CategoricalSpace):
                raise InvalidSpec("categorical table needs a categorical space")
            pmf = _per_state(spec.pmfs, x0, "pmfs")
            if isinstance(pmf, (list, tuple)):
                pmf = pmf[min(t, len(pmf)) - 1]
            return np.array([float(pmf.get(l, 0.0)) for l in space.labels])
        if isinstance(spec, ClippedGaussianMixture):
            if spec.input_shift:
                if inputs is None:
                    raise OracleUnavailable("input-shifted mixture needs the input distribution")
                return _shifted_mixture_masses(self, space, x0, inputs)
            return _mixture_masses(spec, space, x0, None)
        if inputs is None:
            raise OracleUnavailable("affine pushforward needs the input distribution")
        _require_1d_box(space, type(spec).__name__)
        if isinstance(spec, DeterministicAffine):
            b = float(_per_state(spec.b, x0, "b"))
            return _affine_masses(space, spec.a, b, inputs)
        if not self.deterministic:
            raise OracleUnavailable("feedback system oracle needs zero noise")
        r = float(_per_state(spec.rate, x0, "rate"))
        decay = (1.0 - r) ** t
        return _affine_masses(space, 1.0 - decay, float(x0) * decay, inputs)

    def mean_output(self, x0, u0) -> tuple:
        """Analytic expected measurement given x0 and u0 (mixture and affine systems)."""
        spec = self.spec
        if isinstance(spec, ClippedGaussianMixture):
            comps = _per_state(spec.components, x0, "components")
            dim = len(spec.lo)
            shift = np.broadcast_to(np.atleast_1d(u0).astype(float), (dim,)) if spec.input_shift else np.zeros(dim)
            out = np.zeros(dim)
            for w, mu, sd in comps:
                for d in range(dim):
                    out[d] += w * clipped_normal_mean(mu[d] + shift[d], sd[d], spec.lo[d], spec.hi[d])
            return tuple(float(v) for v in out)
        if isinstance(spec, DeterministicAffine):
            return (_clip(spec.a * float(u0) + float(_per_state(spec.b, x0, "b")), spec.lo, spec.hi),)
        raise OracleUnavailable(f"no analytic mean for {type(spec).__name__}")


def clipped_normal_mean(mu: float, sd: float, lo: float, hi: float) -> float:
    if sd == 0:
        return _clip(mu, lo, hi)
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    Fa, Fb = norm.cdf(a), norm.cdf(b)
    return float(lo * Fa + hi * (1 - Fb) + mu * (Fb - Fa) + sd * (norm.pdf(a) - norm.pdf(b)))


def _mixture_masses(spec: ClippedGaussianMixture, space, x0, shift) -> np.ndarray:
    if not isinstance(space, BoxSpace) or space.dim != len(spec.lo):
        raise InvalidSpec("mixture oracle needs a box space of matching dimension")
    comps = _per_state(spec.components, x0, "components")
    total = np.zeros(space.cells)
    for w, mu, sd in comps:
        axes = []
        for d in range(space.dim):
            m = mu[d] + (0.0 if shift is None else shift[d])
            m = _clip(m, spec.lo[d], spec.hi[d]) if sd[d] == 0 else m
            inner = _edges(space, d)[1:-1]
            if sd[d] == 0:
                cdf = (inner <= m).astype(float)
            else:
                cdf = norm.cdf((inner - m) / sd[d])
            cdf = np.concatenate([[0.0], cdf, [1.0]])
            axes.append(np.diff(cdf))
        mass = axes[0]
        for ax in axes[1:]:
            mass = np.multiply.outer(mass, ax)
        total = total + w * mass
    return total.reshape(-1)


def _shifted_mixture_masses(system, space, x0, inputs) -> np.ndarray:
    spec = system.spec
    dim = len(spec.lo)
    if isinstance(inputs, Constant):
        pairs = [(1.0, inputs.value)]
    elif isinstance(inputs, Discrete):
        pairs = list(zip(inputs.weights, inputs.values))
    else:
        raise OracleUnavailable("input-shifted mixture oracle needs a discrete input distribution")
    out = np.zeros(space.n_bins)
    for w, u in pairs:
        shift = np.broadcast_to(np.atleast_1d(u).astype(float), (dim,))
        out += w * _mixture_masses(spec, space, x0, shift)
    return out


def make_synthetic(spec: SyntheticSpec) -> SyntheticSystem:
    return SyntheticSystem(spec)


# ---------------------------------------------------------------------------
# controllability ground truth


MASS_TOL = 1e-12


def p_approximate_bins(masses, p: float) -> frozenset:
    """Bins whose true mass reaches the precision threshold p."""
    return frozenset(int(i) for i in np.nonzero(np.asarray(masses) >= p - MASS_TOL)[0])


def true_mu(
    system: SyntheticSystem,
    space: MeasurementSpace,
    initial: Discrete,
    t: int,
    p: float,
    inputs: Optional[Distribution] = None,
) -> np.ndarray:
    """Fraction of initial-state mass that p-approximately reaches each bin."""
    mu = np.zeros(space.n_bins)
    for x0, w in zip(initial.values, initial.weights):
        for b in p_approximate_bins(system.bin_masses(space, x0, t, inputs), p):
            mu[b] += w
    return mu


def true_alpha_controllable_set(mu, alpha: float) -> frozenset:
    """Bins reached by at least a 1 - alpha share of initial states (inclusive)."""
    items = mu.items() if isinstance(mu, Mapping) else enumerate(np.asarray(mu, dtype=float))
    return frozenset(int(b) for b, v in items if v >= 1.0 - alpha - MASS_TOL)


def mu_of(mu, bins) -> float:
    """Total mu-measure of a set of bins."""
    if isinstance(mu, Mapping):
        return float(sum(mu.get(b, 0.0) for b in bins))
    arr = np.asarray(mu, dtype=float)
    return float(sum(arr[b] for b in bins))
