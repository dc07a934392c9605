"""Campaign configuration: JSON file <-> validated dataclass."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError, PacReachError
from .planner import (
    ControlPlan,
    ExpectedPlan,
    ReachPlan,
    auto_split,
)
from .space import BoxSpace, space_from_dict
from .systems import Constant, Discrete, InputPolicy, SyntheticSystem, dist_from_dict, hold_input, spec_from_dict

SCHEMA = "pacreach.campaign/1"

# experiment-level defaults
DEFAULT_KNOBS = {"alpha": 0.1, "epsilon": 0.05, "delta": 0.05, "p": 0.05, "gamma": 0.1}
SIZE_FIELDS = ("m", "k", "delta_R", "delta_C")


@dataclass
class Knobs:
    alpha: float = DEFAULT_KNOBS["alpha"]
    epsilon: float = DEFAULT_KNOBS["epsilon"]
    delta: float = DEFAULT_KNOBS["delta"]
    p: float = DEFAULT_KNOBS["p"]
    gamma: float = DEFAULT_KNOBS["gamma"]


@dataclass
class Sizes:
    m: int
    k: int
    delta_R: float
    delta_C: float


@dataclass
class ExpectedKnobs:
    epsilon: float = 0.1
    delta: float = 0.1
    delta_mu: float = 1e-4
    epsilon_mu: float = 0.1
    R_bound: float = 1.0


@dataclass
class CampaignConfig:
    system: dict
    space: Optional[dict] = None
    policy: dict = field(default_factory=lambda: {"initial": {"kind": "constant", "value": 0.0}})
    initial_states: Any = None
    x0: Any = None
    horizon: int = 1
    knobs: Knobs = field(default_factory=Knobs)
    sizes: Optional[Sizes] = None
    expected: ExpectedKnobs = field(default_factory=ExpectedKnobs)
    test: Optional[dict] = None
    validate: dict = field(default_factory=dict)
    seed: int = 0
    parallelism: int = 1
    retries: int = 0
    out: Optional[str] = None
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        d = {
            "schema": self.schema,
            "system": self.system,
            "space": self.space,
            "policy": self.policy,
            "initial_states": self.initial_states,
            "x0": self.x0,
            "horizon": self.horizon,
            "knobs": vars(self.knobs),
            "sizes": None if self.sizes is None else vars(self.sizes),
            "expected": vars(self.expected),
            "test": self.test,
            "validate": self.validate,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "retries": self.retries,
            "out": self.out,
        }
        return json.loads(json.dumps(d))


def _num(d, key, path, kind=float, lo=None, hi=None, open_interval=False):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    v = kind(v)
    if open_interval and not (0 < v < 1):
        raise ConfigError(f"{path}.{key}: must lie in (0, 1), got {v}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}.{key}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}.{key}: must be <= {hi}, got {v}")
    return v


def _block(d, key, cls, path, unit=(), ints=(), positive=()):
    raw = d.get(key)
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    known = set(cls.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}: unknown field")
    vals = {}
    for k, v in raw.items():
        if k in unit:
            vals[k] = _num(raw, k, path, open_interval=True)
        elif k in ints:
            vals[k] = _num(raw, k, path, kind=int, lo=1)
        elif k in positive:
            vals[k] = _num(raw, k, path)
            if not vals[k] > 0:
                raise ConfigError(f"{path}.{k}: must be > 0, got {vals[k]}")
        else:
            vals[k] = v
    return vals


def config_from_dict(d: dict) -> CampaignConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    schema = d.get("schema")
    if schema != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA!r}, got {schema!r}")
    known = set(CampaignConfig.__dataclass_fields__)
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unknown field")
    if "system" not in d or not isinstance(d["system"], dict):
        raise ConfigError("system: required object")

    kv = _block(d, "knobs", Knobs, "knobs", unit=("alpha", "epsilon", "delta", "p"), positive=("gamma",)) or {}
    sz = _block(d, "sizes", Sizes, "sizes", unit=("delta_R", "delta_C"), ints=("m", "k"))
    if sz is not None:
        missing = [f for f in SIZE_FIELDS if f not in sz]
        if missing:
            raise ConfigError(
                f"sizes.{missing[0]}: explicit sizes must give all of {', '.join(SIZE_FIELDS)} "
                "(auto knobs and explicit sizes cannot be mixed)"
            )
    ev = _block(
        d, "expected", ExpectedKnobs, "expected",
        unit=("epsilon", "delta", "delta_mu"), positive=("epsilon_mu", "R_bound"),
    ) or {}
    horizon = _num(d, "horizon", "config", kind=int, lo=1) if "horizon" in d else 1
    seed = _num(d, "seed", "config", kind=int, lo=0) if "seed" in d else 0
    par = _num(d, "parallelism", "config", kind=int, lo=1) if "parallelism" in d else 1
    retries = _num(d, "retries", "config", kind=int, lo=0) if "retries" in d else 0
    policy = d.get("policy", {"initial": {"kind": "constant", "value": 0.0}})
    if not isinstance(policy, dict) or "initial" not in policy:
        raise ConfigError("policy.initial: required")
    return CampaignConfig(
        system=d["system"],
        space=d.get("space"),
        policy=policy,
        initial_states=d.get("initial_states"),
        x0=d.get("x0"),
        horizon=horizon,
        knobs=Knobs(**kv),
        sizes=None if sz is None else Sizes(**sz),
        expected=ExpectedKnobs(**ev),
        test=d.get("test"),
        validate=d.get("validate") or {},
        seed=seed,
        parallelism=par,
        retries=retries,
        out=d.get("out"),
    )


def load_config(path) -> CampaignConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# building runtime objects


def _wrap(path, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (PacReachError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def build_space(cfg: CampaignConfig):
    gamma = cfg.knobs.gamma
    if cfg.space is not None:
        sp = dict(cfg.space)
        if sp.get("kind") == "box":
            # an explicit space gamma wins over the knob default
            sp.setdefault("gamma", gamma)
        return _wrap("space", space_from_dict, sp)
    syn = cfg.system.get("synthetic")
    if syn is None:
        raise ConfigError("space: required for backend systems")
    spec = _wrap("system.synthetic", spec_from_dict, syn)
    return _wrap("space", spec.space, gamma)


def build_system(cfg: CampaignConfig, transport=None):
    """Return the executable system for the config."""
    if "synthetic" in cfg.system:
        return SyntheticSystem(_wrap("system.synthetic", spec_from_dict, cfg.system["synthetic"]))
    if "backend" in cfg.system:
        from .adapters import backend_from_dict, readout_from_dict

        if "readout" not in cfg.system:
            raise ConfigError("system.readout: required for backend systems")
        readout = _wrap("system.readout", readout_from_dict, cfg.system["readout"])
        return _wrap("system.backend", backend_from_dict, cfg.system["backend"], readout, cfg.parallelism, transport)
    raise ConfigError("system: needs either 'synthetic' or 'backend'")


def build_policy(cfg: CampaignConfig) -> InputPolicy:
    initial = _wrap("policy.initial", dist_from_dict, cfg.policy["initial"])
    fb = cfg.policy.get("feedback")
    if fb is None or fb == "resample":
        return InputPolicy(initial, None)
    if fb == "hold":
        return InputPolicy(initial, hold_input)
    if isinstance(fb, dict) and "template" in fb:
        from .adapters import FeedbackTemplate, TemplateFeedback

        tpl = fb["template"]
        if isinstance(tpl, dict):
            tpl = _wrap("policy.feedback.template", lambda t: FeedbackTemplate(**t), tpl)
        return InputPolicy(initial, TemplateFeedback(tpl, float(fb.get("scale", 1.0))))
    raise ConfigError(f"policy.feedback: expected null, 'resample', 'hold' or {{'template': ...}}, got {fb!r}")


def build_initial_states(cfg: CampaignConfig):
    if cfg.initial_states is None:
        if cfg.x0 is None:
            raise ConfigError("initial_states: required (or give x0)")
        return Constant(cfg.x0)
    return _wrap("initial_states", dist_from_dict, cfg.initial_states)


def resolve_x0(cfg: CampaignConfig):
    if cfg.x0 is not None:
        return cfg.x0
    init = cfg.initial_states
    if isinstance(init, dict) and init.get("kind") == "discrete" and len(init.get("values", [])) == 1:
        return init["values"][0]
    if isinstance(init, dict) and init.get("kind") == "constant":
        return init["value"]
    if init is not None and not isinstance(init, dict):
        return init
    raise ConfigError("x0: required for single-state commands when initial_states is not a single value")


def reach_plan(cfg: CampaignConfig, N: int) -> ReachPlan:
    """Reach-only plan: the whole confidence budget goes to delta_R."""
    if cfg.sizes is not None:
        plan = ReachPlan(N, cfg.knobs.p, cfg.sizes.delta_R, cfg.sizes.m)
    else:
        plan = _wrap("knobs", ReachPlan.auto, N, cfg.knobs.p, cfg.knobs.delta)
    v = plan.violations()
    if v:
        raise ConfigError("sizes: " + "; ".join(v))
    return plan


def control_plan(cfg: CampaignConfig, N: int) -> ControlPlan:
    k = cfg.knobs
    if cfg.sizes is None:
        return auto_split(k.delta, k.p, k.alpha, k.epsilon, N)
    s = cfg.sizes
    plan = ControlPlan(k.alpha, k.epsilon, k.delta, s.delta_C, s.delta_R, s.k, ReachPlan(N, k.p, s.delta_R, s.m))
    v = plan.violations()
    if v:
        raise ConfigError("sizes: " + "; ".join(v))
    return plan


def expected_plan(cfg: CampaignConfig, out_dim: int) -> ExpectedPlan:
    e = cfg.expected
    return ExpectedPlan.auto(out_dim, e.epsilon, e.delta, e.delta_mu, e.epsilon_mu, e.R_bound)


def space_dim(space) -> int:
    return space.dim if isinstance(space, BoxSpace) else 1


def initial_support(init) -> Optional[Discrete]:
    if isinstance(init, Discrete):
        return init
    if isinstance(init, Constant):
        return Discrete((init.value,))
    return None
