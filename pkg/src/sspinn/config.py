"""Run configuration: JSON files, defaults per problem, and the config hash."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .field_model import ConfigurationError
from .optim import Schedule
from .problems import get_problem


class ConfigError(ConfigurationError):
    """Invalid run configuration; ``where`` names the offending field or line."""

    def __init__(self, message, where=None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


_TOP_KEYS = {"problem", "problem_options", "network", "collocation", "loss", "schedule", "seed",
             "output_dir", "export", "scalar_init"}


@dataclass
class RunConfig:
    problem: str
    seed: int
    problem_options: dict = field(default_factory=dict)
    network: dict = field(default_factory=lambda: {"hidden": [20, 20, 20]})
    collocation: dict = field(default_factory=lambda: {"n_near": 300, "n_far": 200, "r_split": None,
                                                       "n_boundary": 200})
    loss: dict = field(default_factory=lambda: {"gamma": 0.1})
    schedule: dict = field(default_factory=dict)
    output_dir: str = "runs/run"
    export: dict = field(default_factory=dict)
    scalar_init: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def hash(self):
        """Short SHA-256 of the canonical JSON (output directory excluded)."""
        d = self.to_dict()
        d.pop("output_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def make_problem(self):
        return get_problem(self.problem, **self.problem_options)

    def make_schedule(self):
        try:
            return Schedule(**self.schedule)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "schedule") from None

    def with_overrides(self, **kw):
        new = copy.deepcopy(self)
        for k, v in kw.items():
            if v is not None:
                setattr(new, k, v)
        return new


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
    if "problem" not in d:
        raise ConfigError("missing", "problem")
    if "seed" not in d:
        raise ConfigError("missing (no implicit entropy)", "seed")
    if not isinstance(d["seed"], int):
        raise ConfigError("must be an integer", "seed")
    base = RunConfig(problem=d["problem"], seed=d["seed"])
    for key in _TOP_KEYS - {"problem", "seed"}:
        if key in d:
            val = d[key]
            default = getattr(base, key)
            if isinstance(default, dict):
                if not isinstance(val, dict):
                    raise ConfigError("must be an object", key)
                merged = dict(default)
                merged.update(val)
                val = merged
            setattr(base, key, val)
    validate(base)
    return base


def validate(cfg: RunConfig):
    try:
        problem = cfg.make_problem()
    except ConfigurationError as exc:
        raise ConfigError(str(exc), "problem_options") from None
    cfg.make_schedule()
    hidden = cfg.network.get("hidden")
    per_field = cfg.network.get("per_field", {})
    if not hidden or not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("hidden must be a non-empty list of positive integers", "network.hidden")
    for name in per_field:
        if name not in problem.field_names():
            raise ConfigError(f"unknown field {name!r}", "network.per_field")
    for k in ("n_near", "n_far", "n_boundary"):
        v = cfg.collocation.get(k)
        if not isinstance(v, int) or v < 0:
            raise ConfigError("must be a non-negative integer", f"collocation.{k}")
    for name in cfg.scalar_init:
        if name not in [s.name for s in problem.scalars]:
            raise ConfigError(f"unknown scalar {name!r}", "scalar_init")
    return problem


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return from_dict(d)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
