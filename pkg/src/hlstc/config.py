"""Experiment configuration: strict JSON schema plus resolved defaults.

Every section is optional; unknown keys anywhere are rejected. Example::

    {
      "model": {"name": "robot_arm", "params": {"theta1": 10, "theta2": 10}},
      "stc": {"eps_ref": 0.01, "delta": 0.999, "v_max": 1e6, "m": 16},
      "certification": {"samples": 50, "eps_count": 23},
      "experiment": {"runs": 1000, "horizons": [10, 50], "seed": 0}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema

from hlstc.io import content_hash

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = _obj(
    {
        "model": _obj(
            {
                "name": {"enum": ["robot_arm"]},
                "params": _obj({"a": _num, "b": _num, "theta1": _num, "theta2": _num}),
            }
        ),
        "lyapunov": _obj({"w_scale": _pos}),
        "stc": _obj(
            {
                "eps_ref": _pos,
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "v_max": _pos,
                "m": {"type": "integer", "minimum": 2},
                "v_floor": _pos,
                "mode": {"enum": ["output", "state"]},
            }
        ),
        "certification": _obj(
            {
                "half_width": _pos,
                "samples": {"type": "integer", "minimum": 2},
                "eps_lower": _num,
                "eps_upper": _num,
                "eps_count": {"type": "integer", "minimum": 1},
                "rel_tol": _pos,
                "refine": {"type": "boolean"},
                "cache_dir": {"type": ["string", "null"]},
            }
        ),
        "experiment": _obj(
            {
                "runs": {"type": "integer", "minimum": 1},
                "horizons": {"type": "array", "items": _pos, "minItems": 1},
                "seed": {"type": "integer", "minimum": 0},
                "ic_half_width": _pos,
                "eta_init": {"enum": ["observer_value", "zeros"]},
                "workers": {"type": "integer", "minimum": 1},
                "output_step": _pos,
                "convergence_threshold": _pos,
                "initial_state": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                "period": _pos,
            }
        ),
    }
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending location."""


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str = "robot_arm"
    model_params: dict = field(default_factory=dict)
    w_scale: float = 0.6
    eps_ref: float = 0.01
    delta: float = 0.999
    v_max: float = 1e6
    m: int = 16
    v_floor: float = 1e-12
    mode: str = "output"
    half_width: float = 10.0
    samples: int = 50
    eps_lower: float = -20.0
    eps_upper: float = 0.01
    eps_count: int = 23
    rel_tol: float = 1e-3
    refine: bool = False
    cache_dir: str | None = None
    runs: int = 1000
    horizons: tuple[float, ...] = (10.0, 50.0)
    seed: int = 0
    ic_half_width: float = 10.0
    eta_init: str = "observer_value"
    workers: int = 1
    output_step: float = 1e-3
    convergence_threshold: float = 1e-3
    initial_state: tuple[float, ...] = (5.0, -5.0, 0.0, 0.0)
    period: float | None = None

    def __post_init__(self):
        if self.eps_lower >= self.eps_upper:
            raise ConfigError("certification: eps_lower must be below eps_upper")
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))

    @property
    def hash(self) -> str:
        return content_hash(asdict(self))

    def override(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


_SECTION_KEYS = {
    "stc": {"eps_ref", "delta", "v_max", "m", "v_floor", "mode"},
    "lyapunov": {"w_scale"},
    "certification": {"half_width", "samples", "eps_lower", "eps_upper", "eps_count", "rel_tol", "refine", "cache_dir"},
    "experiment": {
        "runs", "horizons", "seed", "ic_half_width", "eta_init", "workers",
        "output_step", "convergence_threshold", "initial_state", "period",
    },
}


def _location(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def parse_config(raw: dict) -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{_location(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    kwargs = {}
    model = raw.get("model", {})
    if "name" in model:
        kwargs["model_name"] = model["name"]
    if "params" in model:
        kwargs["model_params"] = dict(model["params"])
    for section, keys in _SECTION_KEYS.items():
        for key, value in raw.get(section, {}).items():
            assert key in keys
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)
