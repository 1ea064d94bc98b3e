"""
CLI Configuration
Layered configuration: built-in defaults < config file < LODL_* environment < command-line flags.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import jsonschema
import toml
import yaml

from lodl_bench.domains.base import DOMAIN_KINDS, DomainConfig
from lodl_bench.errors import ConfigError
from lodl_bench.harness.experiments import HarnessConfig
from lodl_bench.harness.pipeline import METHODS, Settings
from lodl_bench.losses import FAMILIES, FitConfig
from lodl_bench.models import MODEL_KINDS, TrainConfig
from lodl_bench.sampling import DEFAULT_ALPHA, STRATEGIES, SamplingConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "LODL_"

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "run": {"seed": 0, "workers": 1, "output_dir": "runs"},
    "domain": {},
    "sampling": {"strategy": "all-perturbed", "samples": 5000},
    "fit": {"family": "directedquadratic", "method": "gd", "steps": 100, "lr": 1.0, "w_min": 1e-2, "rank": 2,
            "nn_hidden": 100},
    "train": {"steps": 500, "lr": 0.01, "dfl_lr": 0.005, "check_every": 25, "early_stopping": True},
    "harness": {"methods": list(METHODS), "seeds": 5, "inits": 3, "random_draws": 100, "mae_samples": 200,
                "cell_workers": 1, "worker_counts": [1, 2, 4, 8], "model_counts": [1, 2, 5, 10],
                "ablation_samples": [50, 500, 5000], "ablation_strategies": list(STRATEGIES)},
}

_POSITIVE_INT = {"type": "integer", "minimum": 1}
_NON_NEGATIVE = {"type": "number", "minimum": 0}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}


def _section(properties: Dict[str, Any]) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": properties}


SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "run": _section({
            "seed": {"type": "integer", "minimum": 0},
            "workers": _POSITIVE_INT,
            "output_dir": {"type": "string", "minLength": 1},
        }),
        "domain": _section({
            "kind": {"enum": list(DOMAIN_KINDS)},
            "n_items": _POSITIVE_INT,
            "n_websites": _POSITIVE_INT,
            "n_users": _POSITIVE_INT,
            "budget": _POSITIVE_INT,
            "lam": _NON_NEGATIVE,
            "n_train": _POSITIVE_INT,
            "n_val": _POSITIVE_INT,
            "n_test": _POSITIVE_INT,
        }),
        "sampling": _section({
            "strategy": {"enum": list(STRATEGIES)},
            "samples": _POSITIVE_INT,
            "alpha": _POSITIVE,
        }),
        "fit": _section({
            "family": {"enum": list(FAMILIES)},
            "method": {"enum": ["gd", "closed-form"]},
            "steps": _POSITIVE_INT,
            "lr": _POSITIVE,
            "w_min": _POSITIVE,
            "rank": _POSITIVE_INT,
            "nn_hidden": _POSITIVE_INT,
        }),
        "train": _section({
            "model": {"enum": list(MODEL_KINDS)},
            "steps": _POSITIVE_INT,
            "lr": _NON_NEGATIVE,
            "dfl_lr": _NON_NEGATIVE,
            "check_every": _POSITIVE_INT,
            "early_stopping": {"type": "boolean"},
        }),
        "harness": _section({
            "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
            "seeds": _POSITIVE_INT,
            "inits": _POSITIVE_INT,
            "random_draws": _POSITIVE_INT,
            "mae_samples": {"type": "integer", "minimum": 0},
            "cell_workers": _POSITIVE_INT,
            "worker_counts": {"type": "array", "items": _POSITIVE_INT, "minItems": 1},
            "model_counts": {"type": "array", "items": _POSITIVE_INT, "minItems": 1},
            "ablation_samples": {"type": "array", "items": _POSITIVE_INT, "minItems": 1},
            "ablation_strategies": {"type": "array", "items": {"enum": list(STRATEGIES)}, "minItems": 1},
        }),
    },
}


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a TOML (or YAML) configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        if path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(path.read_text()) or {}
        else:
            data = toml.loads(path.read_text())
    except (toml.TomlDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a table of sections")
    return data


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Dict[str, Any]]:
    """LODL_<SECTION>_<KEY> variables, parsed as YAML scalars (so 7 is an int and true a bool)."""
    environ = os.environ if environ is None else environ
    out: Dict[str, Dict[str, Any]] = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section = next((s for s in SCHEMA["properties"] if rest.startswith(s + "_")), None)
        if section is None:
            continue
        out.setdefault(section, {})[rest[len(section) + 1:]] = yaml.safe_load(raw)
    return out


def merge(base: Dict[str, Any], *layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """Section-wise merge; later layers win key by key."""
    merged = copy.deepcopy(base)
    for layer in layers:
        for section, values in (layer or {}).items():
            if isinstance(values, Mapping) and isinstance(merged.get(section), dict):
                merged[section].update(copy.deepcopy(dict(values)))
            else:
                merged[section] = copy.deepcopy(values)
    return merged


def validate(config: Dict[str, Any]):
    """Schema check; errors name the offending key."""
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(config), key=lambda e: list(e.path))
    if errors:
        error = errors[0]
        key = ".".join(str(p) for p in error.path)
        if error.validator == "additionalProperties":
            allowed = set(error.schema.get("properties", {}))
            instance = error.instance if isinstance(error.instance, dict) else {}
            unexpected = sorted(k for k in instance if k not in allowed)
            key = ".".join([key, unexpected[0]]) if key else unexpected[0]
            raise ConfigError(f"unknown key '{key}'", key=key)
        raise ConfigError(f"{key or 'config'}: {error.message}", key=key)
    if "kind" not in config.get("domain", {}):
        raise ConfigError(f"missing domain; valid domains: {', '.join(DOMAIN_KINDS)}", key="domain.kind")


def resolve(config_path: Optional[Path] = None, flags: Optional[Mapping[str, Mapping[str, Any]]] = None,
            environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Merge every layer, validate, then fill domain-dependent defaults."""
    from_file = load_config_file(config_path) if config_path else {}
    config = merge(DEFAULTS, from_file, env_overrides(environ), flags)
    validate(config)

    kind = config["domain"]["kind"]
    domain = DomainConfig.defaults(kind, **{k: v for k, v in config["domain"].items() if k != "kind"},
                                   seed=config["run"]["seed"])
    config["domain"] = {k: v for k, v in domain.to_dict().items() if k != "seed"}
    config["sampling"].setdefault("alpha", DEFAULT_ALPHA[kind])
    return config


def build_settings(config: Dict[str, Any]) -> Tuple[Settings, HarnessConfig]:
    """Typed settings from a resolved configuration; every randomness source takes run.seed."""
    seed = config["run"]["seed"]
    domain = DomainConfig(**config["domain"], seed=seed)
    sampling = SamplingConfig(**config["sampling"], seed=seed)
    fit_values = {k: v for k, v in config["fit"].items() if k not in ("family", "method")}
    fit = FitConfig(**fit_values, seed=seed)
    train_values = {k: v for k, v in config["train"].items() if k != "model"}
    train = TrainConfig(**train_values, seed=seed)
    for part in (domain, sampling, fit, train):
        part.validate()
    settings = Settings(domain=domain, sampling=sampling, fit=fit, train=train,
                        model_kind=config["train"].get("model"), fit_method=config["fit"]["method"],
                        workers=config["run"]["workers"])
    harness = HarnessConfig(**config["harness"])
    harness.validate()
    return settings, harness


def render(config: Dict[str, Any]) -> str:
    return toml.dumps(config)
