"""Configuration management for adverseg."""

import copy
import logging
import os
import sys
from pathlib import Path
from typing import Any, Mapping, Optional

# Use tomllib for Python 3.11+, fall back to tomli
if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from adverseg.core.models import NetConfig
from adverseg.core.training import TrainConfig
from adverseg.data.models import AugmentPolicy
from adverseg.errors import ConfigError

logger = logging.getLogger("adverseg.config")

SEED_ENV = "ADVERSEG_SEED"

# key -> (type, allowed values or None)
SCHEMA: dict[str, tuple[type, Optional[tuple]]] = {
    "seed": (int, None),
    "steps": (int, None),
    "batch_size": (int, None),
    "lr": (float, None),
    "lambda_rec": (float, None),
    "d_steps_per_g_step": (int, None),
    "adversarial": (bool, None),
    "loss_convention": (str, ("minmax", "standard")),
    "recon_mode": (str, ("bce", "categorical")),
    "label_smoothing": (bool, None),
    "clip_norm": (float, None),
    "eval_every": (int, None),
    "holdout_fraction": (float, None),
    "model_name": (str, None),
    "head": (str, ("sigmoid", "softmax")),
    "encoder_channels": (list, None),
    "disc_channels": (list, None),
    "skip_connections": (bool, None),
    "conditional_disc": (bool, None),
    "augment": (bool, None),
    "p_flip": (float, None),
    "p_rotate": (float, None),
    "p_intensity": (float, None),
    "gain_min": (float, None),
    "gain_max": (float, None),
    "offset_min": (float, None),
    "offset_max": (float, None),
}


def _check_value(key: str, value: Any) -> Any:
    """Type-check one value; returns it normalized (ints accepted for floats)."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key '{key}'")
    kind, choices = SCHEMA[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"'{key}' must be an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"'{key}' must be of type {kind.__name__}, got {value!r}")
    if kind is list:
        if not value or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0
                                for v in value):
            raise ConfigError(f"'{key}' must be a non-empty list of positive integers")
        value = list(value)
    if choices is not None and value not in choices:
        raise ConfigError(f"'{key}' must be one of {', '.join(choices)}, got {value!r}")
    if key == "seed" and value < 0:
        raise ConfigError("'seed' must be >= 0")
    return value


def load_config_file(path: Path | str) -> dict[str, Any]:
    """Parse a flat ``key = value`` file (TOML syntax, no tables)."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: sections are not supported (found [{key}])")
    return data


def seed_from_env(environ: Mapping[str, str] = os.environ) -> Optional[int]:
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    if seed < 0:
        raise ConfigError(f"{SEED_ENV} must be >= 0")
    return seed


def resolve_seed(flag: Optional[int], environ: Mapping[str, str] = os.environ) -> int:
    """Flag, then ``ADVERSEG_SEED``, then 0."""
    if flag is not None:
        return _check_value("seed", flag)
    env = seed_from_env(environ)
    return env if env is not None else Config.DEFAULT_CONFIG["seed"]


class Config:
    """Effective run configuration.

    Precedence, highest first: explicit overrides (command-line flags), the
    config file, ``ADVERSEG_SEED`` (seed only), ``DEFAULT_CONFIG``.
    """

    DEFAULT_CONFIG = {
        "seed": 0,
        "steps": 200,
        "batch_size": 16,
        "lr": 1e-4,
        "lambda_rec": 10.0,
        "d_steps_per_g_step": 1,
        "adversarial": True,
        "loss_convention": "minmax",  # minmax, standard
        "recon_mode": "bce",  # bce, categorical
        "label_smoothing": False,
        "clip_norm": 0.0,  # 0 disables
        "eval_every": 50,
        "holdout_fraction": 0.2,
        "model_name": "Ours",
        "head": "sigmoid",  # sigmoid, softmax
        "encoder_channels": [16, 32, 64],
        "disc_channels": [16, 32, 64, 64],
        "skip_connections": False,
        "conditional_disc": False,
        "augment": True,
        "p_flip": 0.5,
        "p_rotate": 0.5,
        "p_intensity": 0.5,
        "gain_min": 0.9,
        "gain_max": 1.1,
        "offset_min": -0.05,
        "offset_max": 0.05,
    }

    def __init__(
        self,
        path: Optional[Path | str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        environ: Mapping[str, str] = os.environ,
    ):
        self._path = Path(path) if path is not None else None
        self._config: dict[str, Any] = {}
        self._load(overrides or {}, environ)

    def _load(self, overrides: Mapping[str, Any], environ: Mapping[str, str]) -> None:
        self._config = copy.deepcopy(self.DEFAULT_CONFIG)
        env_seed = seed_from_env(environ)
        if env_seed is not None:
            self._config["seed"] = env_seed
        if self._path is not None:
            for key, value in load_config_file(self._path).items():
                self.set(key, value)
            logger.debug("loaded config from %s", self._path)
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value."""
        return self._config.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set a configuration value after validating it."""
        self._config[key] = _check_value(key, value)

    def as_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self._config)

    def dumps(self) -> str:
        lines = []
        for key, value in self._config.items():
            if isinstance(value, bool):
                lines.append(f"{key} = {str(value).lower()}")
            elif isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, list):
                lines.append(f"{key} = [{', '.join(str(v) for v in value)}]")
            else:
                lines.append(f"{key} = {value!r}")
        return "\n".join(lines) + "\n"

    def save(self, path: Optional[Path | str] = None) -> Path:
        """Write the effective configuration in the same ``key = value`` format."""
        target = Path(path) if path is not None else self._path
        if target is None:
            raise ConfigError("no path to save the configuration to")
        target.write_text(self.dumps())
        return target

    @property
    def path(self) -> Optional[Path]:
        return self._path

    @property
    def seed(self) -> int:
        return self.get("seed")

    @property
    def steps(self) -> int:
        return self.get("steps")

    def net_config(self, num_classes: int, in_channels: int) -> NetConfig:
        return NetConfig(
            in_channels=in_channels,
            num_classes=num_classes,
            encoder_channels=tuple(self.get("encoder_channels")),
            head=self.get("head"),
            disc_channels=tuple(self.get("disc_channels")),
            skip_connections=self.get("skip_connections"),
            conditional_disc=self.get("conditional_disc"),
        )

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(
            p_flip=self.get("p_flip"),
            p_rotate=self.get("p_rotate"),
            p_intensity=self.get("p_intensity"),
            gain_range=(self.get("gain_min"), self.get("gain_max")),
            offset_range=(self.get("offset_min"), self.get("offset_max")),
        )

    def to_train_config(self, num_classes: int = 3, in_channels: int = 1) -> TrainConfig:
        """Typed training configuration; range checks happen here."""
        c = self._config
        return TrainConfig(
            steps=c["steps"],
            batch_size=c["batch_size"],
            lr=c["lr"],
            lambda_rec=c["lambda_rec"],
            seed=c["seed"],
            d_steps_per_g_step=c["d_steps_per_g_step"],
            adversarial=c["adversarial"],
            loss_convention=c["loss_convention"],
            recon_mode=c["recon_mode"],
            label_smoothing=c["label_smoothing"],
            clip_norm=c["clip_norm"],
            eval_every=c["eval_every"],
            holdout_fraction=c["holdout_fraction"],
            model_name=c["model_name"],
            augment_enabled=c["augment"],
            augment=self.augment_policy(),
            net=self.net_config(num_classes, in_channels),
        )
