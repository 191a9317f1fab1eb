"""Run configuration: defaults, validation, and TOML round-tripping.

The default values reproduce the reference operating point: 4096
keypoints, 640-dimensional features, 256-dimensional descriptors with 64
clusters, a 50-scan exclusion window, a 4 m positive radius, Berger-Parker
confidence weighting, and the standard loss weights with margin 0.5.

Config files are TOML with a ``[padloc]`` table (loss weights in
``[padloc.loss]``); ``PADLOC_SEED`` in the environment overrides the seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .losses import LossWeights
from .matching import parse_confidence_metric

SEED_ENV_VAR = "PADLOC_SEED"

MODES = ("pure-attention", "full-tel")


class ConfigError(ValueError):
    """Invalid configuration content (CLI exit code 3)."""


@dataclass(frozen=True)
class RunConfig:
    """Effective settings for one pipeline run."""

    dataset: str | None = None
    n_keypoints: int = 4096
    f: int = 640
    g: int = 256
    k: int = 64
    heads: int = 4
    window: int = 50
    positive_radius: float = 4.0
    diversity: str = "berger-parker"
    mode: str = "pure-attention"
    seed: int = 0
    feature_radius: float = 2.0
    include_xyz: bool = False
    feature_weights: str | None = None
    encoder_weights: str | None = None
    vlad_weights: str | None = None
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if self.n_keypoints < 1:
            raise ConfigError("n_keypoints must be >= 1")
        if self.f < 8:
            raise ConfigError("feature dimension f must be >= 8")
        if self.g < 4 or self.k < 1:
            raise ConfigError("descriptor length g must be >= 4 and clusters k >= 1")
        if self.heads < 1 or self.f % self.heads != 0:
            raise ConfigError("heads must be >= 1 and divide f")
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        if self.positive_radius <= 0 or self.feature_radius <= 0:
            raise ConfigError("radii must be > 0")
        object.__setattr__(self, "mode", self.mode.lower())
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        try:
            object.__setattr__(self, "diversity", parse_confidence_metric(self.diversity))
        except ValueError as err:
            raise ConfigError(str(err)) from err

    # -- TOML ---------------------------------------------------------------

    def to_toml(self) -> str:
        lines = ["[padloc]"]
        for f_ in fields(self):
            if f_.name == "loss":
                continue
            value = getattr(self, f_.name)
            if value is None:
                continue
            lines.append(f"{f_.name} = {_toml_value(value)}")
        lines.append("")
        lines.append("[padloc.loss]")
        for f_ in fields(LossWeights):
            lines.append(f"{f_.name} = {_toml_value(getattr(self.loss, f_.name))}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_toml(text: str) -> "RunConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"invalid TOML: {err}") from err
        if "padloc" not in data:
            raise ConfigError("config file is missing the [padloc] table")
        table = dict(data["padloc"])
        loss_table = table.pop("loss", {})

        known = {f_.name for f_ in fields(RunConfig)} - {"loss"}
        unknown = set(table) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        known_loss = {f_.name for f_ in fields(LossWeights)}
        unknown_loss = set(loss_table) - known_loss
        if unknown_loss:
            raise ConfigError(f"unknown loss keys: {sorted(unknown_loss)}")
        try:
            return RunConfig(loss=LossWeights(**loss_table), **table)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    @staticmethod
    def load(path) -> "RunConfig":
        from pathlib import Path
        return RunConfig.from_toml(Path(path).read_text())

    def save(self, path) -> None:
        from pathlib import Path
        Path(path).write_text(self.to_toml())

    def with_env_overrides(self) -> "RunConfig":
        """Apply environment overrides (currently the seed)."""
        raw = os.environ.get(SEED_ENV_VAR)
        if raw is None:
            return self
        try:
            return replace(self, seed=int(raw))
        except ValueError as err:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from err


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)  # escaping compatible with TOML basic strings
    raise ConfigError(f"cannot serialize config value {value!r}")
