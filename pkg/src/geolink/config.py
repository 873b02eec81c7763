"""Pipeline configuration: flat key=value files overridden by CLI flags."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .model import Params

__all__ = ["ConfigError", "PipelineConfig", "load_config_file"]


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to exit code 1."""


@dataclass
class PipelineConfig:
    """Everything a batch run needs, validated up front."""

    workdir: str = "work"
    input_i: Optional[str] = None
    input_e: Optional[str] = None
    truth: Optional[str] = None
    alpha_secs: int = 1800
    lambda_mps: float = 42.0
    alibi_threshold: int = 0
    k: float = 1.0
    l: int = 1
    auto_kl: bool = False
    min_cell_edge_m: float = 10_000.0
    strip_fraction: float = 0.125
    place_bin_edge_m: float = 1_000.0
    tie_epsilon: float = 0.0
    radius_default_m: float = 500.0
    workers: int = 1
    seed: int = 0
    unweighted: bool = False
    forward_only: bool = False

    def to_params(self) -> Params:
        k = self.k
        if isinstance(k, float) and k.is_integer():
            k = int(k)
        try:
            return Params(
                alpha=self.alpha_secs,
                lambda_mps=self.lambda_mps,
                alibi_threshold=self.alibi_threshold,
                k=k,
                l=self.l,
                min_cell_edge=self.min_cell_edge_m,
                strip_fraction=self.strip_fraction,
                place_bin_edge=self.place_bin_edge_m,
                tie_epsilon=self.tie_epsilon,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> None:
        self.to_params()
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1: {self.workers}")
        if self.radius_default_m < 0:
            raise ConfigError(f"radius_default_m must be >= 0: {self.radius_default_m}")

    def echo(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, text: str, target_type: type) -> object:
    text = text.strip()
    if target_type is bool:
        low = text.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    try:
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return text


def load_config_file(path: str | Path, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Read a flat key=value file; later lines win over earlier ones."""
    cfg = base or PipelineConfig()
    known = {f.name: f for f in fields(PipelineConfig)}
    types = {
        "workdir": str, "input_i": str, "input_e": str, "truth": str,
        "alpha_secs": int, "lambda_mps": float, "alibi_threshold": int,
        "k": float, "l": int, "auto_kl": bool,
        "min_cell_edge_m": float, "strip_fraction": float,
        "place_bin_edge_m": float, "tie_epsilon": float,
        "radius_default_m": float, "workers": int, "seed": int,
        "unweighted": bool, "forward_only": bool,
    }
    updates: dict[str, object] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            updates[key] = _coerce(key, value, types[key])
    return replace(cfg, **updates)
