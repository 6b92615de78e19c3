"""``key = value`` experiment configuration files."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "baseline"
    weighting: str = "OPT"
    rom_size: int = 12
    epochs: int = 20000
    repetitions: int = 30
    seed: int = 0
    n_interior: Optional[int] = None   # auto: 30000 without data, 15000 with data
    n_boundary: int = 3000
    n_data_t: int = 150
    n_data_xi: int = 100
    fem_nodes: int = 3000
    fem_steps: int = 3000
    safety_factor: float = 1.0
    validation_grid: int = 256
    log_stride: int = 10
    output_dir: str = "out"
    learning_rate: float = 1e-3
    opt_reference: str = "exact"

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)


KEY_HELP = {
    "experiment": "baseline | exact_data | rom_data | rom_data_es",
    "weighting": "EQUAL | LRA | OPT",
    "rom_size": "reduced basis size n for ROM experiments",
    "epochs": "ADAM steps per run",
    "repetitions": "independently seeded runs (seeds seed..seed+r-1)",
    "seed": "base seed",
    "n_interior": "interior collocation points (auto: 30000 baseline, 15000 with data)",
    "n_boundary": "initial/boundary points, split in thirds",
    "n_data_t": "data-grid times",
    "n_data_xi": "data-grid spatial nodes",
    "fem_nodes": "FEM nodes in space",
    "fem_steps": "FEM time levels",
    "safety_factor": "multiplier (>= 1) on the ROM error certificate during training",
    "validation_grid": "validation grid size per axis",
    "log_stride": "epochs between logged rows",
    "output_dir": "directory for all outputs",
    "learning_rate": "ADAM step size",
    "opt_reference": "exact | surrogate: reference used for OPT weights",
}


def _format_default(value) -> str:
    return "auto" if value is None else str(value)


def describe_keys() -> str:
    defaults = ExperimentConfig()
    lines = ["configuration keys (key = value, '#' starts a comment):"]
    for name, value in defaults.items():
        lines.append(f"  {name:<16} default {_format_default(value):<10} {KEY_HELP[name]}")
    return "\n".join(lines)


def _convert(name: str, raw: str, lineno: int):
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    try:
        if name == "n_interior" and raw.lower() == "auto":
            return None
        if "int" in str(kind):
            value = int(raw)
            if value < 0:
                raise ValueError("must be nonnegative")
            return value
        if "float" in str(kind):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: invalid value {raw!r} for {name}: {exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def explicit_keys(text: str) -> set:
    keys = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if "=" in line:
            keys.add(line.split("=", 1)[0].strip())
    return keys


def format_config(config: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format_default(v)}\n" for k, v in config.items())
