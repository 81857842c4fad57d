"""Experiment configuration: flat key = value files plus CLI overrides.

Config files are UTF-8 text, one ``key = value`` per line, ``#`` comments
and blank lines allowed.  Keys are validated against the scenario's schema;
unknown keys are errors.  Lists are comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..engine import DEFAULT_CAP, DEFAULT_DT
from ..errors import ConfigError


def _int(s: str) -> int:
    return int(s, 0)


def _float(s: str) -> float:
    return float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _str(s: str) -> str:
    return s


@dataclass(frozen=True)
class Field:
    cast: Callable[[str], Any]
    default: Any
    help: str = ""


COMMON_FIELDS: dict[str, Field] = {
    "replicas": Field(_int, None, "number of independent replicas"),
    "seed": Field(_int, 1, "master seed (u64)"),
    "threads": Field(_int, 1, "worker processes"),
    "dt": Field(_float, DEFAULT_DT, "selection enforcement step"),
    "cap": Field(_int, DEFAULT_CAP, "hard population cap"),
    "out": Field(_str, "out", "output directory"),
}


@dataclass
class ExperimentConfig:
    scenario: str
    params: dict = field(default_factory=dict)
    replicas: int = 1
    master_seed: int = 1
    threads: int = 1
    dt: float = DEFAULT_DT
    cap: int = DEFAULT_CAP
    out_dir: str = "out"

    def echo(self) -> dict:
        """Resolved configuration embedded in outputs.  Execution details
        (worker count, output path) and internal keys are excluded so
        results are identical for any scheduling."""
        d = {"scenario": self.scenario, "replicas": self.replicas,
             "seed": self.master_seed, "dt": self.dt, "cap": self.cap}
        d.update({k: v for k, v in sorted(self.params.items())
                  if not k.startswith("_")})
        return d


def parse_config_file(path: str | Path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def build_config(scenario_name: str, schema: dict[str, Field],
                 file_kv: dict[str, str] | None = None,
                 overrides: dict[str, Any] | None = None,
                 default_replicas: int = 1) -> ExperimentConfig:
    """Merge defaults, config-file values and CLI overrides into a typed
    ExperimentConfig, rejecting unknown keys."""
    file_kv = dict(file_kv or {})
    known = {**COMMON_FIELDS, **schema}
    values: dict[str, Any] = {k: f.default for k, f in known.items()}
    values["replicas"] = default_replicas

    for key, raw in file_kv.items():
        if key not in known:
            raise ConfigError(
                f"unknown key {key!r} for scenario {scenario_name!r} "
                f"(known: {', '.join(sorted(known))})")
        try:
            values[key] = known[key].cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc

    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val

    if values["replicas"] is None or values["replicas"] < 1:
        raise ConfigError("replicas must be >= 1")
    if values["seed"] < 0 or values["seed"] >= (1 << 64):
        raise ConfigError("seed must be a u64")
    if values["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if values["dt"] <= 0:
        raise ConfigError("dt must be positive")

    params = {k: values[k] for k in schema}
    return ExperimentConfig(
        scenario=scenario_name,
        params=params,
        replicas=values["replicas"],
        master_seed=values["seed"],
        threads=values["threads"],
        dt=values["dt"],
        cap=values["cap"],
        out_dir=values["out"],
    )
