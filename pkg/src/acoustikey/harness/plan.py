from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .config import ConfigError, build_attack, build_channel, build_params, load_config, set_dotted

KINDS = ("session", "attack", "stream", "entropy", "matrix", "baseline")


@dataclass(frozen=True)
class ExperimentPlan:
    """A seeded Monte-Carlo campaign: config overrides, a sweep grid, and trials per cell.

    Trial ``t`` of cell ``c`` uses seed ``base_seed + c * trials + t``, so
    cells never share a seed stream.
    """

    name: str
    kind: str
    trials: int = 1
    base_seed: int = 0
    config: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output_csv: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"plan kind must be one of {KINDS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for key, values in self.sweep.items():
            if "." not in key:
                raise ConfigError(f"sweep key {key!r} must be section.key")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep {key!r} needs a non-empty list")

    def cells(self) -> list[dict]:
        keys = sorted(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]

    def cell_config(self, cell: dict, environ=None) -> dict:
        cfg = load_config(self.config, environ)
        for key, value in cell.items():
            cfg = set_dotted(cfg, key, value)
        return cfg

    def seed(self, cell_index: int, trial: int) -> int:
        return self.base_seed + cell_index * self.trials + trial

    def validate(self, environ=None) -> None:
        """Build every cell's configuration objects; raises ConfigError on the first bad one."""
        for cell in self.cells():
            cfg = self.cell_config(cell, environ)
            build_channel(cfg)
            build_params(cfg)
            build_attack(cfg)

    def with_overrides(self, trials: int | None = None, base_seed: int | None = None,
                       output_csv: str | None = None, kind: str | None = None) -> "ExperimentPlan":
        return ExperimentPlan(self.name, kind or self.kind, trials or self.trials,
                              self.base_seed if base_seed is None else base_seed,
                              self.config, self.sweep, self.options, output_csv or self.output_csv)

    def echo(self) -> dict:
        return {"name": self.name, "kind": self.kind, "trials": self.trials, "base_seed": self.base_seed,
                "config": self.config, "sweep": self.sweep, "options": self.options,
                "output_csv": self.output_csv}


def plan_from_dict(d: dict, source: str = "<dict>") -> ExperimentPlan:
    known = {"name", "kind", "trials", "base_seed", "config", "sweep", "options", "output"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{source}: unknown plan keys {sorted(extra)}")
    try:
        return ExperimentPlan(
            name=str(d.get("name", Path(source).stem)),
            kind=d.get("kind", "session"),
            trials=int(d.get("trials", 1)),
            base_seed=int(d.get("base_seed", 0)),
            config=d.get("config", {}),
            sweep=d.get("sweep", {}),
            options=d.get("options", {}),
            output_csv=d.get("output", {}).get("csv"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_plan(path) -> ExperimentPlan:
    p = Path(path)
    try:
        data = tomllib.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read plan {p}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return plan_from_dict(data, str(p))
