"""Experiment configuration: flat ``section.key = value`` text files.

Example::

    # bottleneck comparison
    env.maze = bottleneck
    algo.variant = upside
    algo.t_max = 500000
    run.seeds = 0,1,2
    eval.finetune_budget = 50000
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from . import env as maze
from .algo import ConfigError, UpsideConfig

RUN_KEYS = {"seeds", "out"}
EVAL_DEFAULTS = {
    "buckets": 10,
    "finetune_budget": 50_000,
    "goal_buckets": 14,
    "goals_per_bucket": 3,
    "goal_seed": 0,
    "explore_episodes": 10,
    "reach_depth": 0,          # 0 keeps every goal; d keeps goals within d skills of s0
}


def parse_value(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(s.replace("_", "")) if cast is int else cast(s)
        except ValueError:
            pass
    return s


def parse_seeds(value) -> list[int]:
    if isinstance(value, int):
        return [value]
    try:
        seeds = [int(x) for x in str(value).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {value!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def parse_text(text: str) -> dict[str, dict]:
    """``{section: {key: value}}`` from the key=value format."""
    out: dict[str, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} has no section")
        section, name = key.split(".", 1)
        out.setdefault(section, {})[name] = parse_value(value)
    return out


@dataclass
class ExperimentConfig:
    maze: str = "bottleneck"
    algo: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))

    def upside_config(self) -> UpsideConfig:
        return UpsideConfig.from_dict(self.algo)

    def spec(self) -> maze.MazeSpec:
        try:
            return maze.load_maze(self.maze)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_sections(cls, sections: dict) -> "ExperimentConfig":
        cfg = cls()
        for section, items in sections.items():
            if section == "env":
                for k, v in items.items():
                    if k != "maze":
                        raise ConfigError(f"unknown key env.{k}")
                    cfg.maze = str(v)
            elif section == "algo":
                known = {f.name for f in fields(UpsideConfig)}
                for k in items:
                    if k not in known:
                        raise ConfigError(f"unknown key algo.{k}")
                cfg.algo.update(items)
            elif section == "run":
                for k, v in items.items():
                    if k not in RUN_KEYS:
                        raise ConfigError(f"unknown key run.{k}")
                    if k == "seeds":
                        cfg.seeds = parse_seeds(v)
                    else:
                        cfg.out = str(v)
            elif section == "eval":
                for k, v in items.items():
                    if k not in EVAL_DEFAULTS:
                        raise ConfigError(f"unknown key eval.{k}")
                    cfg.eval[k] = v
            else:
                raise ConfigError(f"unknown section {section!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} not found")
        return cls.from_sections(parse_text(p.read_text()))

    def validate(self) -> None:
        self.spec()
        self.upside_config()
        if not self.seeds:
            raise ConfigError("seed list is empty")
