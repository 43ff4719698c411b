"""Run configuration: flat ``section.key = value`` files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

from .model import C_STANDARD, EpileptorParams


class ConfigError(ValueError):
    """Malformed file, unknown key or invalid value."""


@dataclass
class OutputSection:
    c: Tuple[float, ...] = tuple(C_STANDARD)


@dataclass
class FeedbackSection:
    u_star: float = -0.8
    k: float = 1.0


@dataclass
class SolverSection:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 1.0
    max_steps: int = 20_000_000


@dataclass
class SimulateSection:
    mode: str = "autonomous"  # or "closed_loop"
    u: float = 0.0  # constant input in autonomous mode
    x0: Tuple[float, ...] = (0.0, -5.0, -5.0, 0.0, 0.0, 3.0)
    t_end: float = 4 * 2857.0
    t_min: float = 0.0  # transient discarded by the episode detector
    offset_radius: float = 0.0  # closed loop: random start this far from x*


@dataclass
class SweepSection:
    u_min: float = -3.0
    u_max: float = 0.5
    k_min: float = 0.0
    k_max: float = 4.0
    step: float = 0.05
    anchor_u: float = -0.8


@dataclass
class DesignSection:
    mode: str = "output"  # or "sparse_lyapunov"
    loss: str = "l1:1,0,-1,0,0,0"
    u_star: float = -2.0
    delta: float = 1e-6
    eps: float = 1e-7
    lyapunov_eps: float = 1e-4


@dataclass
class RoaSection:
    n_samples: int = 2 ** 17
    n_restarts: int = 100
    rel_tol: float = 1e-3
    rho: float = 0.0  # > 0 checks this single level instead of searching


@dataclass
class VerifySection:
    passivity: bool = False  # also test the Lyapunov preset as a passivity certificate


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 0  # 0 means EPILAB_THREADS or the CPU count
    preset: str = ""


@dataclass
class RunConfig:
    model: EpileptorParams = field(default_factory=EpileptorParams)
    output: OutputSection = field(default_factory=OutputSection)
    feedback: FeedbackSection = field(default_factory=FeedbackSection)
    solver: SolverSection = field(default_factory=SolverSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    design: DesignSection = field(default_factory=DesignSection)
    roa: RoaSection = field(default_factory=RoaSection)
    verify: VerifySection = field(default_factory=VerifySection)
    run: RunSection = field(default_factory=RunSection)

    # sections that do not change numerical results
    NON_SEMANTIC = (("run", "threads"),)

    def items(self):
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                yield f"{sec.name}.{f.name}", getattr(obj, f.name)

    def set(self, key: str, raw) -> None:
        section, _, name = key.partition(".")
        if not name or section not in {f.name for f in fields(self)}:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        ftypes = {f.name: f.type for f in fields(obj)}
        if name not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        value = _coerce(key, raw, getattr(obj, name))
        try:
            if isinstance(obj, EpileptorParams):  # frozen, and validates on construction
                setattr(self, section, dataclasses.replace(obj, **{name: value}))
            else:
                setattr(obj, name, value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    def hash(self) -> str:
        """Digest of every result-affecting field."""
        skip = {f"{a}.{b}" for a, b in self.NON_SEMANTIC}
        canon = "\n".join(f"{k}={_canon(v)}" for k, v in self.items() if k not in skip)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _canon(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, tuple):
        return "(" + ",".join(_canon(float(x)) for x in v) + ")"
    return repr(v)


def _coerce(key, raw, current):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(current, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected a boolean, got {text!r}")
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(float(text)) if float(text).is_integer() else int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            vals = tuple(float(v) for v in text.strip("[]()").split(","))
            if len(vals) != len(current):
                raise ValueError(f"expected {len(current)} values, got {len(vals)}")
            return vals
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        try:
            cfg.set(key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.items():
        if isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
