"""Plain-text experiment configs and registry manifests.

Config grammar: one ``key = value`` per line, ``#`` starts a comment, blank
lines are ignored. Values are parsed by the field's type: fractions accept
``n/d``, lists are whitespace-separated, ``a..b`` expands to an integer range.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .machine import AssemblyError, BuiltinMachine, Coin, MachineRegistry, assemble


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    registry: Optional[str] = None
    max_level: int = 6
    budget: Optional[int] = None
    lookahead: bool = True
    level: Optional[int] = None
    machine: int = 1
    input: str = ""
    game: str = "matching-pennies"
    discount: Fraction = Fraction(1, 2)
    agents: list = field(default_factory=lambda: ["fixed:aab", "fixed:a"])
    T: int = 300
    seed: int = 0
    seeds: list = field(default_factory=list)
    precision: Fraction = Fraction(1, 100)
    eps: Fraction = Fraction(1, 10)
    eps_T: Fraction = Fraction(1, 2)
    hell_weight: Fraction = Fraction(9, 10)
    random_prior: bool = True
    check_every: int = 0
    gap_depth: Optional[int] = None
    width_budget: Optional[Fraction] = None
    out_dir: str = field(default="out", metadata={"output": True})
    base_dir: str = field(default=".", metadata={"internal": True})

    def canonical(self, with_output: bool = True) -> str:
        rows = []
        for f in dataclasses.fields(self):
            if f.metadata.get("internal") or (f.metadata.get("output") and not with_output):
                continue
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = " ".join(map(str, v))
            rows.append(f"{f.name} = {v}")
        return "\n".join(rows) + "\n"

    @property
    def hash(self) -> str:
        # where results are written does not change them
        return hashlib.sha256(self.canonical(with_output=False).encode()).hexdigest()[:16]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _parse_int_list(text: str) -> list:
    out = []
    for tok in text.split():
        if ".." in tok:
            a, b = tok.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return out


def _convert(name: str, kind, text: str):
    text = text.strip()
    if kind in ("Optional[int]", "Optional[Fraction]", "Optional[str]") and text.lower() in ("", "none"):
        return None
    try:
        if kind in ("int", "Optional[int]"):
            return int(text)
        if kind in ("Fraction", "Optional[Fraction]"):
            return Fraction(text)
        if kind == "bool":
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind == "list":
            return _parse_int_list(text) if name == "seeds" else text.split()
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if not f.metadata.get("internal")}


def apply(config: ExperimentConfig, key: str, value: str) -> None:
    key = key.strip().replace("-", "_")
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(config, key, _convert(key, _FIELDS[key].type, value))


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    config = ExperimentConfig(base_dir=base_dir)
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = line.split("=", 1)
        try:
            apply(config, key, value)
        except ConfigError as err:
            raise ConfigError(f"line {n}: {err}") from None
    return config


def load_config(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(p.read_text(), str(p.parent))


# --------------------------------------------------------------------------
# registry manifests


def _coin_body(x, self_index):
    bit = yield Coin()
    return bit


def _silent_body(x, self_index):
    return None
    yield  # pragma: no cover - makes this a generator


BUILTINS = {
    "coin": lambda: BuiltinMachine("coin", _coin_body, 2, description="fair coin"),
    "silent": lambda: BuiltinMachine("silent", _silent_body, 1, description="never outputs"),
}


def load_registry(path: Path) -> MachineRegistry:
    """Manifest lines: ``program <path>`` or ``builtin <name>``; ``#`` comments."""
    if not path.is_file():
        raise ConfigError(f"registry manifest {path} does not exist")
    registry = MachineRegistry()
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, _, arg = line.partition(" ")
        arg = arg.strip()
        if kind == "program":
            src = path.parent / arg
            if not src.is_file():
                raise ConfigError(f"{path}:{n}: program file {src} does not exist")
            try:
                registry.register(assemble(src.read_text()))
            except AssemblyError as err:
                raise ConfigError(f"{src}: {err}") from None
        elif kind == "builtin":
            if arg not in BUILTINS:
                raise ConfigError(f"{path}:{n}: unknown builtin {arg!r}")
            registry.register(BUILTINS[arg]())
        else:
            raise ConfigError(f"{path}:{n}: expected 'program <path>' or 'builtin <name>'")
    return registry
