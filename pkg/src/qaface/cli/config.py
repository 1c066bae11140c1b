"""Line-oriented run configuration.

Each non-blank line is ``section.key = value``; ``#`` starts a comment.
Tuples are comma-separated. Sections mirror the dataclasses they fill:

    data.*       SyntheticDatasetSpec
    train.*      TrainConfig scalars (margin and injection have their own)
    margin.*     MarginParams
    injection.*  InjectionParams
    quality.*    alpha, orientation (EMA of feature magnitudes)
    eval.*       EvalConfig
    drift.*      DriftConfig scalars
    output.*     dir
    run.seed     single seed; fans out to data and train seeds
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from ..injection import InjectionParams
from ..losses import MarginParams
from ..simulator.data import SyntheticDatasetSpec
from ..simulator.experiments import DriftConfig, EvalConfig
from ..simulator.train import TrainConfig


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownKey(ConfigError):
    def __init__(self, key: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown key {key!r}{where}")
        self.key = key


class InvalidValue(ConfigError):
    def __init__(self, key: str, value: str, constraint: str):
        super().__init__(f"invalid value {value!r} for {key}: {constraint}")
        self.key = key
        self.value = value
        self.constraint = constraint


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


@dataclass(frozen=True)
class QualitySection:
    alpha: float = 0.99
    orientation: str = "batch"


@dataclass(frozen=True)
class RunSection:
    seed: int = 0


# section name -> (dataclass, keys excluded from the flat section)
_SECTIONS = {
    "data": (SyntheticDatasetSpec, {"seed"}),
    "train": (TrainConfig, {"margin", "injection", "ema_alpha", "ema_orientation", "seed"}),
    "margin": (MarginParams, set()),
    "injection": (InjectionParams, set()),
    "quality": (QualitySection, set()),
    "eval": (EvalConfig, set()),
    "drift": (DriftConfig, {"margin"}),
    "output": (OutputConfig, set()),
    "run": (RunSection, set()),
}


def _defaults() -> dict[str, dict]:
    out = {}
    for name, (cls, skip) in _SECTIONS.items():
        inst = cls()
        out[name] = {f.name: getattr(inst, f.name) for f in dataclasses.fields(cls)
                     if f.name not in skip}
    return out


def _convert(key: str, raw: str, default):
    """Coerce ``raw`` to the type of ``default``."""
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw, 10)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw.strip() in ("", "()"):
                return ()
            proto = default[0] if default else 0
            parts = [p.strip() for p in raw.split(",")]
            conv = int if isinstance(proto, int) and not isinstance(proto, bool) else float
            return tuple(conv(p) for p in parts)
        return raw
    except ValueError:
        raise InvalidValue(key, raw, f"expected {type(default).__name__}") from None


@dataclass
class RunConfig:
    data: SyntheticDatasetSpec
    train: TrainConfig
    eval: EvalConfig
    drift: DriftConfig
    output: OutputConfig
    seed: int
    values: dict[str, object] = field(default_factory=dict)  # flat "section.key" view
    provenance: dict[str, str] = field(default_factory=dict)  # "default" / "file" / "override"

    def canonical_text(self) -> str:
        """Every value, sorted, one per line; the basis of the config hash."""
        return "".join(f"{k} = {self.values[k]!r}\n" for k in sorted(self.values))

    def config_hash(self, exclude=("train.epochs", "output.dir")) -> str:
        """sha256 of the canonical text. The epoch budget and output
        directory are left out so a run can be extended or moved."""
        text = "".join(f"{k} = {self.values[k]!r}\n" for k in sorted(self.values)
                       if k not in exclude)
        return hashlib.sha256(text.encode()).hexdigest()


def _build(values: dict[str, dict], provenance: dict[str, str]) -> RunConfig:
    seed = values["run"]["seed"]
    try:
        margin = MarginParams(**values["margin"])
        injection = InjectionParams(**values["injection"])
        data = SyntheticDatasetSpec(**values["data"], seed=seed)
        train = TrainConfig(**values["train"], margin=margin, injection=injection,
                            ema_alpha=values["quality"]["alpha"],
                            ema_orientation=values["quality"]["orientation"], seed=seed)
        ev = EvalConfig(**values["eval"])
        drift = DriftConfig(**values["drift"])
        out = OutputConfig(**values["output"])
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise InvalidValue(_guess_key(str(exc), provenance), "", str(exc)) from None
    flat = {f"{s}.{k}": v for s, sec in values.items() for k, v in sec.items()}
    return RunConfig(data, train, ev, drift, out, seed, flat, dict(provenance))


def _guess_key(message: str, provenance: dict[str, str]) -> str:
    explicit = [k for k, p in provenance.items() if p != "default"]
    for k in explicit:
        if k.split(".", 1)[1] in message:
            return k
    return ",".join(explicit) or "<config>"


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse config text; ``overrides`` ("section.key" -> raw string) win."""
    values = _defaults()
    provenance = {f"{s}.{k}": "default" for s, sec in values.items() for k in sec}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ParseError("expected 'section.key = value'", lineno, col)
        lhs, rhs = body.split("=", 1)
        key, raw = lhs.strip(), rhs.strip()
        if not key:
            raise ParseError("missing key", lineno, 1)
        if "." not in key or any(not p.isidentifier() for p in key.split(".", 1)):
            raise ParseError(f"malformed key {key!r}", lineno, line.index(key[0]) + 1)
        if not raw:
            raise ParseError("missing value", lineno, len(lhs) + 2)
        if key in seen:
            raise ParseError(f"duplicate key {key!r} (first on line {seen[key]})", lineno, 1)
        seen[key] = lineno
        _assign(values, provenance, key, raw, "file", lineno)
    for key, raw in (overrides or {}).items():
        _assign(values, provenance, key, str(raw), "override", None)
    return _build(values, provenance)


def _assign(values, provenance, key, raw, origin, lineno):
    section, name = key.split(".", 1)
    if section not in values or name not in values[section]:
        raise UnknownKey(key, lineno)
    values[section][name] = _convert(key, raw, values[section][name])
    provenance[key] = origin


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> RunConfig:
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides)

