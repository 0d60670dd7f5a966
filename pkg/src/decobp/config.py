"""Declarative experiment configs, schema validation and run manifests.

A config is one JSON file that fully determines a run: environment, type-2
law, horizons, replicate counts, estimator, master seed and output paths.
Unknown keys are rejected at every level.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import jsonschema

from .environment import EnvironmentSpec, InvalidSpecError, env_from_dict
from .offspring import LawError, OffspringLaw2, law2_from_dict

SCHEMA_VERSION = 1

def _tagged(tag: str, variants: dict[str, dict]) -> dict:
    """Object schema dispatching on ``tag`` so errors point at the right variant."""
    branches = []
    for value, body in variants.items():
        props = {tag: {"const": value}, **body.get("properties", {})}
        then = {"properties": props, "additionalProperties": False}
        if body.get("required"):
            then["required"] = body["required"]
        branches.append({"if": {"properties": {tag: {"const": value}}}, "then": then})
    return {
        "type": "object",
        "required": [tag],
        "properties": {tag: {"enum": list(variants)}},
        "allOf": branches,
    }


_NONNEG = {"type": "number", "minimum": 0}
_UNIT_OPEN = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}

_UNIVARIATE = _tagged(
    "kind",
    {
        "geometric": {"properties": {"mean": _NONNEG}, "required": ["mean"]},
        "poisson": {"properties": {"mean": _NONNEG}, "required": ["mean"]},
        "bernoulli": {"properties": {"p": {"type": "number", "minimum": 0, "maximum": 1}}, "required": ["p"]},
        "deterministic": {"properties": {"value": {"type": "integer", "minimum": 0}}, "required": ["value"]},
        "finite_table": {
            "properties": {
                "values": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "probs": {"type": "array", "items": _NONNEG, "minItems": 1},
            },
            "required": ["values", "probs"],
        },
        "linear_fractional": {"properties": {"b": _NONNEG, "p": _UNIT_OPEN}, "required": ["b", "p"]},
    },
)

_POINT = {
    "type": "array",
    "prefixItems": [
        {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
        _NONNEG,
    ],
    "minItems": 2,
    "maxItems": 2,
}

_LAW1 = _tagged(
    "family",
    {
        "product": {"properties": {"xi1": _UNIVARIATE, "xi2": _UNIVARIATE}, "required": ["xi1", "xi2"]},
        "finite_table": {"properties": {"support": {"type": "array", "items": _POINT, "minItems": 1}}, "required": ["support"]},
        "linear_fractional": {"properties": {"b": _NONNEG, "p": _UNIT_OPEN, "xi2": _UNIVARIATE}, "required": ["b", "p", "xi2"]},
    },
)

_PROBS = {"type": "array", "items": _NONNEG, "minItems": 1}
_LAWS = {"type": "array", "items": _LAW1, "minItems": 1}

_ENV = _tagged(
    "kind",
    {
        "constant": {"properties": {"law": _LAW1}, "required": ["law"]},
        "iid": {"properties": {"states": _LAWS, "probs": _PROBS}, "required": ["states", "probs"]},
        "markov": {
            "properties": {"states": _LAWS, "transition": {"type": "array", "items": _PROBS, "minItems": 1}},
            "required": ["states", "transition"],
        },
        "two_state": {
            "properties": {
                "pi1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "d": {"type": "number", "exclusiveMinimum": 0},
                "laws": {"type": "array", "items": _LAW1, "minItems": 2, "maxItems": 2},
            },
            "required": ["pi1", "d", "laws"],
        },
    },
)

# a named critical law, or any univariate law (criticality is checked on load)
_TYPE2 = {
    "type": "object",
    "if": {"properties": {"kind": {"enum": ["geometric_mean_one", "poisson_mean_one", "linear_fractional_mean_one"]}}},
    "then": {"properties": {"kind": {}}, "additionalProperties": False},
    "else": _UNIVARIATE,
}

_POS_INT = {"type": "integer", "minimum": 1}
_INT_LIST = {"type": "array", "items": _POS_INT, "minItems": 1}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "spec": _ENV,
        "type2": _TYPE2,
        "horizons": _INT_LIST,
        "replicates": _POS_INT,
        "estimator": {"enum": ["naive", "rao_blackwell"]},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": _POS_INT,
        "outputs": {
            "type": "object",
            "properties": {
                "dir": {"type": "string"},
                "survival_csv": {"type": "string"},
                "tail_csv": {"type": "string"},
                "manifest": {"type": "string"},
                "plot": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "tail": {
            "type": "object",
            "properties": {
                "statistics": {
                    "type": "array",
                    "items": {"enum": ["S_T", "W_T", "S1_T", "S2_T"]},
                    "minItems": 1,
                    "uniqueItems": True,
                },
                "replicates": _POS_INT,
                "t_cap": _POS_INT,
                "stop_at": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
            "required": ["statistics", "replicates"],
            "additionalProperties": False,
        },
        "embedded": {
            "type": "object",
            "properties": {"cycle_counts": _INT_LIST, "replicates": _POS_INT, "cycles": _POS_INT},
            "required": ["cycle_counts", "replicates"],
            "additionalProperties": False,
        },
    },
    "required": ["spec", "type2", "horizons", "replicates", "master_seed"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid config; ``field`` is a dotted path and ``line`` a 1-based line or None."""

    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _locate(text: str | None, path: list) -> int | None:
    """Best-effort line of the JSON element at ``path`` in ``text``."""
    if text is None:
        return None
    pos = 0
    for part in path:
        if isinstance(part, int):
            continue
        m = re.compile(r'"' + re.escape(str(part)) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _dotted(path) -> str:
    return ".".join(str(p) for p in path)


@dataclass(frozen=True)
class TailConfig:
    statistics: tuple[str, ...]
    replicates: int
    t_cap: int = 1_000_000
    stop_at: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "statistics": list(self.statistics),
            "replicates": self.replicates,
            "t_cap": self.t_cap,
            "stop_at": self.stop_at,
        }


@dataclass(frozen=True)
class EmbeddedConfig:
    cycle_counts: tuple[int, ...]
    replicates: int
    cycles: int = 1_000_000

    def to_dict(self) -> dict[str, Any]:
        return {"cycle_counts": list(self.cycle_counts), "replicates": self.replicates, "cycles": self.cycles}


@dataclass(frozen=True)
class ExperimentConfig:
    spec: EnvironmentSpec
    type2: OffspringLaw2
    horizons: tuple[int, ...]
    replicates: int
    master_seed: int
    estimator: str = "rao_blackwell"
    workers: int = 1
    name: str = ""
    description: str = ""
    outputs: dict = field(default_factory=dict)
    tail: TailConfig | None = None
    embedded: EmbeddedConfig | None = None

    def __post_init__(self):
        h = list(self.horizons)
        if any(b <= a for a, b in zip(h, h[1:])):
            raise ConfigError("horizons must be strictly increasing", "horizons")
        if self.embedded is not None:
            r = list(self.embedded.cycle_counts)
            if any(b <= a for a, b in zip(r, r[1:])):
                raise ConfigError("cycle counts must be strictly increasing", "embedded.cycle_counts")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "spec": self.spec.to_dict(),
            "type2": self.type2.to_dict(),
            "horizons": list(self.horizons),
            "replicates": self.replicates,
            "estimator": self.estimator,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "outputs": dict(self.outputs),
        }
        if self.tail is not None:
            d["tail"] = self.tail.to_dict()
        if self.embedded is not None:
            d["embedded"] = self.embedded.to_dict()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON form; ``workers`` and outputs excluded.

        Neither affects any result, so configs differing only there share a hash.
        """
        d = self.to_dict()
        d.pop("workers")
        d.pop("outputs")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)


def validate(data: Any, text: str | None = None) -> None:
    """Raise ConfigError for the most relevant schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if err is None:
        return
    path = list(err.absolute_path)
    extra = re.search(r"'([^']+)' (?:was|were) unexpected", err.message)
    where = path + [extra.group(1)] if extra else path
    raise ConfigError(err.message, _dotted(where), _locate(text, where))


def from_dict(data: dict[str, Any], text: str | None = None) -> ExperimentConfig:
    validate(data, text)
    try:
        spec = env_from_dict(data["spec"])
    except (InvalidSpecError, LawError, ValueError) as exc:
        raise ConfigError(str(exc), "spec", _locate(text, ["spec"])) from exc
    try:
        type2 = law2_from_dict(data["type2"])
    except (LawError, ValueError) as exc:
        raise ConfigError(str(exc), "type2", _locate(text, ["type2"])) from exc
    tail = None
    if "tail" in data:
        t = data["tail"]
        tail = TailConfig(tuple(t["statistics"]), int(t["replicates"]), int(t.get("t_cap", 1_000_000)), t.get("stop_at"))
    embedded = None
    if "embedded" in data:
        e = data["embedded"]
        embedded = EmbeddedConfig(tuple(int(r) for r in e["cycle_counts"]), int(e["replicates"]), int(e.get("cycles", 1_000_000)))
    try:
        return ExperimentConfig(
            spec=spec,
            type2=type2,
            horizons=tuple(int(n) for n in data["horizons"]),
            replicates=int(data["replicates"]),
            master_seed=int(data["master_seed"]),
            estimator=data.get("estimator", "rao_blackwell"),
            workers=int(data.get("workers", 1)),
            name=data.get("name", ""),
            description=data.get("description", ""),
            outputs=dict(data.get("outputs", {})),
            tail=tail,
            embedded=embedded,
        )
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field, _locate(text, exc.field.split("."))) from None


def loads(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, "", exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "", 1)
    return from_dict(data, text)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


SHIPPED = ("V1", "V2", "V3", "V3_mixed", "V4_kappa1", "V4_kappa2", "V5", "V6")


def shipped_config(name: str) -> ExperimentConfig:
    """Load one of the verification configs bundled with the package."""
    if name not in SHIPPED:
        raise ConfigError(f"unknown shipped config {name!r}; choose from {', '.join(SHIPPED)}")
    text = resources.files("decobp.specs").joinpath(f"{name}.json").read_text()
    return loads(text)


def tool_version() -> str:
    from importlib import metadata

    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    master_seed: int
    command: str
    results: list
    censoring: dict
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "master_seed": self.master_seed,
            "command": self.command,
            "results": self.results,
            "censoring": self.censoring,
            "wall_time": self.wall_time,
        }

    def reproducible_part(self) -> dict[str, Any]:
        d = self.to_dict()
        d.pop("wall_time")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))
