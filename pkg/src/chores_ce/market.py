"""Chores market instances, random generators and JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DISTRIBUTIONS = ("uniform", "lognormal", "exponential", "integer")

_ALIASES = {
    "uniform01": "uniform",
    "uniform": "uniform",
    "logstdnormal": "lognormal",
    "lognormal": "lognormal",
    "log-normal": "lognormal",
    "exponential1": "exponential",
    "exponential": "exponential",
    "integer1to1000": "integer",
    "integer": "integer",
}

RNG_ALGORITHM = "numpy.random.PCG64"


class MarketError(ValueError):
    """Base class for invalid market data."""


class NonPositiveEntry(MarketError):
    pass


class DimensionMismatch(MarketError):
    pass


class EmptyMarket(MarketError):
    pass


class ParseError(MarketError):
    pass


@dataclass(frozen=True, eq=False)
class MarketInstance:
    """A chores market: ``n`` agents, ``m`` chores.

    ``d[i, j]`` is agent i's per-unit disutility for chore j and ``B[i]`` the
    amount agent i must earn. Arrays are copied and frozen on construction.
    """

    d: np.ndarray
    B: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        B = np.array(self.B, dtype=float)
        if d.ndim != 2:
            raise DimensionMismatch(f"d must be a matrix, got shape {d.shape}")
        if B.ndim != 1:
            raise DimensionMismatch(f"B must be a vector, got shape {B.shape}")
        if d.shape[0] == 0 or d.shape[1] == 0:
            raise EmptyMarket("market needs at least one agent and one chore")
        if B.shape[0] != d.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} entries for {d.shape[0]} agents")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(B))):
            raise NonPositiveEntry("entries must be finite")
        if np.any(d <= 0):
            raise NonPositiveEntry("all disutilities must be > 0")
        if np.any(B <= 0):
            raise NonPositiveEntry("all budgets must be > 0")
        d.setflags(write=False)
        B.setflags(write=False)
        log_d = np.log(d)
        log_d.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "log_d", log_d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def m(self) -> int:
        return self.d.shape[1]

    @property
    def total_budget(self) -> float:
        return float(self.B.sum())

    def __eq__(self, other):
        if not isinstance(other, MarketInstance):
            return NotImplemented
        return np.array_equal(self.d, other.d) and np.array_equal(self.B, other.B)

    __hash__ = None


def validate_instance(d, B, n=None, m=None, meta=None) -> MarketInstance:
    """Build a :class:`MarketInstance`, checking declared sizes if given."""
    if n is not None and int(n) <= 0 or m is not None and int(m) <= 0:
        raise EmptyMarket(f"n={n}, m={m}")
    try:
        d_arr = np.array(d, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch(f"d is not a rectangular numeric matrix: {exc}") from exc
    if d_arr.ndim == 2 and (
        (n is not None and d_arr.shape[0] != int(n)) or (m is not None and d_arr.shape[1] != int(m))
    ):
        raise DimensionMismatch(f"d has shape {d_arr.shape}, declared ({n}, {m})")
    return MarketInstance(d_arr, B, meta=dict(meta or {}))


@dataclass(frozen=True)
class GeneratorConfig:
    distribution: str = "uniform"
    n: int = 10
    m: int = 10
    seed: int = 0
    condition_cap: float = 100.0

    def __post_init__(self):
        key = self.distribution.lower().replace("_", "")
        if key not in _ALIASES:
            raise ValueError(f"unknown distribution {self.distribution!r}; pick one of {DISTRIBUTIONS}")
        object.__setattr__(self, "distribution", _ALIASES[key])
        if self.n < 1 or self.m < 1:
            raise EmptyMarket(f"n={self.n}, m={self.m}")
        if not self.condition_cap >= 1:
            raise ValueError("condition_cap must be >= 1")

    def to_dict(self) -> dict:
        return {
            "distribution": self.distribution,
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
            "condition_cap": self.condition_cap,
            "rng": RNG_ALGORITHM,
        }


def truncate_condition_number(values, cap: float) -> np.ndarray:
    """Clamp the lower tail so that ``max/min <= cap``; the maximum is kept."""
    values = np.asarray(values, dtype=float)
    if np.any(~(values > 0)):
        raise NonPositiveEntry("truncation needs strictly positive values")
    if not cap >= 1:
        raise ValueError("cap must be >= 1")
    top = values.max()
    out = np.maximum(values, top / cap)
    if cap == 1:
        out[:] = top
    return out


def _draw(rng: np.random.Generator, dist: str, size) -> np.ndarray:
    if dist == "uniform":
        # 1 - U[0, 1) lies in (0, 1]
        return 1.0 - rng.random(size)
    if dist == "lognormal":
        return np.exp(rng.standard_normal(size))
    if dist == "exponential":
        out = rng.exponential(1.0, size)
        # an exact zero has probability ~0 but would break positivity
        while np.any(out <= 0):
            bad = out <= 0
            out[bad] = rng.exponential(1.0, int(bad.sum()))
        return out
    if dist == "integer":
        return rng.integers(1, 1001, size).astype(float)
    raise ValueError(dist)


def generate_raw(cfg: GeneratorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Untruncated draws ``(d, B)``; d is drawn before B."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    d = _draw(rng, cfg.distribution, (cfg.n, cfg.m))
    B = _draw(rng, cfg.distribution, cfg.n)
    return d, B


def generate_instance(cfg: GeneratorConfig) -> MarketInstance:
    d_raw, B_raw = generate_raw(cfg)
    d = truncate_condition_number(d_raw, cfg.condition_cap)
    B = truncate_condition_number(B_raw, cfg.condition_cap)
    meta = {"generator": cfg.to_dict()}
    if cfg.distribution == "integer":
        meta["raw_integral"] = bool(
            np.all(d_raw == np.round(d_raw)) and np.all(B_raw == np.round(B_raw))
        )
    return MarketInstance(d, B, meta=meta)


def _fmt(x: float) -> str:
    # 17 significant digits round-trips every double
    return format(float(x), ".16e")


def _vec(values) -> str:
    return "[" + ", ".join(_fmt(v) for v in values) + "]"


def dumps_instance(inst: MarketInstance) -> str:
    rows = ",\n    ".join(_vec(row) for row in inst.d)
    meta = json.dumps(inst.meta, sort_keys=True)
    return (
        "{\n"
        f'  "n": {inst.n},\n'
        f'  "m": {inst.m},\n'
        f'  "d": [\n    {rows}\n  ],\n'
        f'  "B": {_vec(inst.B)},\n'
        f'  "meta": {meta}\n'
        "}\n"
    )


def loads_instance(text: str) -> MarketInstance:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"instance is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or not {"d", "B"} <= obj.keys():
        raise ParseError("instance JSON needs keys 'd' and 'B'")
    return validate_instance(obj["d"], obj["B"], obj.get("n"), obj.get("m"), obj.get("meta"))


def save_instance(inst: MarketInstance, path) -> Path:
    path = Path(path)
    path.write_text(dumps_instance(inst), encoding="utf-8")
    return path


def load_instance(path) -> MarketInstance:
    return loads_instance(Path(path).read_text(encoding="utf-8"))
