"""Flat ``key = value`` pipeline configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are an error so a
typo cannot silently fall back to a default. The shipped calibrated defaults
live in ``data/default.cfg``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .source import SourceParams

CONFIG_VERSION = 1

_SOURCE_KEYS = {f.name: f.type for f in dataclasses.fields(SourceParams)}


class ConfigError(ValueError):
    pass


def _parse_orders(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(sorted(set(out)))


def _format_orders(orders) -> str:
    orders = sorted(orders)
    if orders == list(range(orders[0], orders[-1] + 1)):
        return f"{orders[0]}-{orders[-1]}"
    return ",".join(map(str, orders))


@dataclass(frozen=True)
class PipelineConfig:
    source: SourceParams = field(default_factory=SourceParams)
    matrix_seed: int = 2
    rows: int = 256
    cols: int = 512
    block_size: int = 512
    max_lag: int = 100
    sv_orders: tuple[int, ...] = tuple(range(1, 11))
    min_history_count: int = 100
    hmin_max_n: int = 16
    bits: int = 10**6
    workers: int = 1
    config_version: int = CONFIG_VERSION

    def __post_init__(self):
        if not 1 <= self.rows <= self.cols:
            raise ConfigError(f"need 1 <= rows <= cols, got rows={self.rows} cols={self.cols}")
        if not 0 <= self.matrix_seed < 2**64:
            raise ConfigError("matrix_seed must be a 64-bit unsigned integer")
        for name in ("block_size", "max_lag", "min_history_count", "hmin_max_n", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.sv_orders or min(self.sv_orders) < 1 or max(self.sv_orders) > 24:
            raise ConfigError("sv_orders must be within 1..24")
        if self.hmin_max_n > 24:
            raise ConfigError("hmin_max_n must be <= 24")
        minimum = max(self.block_size, self.cols, self.max_lag + 2)
        if self.bits < minimum:
            raise ConfigError(f"bits must be >= {minimum} for the configured analysis")

    def replace(self, **changes) -> "PipelineConfig":
        src = {k: changes.pop(k) for k in list(changes) if k in _SOURCE_KEYS}
        try:
            source = self.source.replace(**src) if src else self.source
            return dataclasses.replace(self, source=source, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_items(self) -> dict[str, object]:
        items: dict[str, object] = {"config_version": self.config_version}
        items.update(dataclasses.asdict(self.source))
        for f in dataclasses.fields(self):
            if f.name not in ("source", "config_version"):
                items[f.name] = getattr(self, f.name)
        items["sv_orders"] = _format_orders(self.sv_orders)
        return items

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items().items())

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def _convert(key: str, raw: str):
    if key == "sv_orders":
        return _parse_orders(raw)
    kind = _SOURCE_KEYS.get(key) or {f.name: f.type for f in
                                     dataclasses.fields(PipelineConfig)}[key]
    if kind in ("int", int):
        return int(float(raw)) if "e" in raw.lower() else int(raw, 0)
    if kind in ("float", float):
        return float(raw)
    return raw


KNOWN_KEYS = (set(_SOURCE_KEYS)
              | {f.name for f in dataclasses.fields(PipelineConfig)}) - {"source"}


def parse_items(text: str) -> dict[str, object]:
    items: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            items[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from exc
    return items


def from_items(items: dict[str, object], base: PipelineConfig | None = None) -> PipelineConfig:
    base = base if base is not None else PipelineConfig()
    return base.replace(**items)


def load_config(path: str | os.PathLike, base: PipelineConfig | None = None) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return from_items(parse_items(fh.read()), base)


@lru_cache(maxsize=1)
def default_config() -> PipelineConfig:
    """Calibrated defaults shipped with the package."""
    text = resources.files("qrng_twin").joinpath("data/default.cfg").read_text("utf-8")
    return from_items(parse_items(text))
