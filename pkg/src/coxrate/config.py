"""Plain-text run configuration.

One flat ``key = value`` file drives the whole pipeline; ``#`` starts a
comment.  Command-line ``--set key=value`` overrides take precedence over
the file, which takes precedence over built-in defaults.  The config hash
identifies the *file* contents (not per-command overrides) and is stamped
into every artifact so mixed-config artifacts are rejected.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import InputError
from .grid import GridSpec, TimeAxis


def parse_config_text(text: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def canonical_text(cfg: dict[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict[str, str]) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


def apply_overrides(cfg: dict[str, str], overrides: list[str]) -> dict[str, str]:
    out = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise InputError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


class RunConfig:
    """Typed access to the merged configuration."""

    def __init__(self, values: dict[str, str], base_dir: Path, file_hash: str):
        self.values = values
        self.base_dir = Path(base_dir)
        self.file_hash = file_hash

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] | None = None) -> "RunConfig":
        path = Path(path)
        file_cfg = parse_config_file(path)
        merged = apply_overrides(file_cfg, overrides or [])
        return cls(merged, path.parent, config_hash(file_cfg))

    def has(self, key: str) -> bool:
        return key in self.values and self.values[key] != ""

    def get_str(self, key: str, default: str | None = None) -> str:
        if not self.has(key):
            if default is None:
                raise InputError(f"config key {key!r} is required")
            return default
        return self.values[key]

    def get_int(self, key: str, default: int | None = None) -> int:
        raw = self.get_str(key, None if default is None else str(default))
        try:
            return int(raw)
        except ValueError as exc:
            raise InputError(f"config key {key!r}: expected integer, got {raw!r}") from exc

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self.get_str(key, None if default is None else repr(default))
        try:
            return float(raw)
        except ValueError as exc:
            raise InputError(f"config key {key!r}: expected number, got {raw!r}") from exc

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.get_str(key, "true" if default else "false").lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise InputError(f"config key {key!r}: expected boolean, got {raw!r}")

    def get_path(self, key: str, default: str | None = None) -> Path:
        raw = self.get_str(key, default)
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def get_int_list(self, key: str) -> list[int]:
        raw = self.get_str(key)
        try:
            return [int(v.strip()) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise InputError(f"config key {key!r}: expected comma-separated integers") from exc

    def get_float_pair(self, key: str) -> tuple[float, float]:
        raw = self.get_str(key)
        parts = [v.strip() for v in raw.split(",") if v.strip()]
        if len(parts) != 2:
            raise InputError(f"config key {key!r}: expected 'low, high'")
        return float(parts[0]), float(parts[1])

    def get_str_list(self, key: str) -> list[str]:
        return [v.strip() for v in self.get_str(key).split(",") if v.strip()]

    # --- composed objects -------------------------------------------------

    def grid_spec(self) -> GridSpec:
        polygon = None
        mask_path = None
        if self.has("grid.polygon"):
            pairs = []
            for chunk in self.get_str("grid.polygon").split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                parts = chunk.split(",")
                if len(parts) != 2:
                    raise InputError(f"grid.polygon: bad vertex {chunk!r} (expected 'e,n')")
                pairs.append((float(parts[0]), float(parts[1])))
            polygon = np.array(pairs)
        if self.has("grid.mask_path"):
            mask_path = self.get_path("grid.mask_path")
        return GridSpec(
            origin_e=self.get_float("grid.origin_e"),
            origin_n=self.get_float("grid.origin_n"),
            nx=self.get_int("grid.nx"),
            ny=self.get_int("grid.ny"),
            cell_km=self.get_float("grid.cell_km", 1.0),
            polygon=polygon,
            mask_path=mask_path,
        )

    def time_axis(self) -> TimeAxis:
        return TimeAxis(n_steps=self.get_int("time.n_steps"), t0=self.get_int("time.t0", 1995))

    def seed(self) -> int:
        return self.get_int("seed")

    def output_dir(self) -> Path:
        return self.get_path("output_dir", "out")
