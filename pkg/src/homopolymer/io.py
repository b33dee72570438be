"""CSV/JSON emission and the key=value experiment configuration."""
import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import SUPPORTED_DIMENSIONS


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path, rows, params, columns=None, footer=None):
    """CSV with a leading '# {params json}' line; ``footer`` dict goes in a trailing comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(_jsonable(params), sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in row.items()})
        if footer is not None:
            fh.write("# fit " + json.dumps(_jsonable(footer), sort_keys=True) + "\n")
    return path


def read_csv(path):
    """Returns (params, rows) for a file written by write_csv."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    params = json.loads(lines[0][2:])
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    return params, list(csv.DictReader(body))


def load_schema(name):
    text = resources.files("homopolymer").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    shape: str = "well"
    radius: float = 1.0
    height: float = 1.0
    samples: int = 65
    d: int = 3
    beta: str = None              # a number, or "critical"
    beta_grid: str = None         # "a:b:n"
    grid_mode: str = "relative"   # beta_grid entries are (beta - beta_cr)/beta_cr or absolute
    T: float = 100.0
    h: float = 0.05
    growth: float = 1.03
    n_nodes: int = 64
    n_paths: int = 100_000
    n_steps: int = 500
    seed: int = 0
    pinned_radius: float = None
    dump_paths: bool = False
    out: str = "out"
    refine: bool = False

    def validate(self):
        if self.shape not in ("well", "bump"):
            raise ConfigError("shape", f"must be 'well' or 'bump', got {self.shape!r}")
        for name in ("radius", "height", "T", "h"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigError(name, f"must be a positive number, got {val!r}")
        if self.d not in SUPPORTED_DIMENSIONS:
            raise ConfigError("d", f"must be one of {SUPPORTED_DIMENSIONS}, got {self.d}")
        if not self.growth >= 1:
            raise ConfigError("growth", "must be >= 1")
        for name, lo in (("samples", 3), ("n_nodes", 4), ("n_paths", 1), ("n_steps", 1), ("seed", 0)):
            if getattr(self, name) < lo:
                raise ConfigError(name, f"must be >= {lo}")
        if self.beta is not None and self.beta != "critical":
            try:
                b = float(self.beta)
            except ValueError:
                raise ConfigError("beta", f"must be a number or 'critical', got {self.beta!r}") from None
            if not (math.isfinite(b) and b >= 0):
                raise ConfigError("beta", "must be finite and non-negative")
        if self.beta_grid is not None:
            self.parsed_beta_grid()
        if self.grid_mode not in ("relative", "absolute"):
            raise ConfigError("grid_mode", "must be 'relative' or 'absolute'")
        if self.pinned_radius is not None and not self.pinned_radius > 0:
            raise ConfigError("pinned_radius", "must be positive")
        return self

    def parsed_beta_grid(self):
        parts = str(self.beta_grid).split(":")
        try:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            if len(parts) != 3:
                raise ValueError
        except (ValueError, IndexError):
            raise ConfigError("beta_grid", f"expected a:b:n, got {self.beta_grid!r}") from None
        if not (a > 0 and b > a and n >= 2):
            raise ConfigError("beta_grid", "need 0 < a < b and n >= 2")
        return np.geomspace(a, b, n)

    def beta_value(self):
        if self.beta is None:
            raise ConfigError("beta", "is required for this command")
        return self.beta if self.beta == "critical" else float(self.beta)

    def potential(self):
        from .potentials import bump, unit_well
        make = unit_well if self.shape == "well" else bump
        kw = {"n_samples": self.samples} if self.shape == "well" else {}
        return make(self.d, radius=self.radius, height=self.height, **kw)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig) if not f.name.startswith("_")}
_ALIASES = {"paths": "n_paths", "steps": "n_steps", "beta-grid": "beta_grid", "t": "T"}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        if kind is bool or kind == "bool":
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError
            return low in ("1", "true", "yes")
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return None if raw is None else str(raw)


def parse_config_text(text):
    """key = value lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown configuration key")
        values[key] = val
    return values


def build_config(path=None, overrides=None):
    """File values first, then non-None overrides; everything validated."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        values.update(parse_config_text(text))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[_ALIASES.get(k, k)] = v
    cfg = ExperimentConfig()
    for k, v in values.items():
        if k not in _FIELD_TYPES:
            raise ConfigError(k, "unknown configuration key")
        setattr(cfg, k, _coerce(k, v))
    return cfg.validate()
