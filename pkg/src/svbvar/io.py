"""Data ingestion, run configuration and result serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .data import TRANSFORM_CODES, ChainOutput, Panel, transform_series

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "VARIABLE_TABLE",
    "PRESETS",
    "IngestError",
    "MissingVariableError",
    "RaggedRowError",
    "ConfigError",
    "preset_variables",
    "ingest_csv",
    "write_panel_csv",
    "load_schema",
    "RunSettings",
    "load_config",
    "parse_config",
    "dumps_json",
    "write_json",
    "config_digest",
    "RunManifest",
    "write_draws_csv",
    "code_version",
]

# (descriptive name, transform, in n=7, in n=15); every row belongs to the 30-variable set
VARIABLE_TABLE: tuple[tuple[str, str, bool, bool], ...] = (
    ("Real Gross Domestic Product", "dlog400", True, True),
    ("Personal Consumption Expenditures", "dlog400", False, True),
    ("Real personal consumption expenditures: Durable goods", "dlog400", False, False),
    ("Real Disposable Personal Income", "dlog400", False, False),
    ("Industrial Production Index", "dlog400", True, True),
    ("Industrial Production: Final Products", "dlog400", False, False),
    ("All Employees: Total nonfarm", "dlog400", False, True),
    ("All Employees: Manufacturing", "dlog400", False, False),
    ("Civilian Employment", "dlog400", False, True),
    ("Civilian Labor Force Participation Rate", "none", False, False),
    ("Civilian Unemployment Rate", "none", True, True),
    ("Nonfarm Business Section: Hours of All Persons", "dlog400", False, False),
    ("Housing Starts: Total", "dlog400", False, True),
    ("New Private Housing Units Authorized by Building Permits", "dlog400", False, False),
    ("Personal Consumption Expenditures: Chain-type Price index", "dlog400", False, True),
    ("Gross Domestic Product: Chain-type Price index", "dlog400", False, False),
    ("Consumer Price Index for All Urban Consumers: All Items", "dlog400", True, True),
    ("Producer Price Index for All commodities", "dlog400", False, False),
    (
        "Real Average Hourly Earnings of Production and Nonsupervisory Employees: Manufacturing",
        "dlog400",
        True,
        True,
    ),
    ("Nonfarm Business Section: Real Output Per Hour of All Persons", "dlog400", False, False),
    ("Effective Federal Funds Rate", "none", True, True),
    ("3-Month Treasury Bill: Secondary Market Rate", "none", False, False),
    ("1-Year Treasury Constant Maturity Rate", "none", False, False),
    ("10-Year Treasury Constant Maturity Rate", "none", True, True),
    ("Moody's Seasoned Baa Corporate Bond Yield Relative to Yield on 10-Year Treasury Constant Maturity", "none", False, True),
    ("3-Month Commercial Paper Minus 3-Month Treasury Bill", "none", False, False),
    ("Real M1 Money Stock", "dlog400", False, True),
    ("Real M2 Money Stock", "dlog400", False, False),
    ("Total Reserves of Depository Institutions", "d2log", False, False),
    ("S&P's Common Stock Price Index : Composite", "dlog400", False, True),
)

PRESETS = (7, 15, 30)


class IngestError(ValueError):
    pass


class MissingVariableError(IngestError):
    pass


class RaggedRowError(IngestError):
    pass


class ConfigError(ValueError):
    pass


def preset_variables(preset: int) -> list[tuple[str, str]]:
    """(name, transform) pairs of a dimension preset in table order."""
    if preset == 7:
        return [(nm, tr) for nm, tr, small, _ in VARIABLE_TABLE if small]
    if preset == 15:
        return [(nm, tr) for nm, tr, _, medium in VARIABLE_TABLE if medium]
    if preset == 30:
        return [(nm, tr) for nm, tr, _, _ in VARIABLE_TABLE]
    raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS} or 'custom'")


def _schema_entry(entry: Any) -> tuple[str | None, str | None]:
    if entry is None:
        return None, None
    if isinstance(entry, str):
        return (None, entry) if entry in TRANSFORM_CODES else (entry, None)
    if isinstance(entry, Mapping):
        unknown = set(entry) - {"column", "transform"}
        if unknown:
            raise ConfigError(f"unknown schema keys {sorted(unknown)}")
        return entry.get("column"), entry.get("transform")
    raise ConfigError(f"schema entries must be strings or tables, got {type(entry).__name__}")


def _resolve_columns(schema: Mapping[str, Any], preset: int | str) -> list[tuple[str, str, str]]:
    """(panel name, csv column, transform) for every selected variable."""
    out = []
    if preset == "custom":
        for name, entry in schema.items():
            column, code = _schema_entry(entry)
            out.append((name, column or name, code or "none"))
    else:
        for name, default in preset_variables(int(preset)):
            column, code = _schema_entry(schema.get(name))
            out.append((name, column or name, code or default))
    for name, _, code in out:
        if code not in TRANSFORM_CODES:
            raise ConfigError(f"variable {name!r} has unknown transform {code!r}")
    return out


def ingest_csv(path: str | Path, schema: Mapping[str, Any] | None = None, preset: int | str = "custom") -> Panel:
    """Read a dated CSV, transform each selected column and trim to the common sample.

    For a numeric preset, ``schema`` maps descriptive variable names to the
    CSV column holding them (or to a table with ``column``/``transform``);
    missing entries mean the column carries the descriptive name. For
    ``preset="custom"``, ``schema`` maps column names to transform codes; an
    empty schema takes every column after the date untransformed.
    """
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise IngestError(f"{path}: empty file") from exc
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRowError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append(row)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    if preset == "custom" and not schema:
        schema = {name: "none" for name in header[1:]}
    cols = _resolve_columns(schema, preset)
    index = {name: j for j, name in enumerate(header)}
    missing = [column for _, column, _ in cols if column not in index]
    if missing:
        raise MissingVariableError(f"{path}: missing columns {missing}")
    dates = [row[0] for row in rows]
    series, orders = [], []
    for name, column, code in cols:
        raw_text = [row[index[column]].strip() for row in rows]
        try:
            raw = np.array([float(v) if v else np.nan for v in raw_text])
        except ValueError as exc:
            raise IngestError(f"{path}: column {column!r} has a non-numeric entry") from exc
        if np.any(np.isnan(raw)):
            raise IngestError(f"{path}: column {column!r} has missing values")
        try:
            series.append(transform_series(raw, code))
        except ValueError as exc:
            raise IngestError(f"{path}: variable {name!r}: {exc}") from exc
        orders.append(raw.size - series[-1].size)
    drop = max(orders)
    values = np.column_stack([s[drop - o :] for s, o in zip(series, orders)])
    return Panel(values, tuple(c[0] for c in cols), tuple(c[2] for c in cols), dates=tuple(dates[drop:]))


def write_panel_csv(panel: Panel, path: str | Path) -> None:
    """Write a panel (already transformed) with a date column and 17 significant digits."""
    dates = panel.dates or tuple(str(t) for t in range(panel.rows))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *panel.names])
        for d, row in zip(dates, panel.values):
            w.writerow([d, *(_fmt_float(v) for v in row)])


def load_schema(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return dict(doc.get("schema", doc))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunSettings:
    """Every knob a command can read; the TOML file mirrors these sections."""

    seed: int = 0
    threads: int = 1
    # data
    data_path: str | None = None
    preset: int | str = "custom"
    schema: Mapping[str, Any] = field(default_factory=dict)
    schema_path: str | None = None
    p: int = 4
    # sampler
    model: str = "csv"
    burn_in: int = 1000
    keep: int = 5000
    thin: int = 1
    r: int = 1
    prior_mode: str = "asymmetric"
    fixed_kappa: float | None = None
    impact_kappa: float | None = None
    allow_weak_identification: bool = False
    # estimators
    R: int = 5000
    gd_variant: str = "gd2"
    gd_alpha: float = 0.05
    dic_R: int = 200
    # forecasting
    origins: tuple[int, ...] = ()
    horizons: tuple[int, ...] = (1,)
    # simulation / Monte Carlo
    dgp: str = "csv"
    n: int = 5
    T: int = 200
    dgp_p: int = 2
    dgp_r: int = 3
    noisy: bool = False
    replications: int = 20
    candidates: tuple[str, ...] = ("csv", "sv", "fsv")
    failure_budget: float = 0.1

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["schema"] = dict(self.schema)
        return d


_SECTIONS = {
    "": ("seed", "threads"),
    "data": ("data_path", "preset", "schema", "schema_path", "p"),
    "sampler": (
        "model",
        "burn_in",
        "keep",
        "thin",
        "r",
        "prior_mode",
        "fixed_kappa",
        "impact_kappa",
        "allow_weak_identification",
    ),
    "estimators": ("R", "gd_variant", "gd_alpha", "dic_R"),
    "forecast": ("origins", "horizons"),
    "mc": ("dgp", "n", "T", "dgp_p", "dgp_r", "noisy", "replications", "candidates", "failure_budget"),
}
_ALIASES = {"data": {"path": "data_path"}, "mc": {"p": "dgp_p", "r": "dgp_r"}}


def parse_config(doc: Mapping[str, Any]) -> RunSettings:
    """Validate a parsed TOML document; unknown keys are errors."""
    kw: dict[str, Any] = {}
    for key, value in doc.items():
        if isinstance(value, Mapping) and key in _SECTIONS and key != "":
            allowed = _SECTIONS[key]
            for sub, v in value.items():
                name = _ALIASES.get(key, {}).get(sub, sub)
                if name not in allowed:
                    raise ConfigError(f"unknown key {key}.{sub}")
                kw[name] = v
        elif key in _SECTIONS[""]:
            kw[key] = value
        else:
            raise ConfigError(f"unknown key or section {key!r}")
    for name in ("origins", "horizons", "candidates"):
        if name in kw:
            kw[name] = tuple(kw[name])
    try:
        settings = RunSettings(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _validate(settings)
    return settings


def _validate(s: RunSettings) -> None:
    ints = ("seed", "threads", "p", "burn_in", "keep", "thin", "r", "R", "dic_R", "n", "T", "dgp_p", "dgp_r", "replications")
    for name in ints:
        v = getattr(s, name)
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{name} must be an integer, got {v!r}")
    for name in ("threads", "p", "keep", "thin", "R", "dic_R", "n", "T", "dgp_p", "replications"):
        if getattr(s, name) < 1:
            raise ConfigError(f"{name} must be positive")
    if s.burn_in < 0 or s.r < 0 or s.dgp_r < 0:
        raise ConfigError("burn_in and factor counts must be non-negative")
    if s.model not in ("var", "csv", "sv", "fsv"):
        raise ConfigError(f"unknown model tag {s.model!r}")
    if s.dgp not in ("var", "csv", "sv", "fsv"):
        raise ConfigError(f"unknown DGP tag {s.dgp!r}")
    if s.prior_mode not in ("asymmetric", "symmetric", "subjective"):
        raise ConfigError(f"unknown prior mode {s.prior_mode!r}")
    if s.gd_variant not in ("gd1", "gd2"):
        raise ConfigError(f"unknown GD variant {s.gd_variant!r}")
    if not 0 < s.gd_alpha < 1 or not 0 <= s.failure_budget <= 1:
        raise ConfigError("gd_alpha must lie in (0, 1) and failure_budget in [0, 1]")
    if s.preset != "custom" and s.preset not in PRESETS:
        raise ConfigError(f"unknown preset {s.preset!r}")
    for name in ("fixed_kappa", "impact_kappa"):
        v = getattr(s, name)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"{name} must be a positive number")
    for h in s.horizons:
        if h not in (1, 4):
            raise ConfigError(f"forecast horizons must be 1 or 4, got {h}")
    for c in s.candidates:
        tag, _, r = c.partition(":")
        if tag not in ("var", "csv", "sv", "fsv") or (r and not r.isdigit()):
            raise ConfigError(f"bad candidate {c!r}; use var, csv, sv, fsv or fsv:<r>")


def load_config(path: str | Path | None, **overrides: Any) -> RunSettings:
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    settings = parse_config(doc)
    clean = {k: v for k, v in overrides.items() if v is not None}
    if clean:
        merged = settings.to_dict()
        merged.update(clean)
        settings = RunSettings(**merged)
        _validate(settings)
    return settings


# ---------------------------------------------------------------------------
# serialization


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj: Any, indent: int = 2) -> str:
    """JSON with every float written to 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def write_json(obj: Any, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def config_digest(config: Mapping[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def code_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # noqa: BLE001 - running from a source tree
        return "0.0.0+unknown"


@dataclass
class RunManifest:
    command: str
    config: Mapping[str, Any]
    seed: int
    timings: dict[str, float] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    status: str = "ok"

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config_digest": config_digest(self.config),
            "seed": self.seed,
            "code_version": code_version(),
            "status": self.status,
            "timings": dict(self.timings),
            "outputs": list(self.outputs),
        }

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        missing = [p for p in self.outputs if not Path(p).exists()]
        if self.status == "ok" and missing:
            raise FileNotFoundError(f"manifest lists missing outputs {missing}")
        return write_json(self.to_dict(), path)


def _state_columns(state: Any) -> list[tuple[str, np.ndarray]]:
    out = []
    for f in fields(state):
        v = getattr(state, f.name)
        if f.name == "strict":
            continue
        if isinstance(v, tuple):
            v = np.concatenate([np.asarray(x, dtype=float).reshape(-1) for x in v]) if v else np.empty(0)
        out.append((f.name, np.asarray(v, dtype=float)))
    return out


def write_draws_csv(chain: ChainOutput, path: str | Path, *, include_latent: bool = False) -> Path:
    """One row per kept draw, one column per scalar coordinate, labelled like ``alpha[0][2]``."""
    latent = {"h", "f"}
    header: list[str] = []
    rows: list[list[str]] = []
    for m, state in enumerate(chain.draws):
        row: list[str] = []
        for name, arr in _state_columns(state):
            if name in latent and not include_latent:
                continue
            if arr.ndim == 0:
                labels, flat = [name], [float(arr)]
            else:
                labels = [name + "".join(f"[{i}]" for i in idx) for idx in np.ndindex(arr.shape)]
                flat = arr.reshape(-1).tolist()
            if m == 0:
                header.extend(labels)
            row.extend(_fmt_float(v) for v in flat)
        rows.append(row)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path
