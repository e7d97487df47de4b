"""Run configuration: TOML file plus ``key=value`` overrides, resolved into typed objects."""

from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .analytics import AnalyticsParams
from .channel import SystemConfig
from .mcsim import ExperimentConfig
from .numerics import InvalidInputError

EXIT_CONFIG = 2
EXIT_USER_DENSITY = 3

_SYSTEM_KEYS = [f.name for f in fields(SystemConfig)]

# section -> key -> default
DEFAULTS: dict = {
    "system": {f.name: f.default for f in fields(SystemConfig)},
    "deployment": {
        "ris_density": 1e-3,
        "deployment_model": "ppp",
        "pcp_mean_per_cluster": 3.0,
        "pcp_scatter_std": None,
        "user_distance_m": None,
    },
    "scheme": {
        "scheme": "optimal",
        "k_ris": 1,
        "subset_mode": "auto",
        "candidate_limit": 8,
        "qb_block": 8,
        "qb_tol": 0.3,
        "qb_max_rank": 64,
    },
    "analytics": {
        "user_density": 1e-3,
        "alpha_los": 2.0,
        "alpha_nlos": 4.0,
        "c_los": None,
        "c_nlos": None,
        "quad_tol": 1e-8,
    },
    "sweep": {
        "thresholds_db": [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "n_trials": 200,
        "seed": 2024,
        "interference": True,
        "sinr_metric": "association",
        "rate_cap_db": -3.0,
        "sweep_param": "",
        "sweep_values": [],
    },
}

_KEY_SECTION = {k: s for s, keys in DEFAULTS.items() for k in keys}


class ConfigError(Exception):
    """Configuration problem with the process exit code to use."""

    def __init__(self, message: str, exit_code: int = EXIT_CONFIG):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass
class RunConfig:
    """Resolved configuration: nested raw values plus the typed objects built from them."""

    values: dict
    source: str = "<defaults>"
    system: SystemConfig = field(init=False)
    experiment: ExperimentConfig = field(init=False)
    analytics: AnalyticsParams = field(init=False)

    def __post_init__(self):
        try:
            self._build()
        except InvalidInputError as exc:
            if "user density" in str(exc):
                raise ConfigError(str(exc), EXIT_USER_DENSITY) from exc
            raise ConfigError(f"{self.source}: invalid configuration: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.source}: invalid configuration: {exc}") from exc

    def _build(self):
        v = self.values
        sysd = dict(v["system"])
        for key in ("bs_pattern_db", "ue_pattern_db"):
            if sysd.get(key) is not None:
                sysd[key] = tuple(sysd[key])
        self.system = SystemConfig(**sysd)
        dep, sch, sw, an = v["deployment"], v["scheme"], v["sweep"], v["analytics"]
        self.experiment = ExperimentConfig(
            system=self.system,
            ris_density=float(dep["ris_density"]),
            deployment_model=dep["deployment_model"],
            pcp_mean_per_cluster=float(dep["pcp_mean_per_cluster"]),
            pcp_scatter_std=dep["pcp_scatter_std"],
            user_distance=dep["user_distance_m"],
            scheme=sch["scheme"],
            k_ris=int(sch["k_ris"]),
            subset_mode=sch["subset_mode"],
            candidate_limit=sch["candidate_limit"],
            qb_block=int(sch["qb_block"]),
            qb_tol=float(sch["qb_tol"]),
            qb_max_rank=sch["qb_max_rank"],
            thresholds_db=tuple(sw["thresholds_db"]),
            n_trials=int(sw["n_trials"]),
            base_seed=int(sw["seed"]),
            interference=bool(sw["interference"]),
            sinr_metric=sw["sinr_metric"],
            rate_cap_db=float(sw["rate_cap_db"]),
        )
        lam_u = an["user_density"]
        if lam_u is None or float(lam_u) <= 0:
            raise InvalidInputError("invalid user density: must be > 0")
        self.analytics = AnalyticsParams(
            ris_density=float(dep["ris_density"]),
            user_density=float(lam_u),
            cell_radius=self.system.cell_radius_m,
            h_ut=self.system.h_ut_m,
            c_los=an["c_los"],
            c_nlos=an["c_nlos"],
            alpha_los=float(an["alpha_los"]),
            alpha_nlos=float(an["alpha_nlos"]),
            tol=float(an["quad_tol"]),
        )

    def snapshot(self) -> dict:
        return copy.deepcopy(self.values)

    def content_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.values).encode()).hexdigest()

    def updated(self, overrides: dict) -> "RunConfig":
        """Copy with ``{key: value}`` overrides (keys as accepted by ``--set``)."""
        vals = self.snapshot()
        for key, val in overrides.items():
            sec, name = resolve_key(key)
            vals[sec][name] = _normalize(val)
        return RunConfig(vals, self.source)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def resolve_key(key: str):
    """``section.key`` or a bare key name -> ``(section, key)``."""
    if "." in key:
        sec, name = key.split(".", 1)
        if sec not in DEFAULTS or name not in DEFAULTS[sec]:
            raise ConfigError(f"unknown configuration key '{key}'")
        return sec, name
    if key not in _KEY_SECTION:
        raise ConfigError(f"unknown configuration key '{key}'")
    return _KEY_SECTION[key], key


def _normalize(val):
    if isinstance(val, str) and val.strip().lower() in ("none", "null"):
        return None
    return val


def _key_line(text: str, section: str, key: str) -> Optional[int]:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return i
    return None


def parse_override(item: str):
    """``key=value`` with the value read as a TOML literal (bare words become strings)."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    key, raw = item.split("=", 1)
    key, raw = key.strip(), raw.strip()
    try:
        val = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        val = raw
    return key, val


def load_config(path: Optional[str] = None, overrides=()) -> RunConfig:
    """Read a TOML config (or a run manifest JSON) and apply ``key=value`` overrides."""
    vals = copy.deepcopy(DEFAULTS)
    source = "<defaults>"
    if path is not None:
        p = Path(path)
        source = str(p)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        if p.suffix == ".json":
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from exc
            loaded = doc.get("config", doc)
            text = None
        else:
            try:
                loaded = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{p}: {exc}") from exc
        for sec, table in loaded.items():
            if sec not in DEFAULTS:
                line = _section_line(text, sec) if text else None
                where = f"line {line}: " if line else ""
                raise ConfigError(f"{p}: {where}unknown section [{sec}]")
            if not isinstance(table, dict):
                raise ConfigError(f"{p}: [{sec}] must be a table")
            for key, val in table.items():
                if key not in DEFAULTS[sec]:
                    line = _key_line(text, sec, key) if text else None
                    where = f"line {line}: " if line else ""
                    raise ConfigError(f"{p}: {where}unknown configuration key '{sec}.{key}'")
                vals[sec][key] = _normalize(val)
    for item in overrides:
        key, val = parse_override(item) if isinstance(item, str) else item
        sec, name = resolve_key(key)
        vals[sec][name] = _normalize(val)
    return RunConfig(vals, source)


def _section_line(text: str, section: str) -> Optional[int]:
    for i, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"^\s*\[{re.escape(section)}\]", line):
            return i
    return None
