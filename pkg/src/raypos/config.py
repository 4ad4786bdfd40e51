"""YAML run configuration: schema check, defaults, and the effective-config echo."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional

import yaml

from .aoa import BaseStation
from .demo import demo_base_stations, demo_scene
from .errors import ConfigError
from .evaluation import CampaignConfig
from .geometry import Scene, load_scene

EFFECTIVE_CONFIG = "effective_config.yaml"

_NUMBER = (int, float)
# key -> (accepted types, element types for lists or None)
_SCHEMA = {
    "scene": ((str, type(None)), None),
    "base_stations": ((list,), dict),
    "cell_size": (_NUMBER, None),
    "slab_z_center": (_NUMBER, None),
    "slab_z_halfwidth": (_NUMBER, None),
    "rays_per_bs": ((list,), int),
    "max_bounces": ((int,), None),
    "sigmas_deg": ((list,), _NUMBER),
    "n_positions": ((int,), None),
    "position_seed": ((int, type(None)), None),
    "ue_z": (_NUMBER, None),
    "clearance": (_NUMBER, None),
    "realizations": ((int,), None),
    "estimators": ((list,), str),
    "seed": ((int,), None),
    "n_probe_rays": ((int,), None),
    "bin_width_deg": (_NUMBER, None),
    "measurement_3d": ((bool,), None),
    "elevation_range_deg": ((list, type(None)), _NUMBER),
    "benchmark_cone_scale": (_NUMBER, None),
    "error_from": ((str,), None),
    # run-level keys on top of the campaign fields
    "calibration": ((str, type(None)), None),
    "positions": ((list, type(None)), list),
}
_BS_KEYS = {"position", "capture_radius"}


@dataclasses.dataclass
class RunConfig:
    """Campaign parameters plus the file paths a CLI run needs.

    ``scene`` None means the built-in demo hall; ``base_stations`` empty then
    means its four corner BS. ``positions`` pins UE positions instead of
    sampling them, and ``calibration`` points to a saved ground-truth table.
    """

    campaign: CampaignConfig = dataclasses.field(default_factory=CampaignConfig)
    calibration: Optional[str] = None
    positions: Optional[list] = None

    def load_scene(self) -> Scene:
        if self.campaign.scene is None:
            return demo_scene()
        return load_scene(self.campaign.scene)

    def base_stations(self, sigma: float = 0.0) -> list:
        if not self.campaign.base_stations:
            return demo_base_stations(sigma)
        return self.campaign.bs_list(sigma)

    def resolved_campaign(self) -> CampaignConfig:
        """Campaign config with the demo BS filled in when none are given."""
        c = dataclasses.replace(self.campaign)
        if not c.base_stations:
            c.base_stations = [_bs_dict(b) for b in demo_base_stations()]
        return c

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self.resolved_campaign())
        d["base_stations"] = [_bs_dict(b) for b in d["base_stations"]]
        d["calibration"] = self.calibration
        d["positions"] = self.positions
        return d


def _bs_dict(b) -> dict:
    if isinstance(b, BaseStation):
        return {"position": [float(c) for c in b.position], "capture_radius": float(b.capture_radius)}
    return {"position": [float(c) for c in b["position"]],
            "capture_radius": float(b.get("capture_radius", 0.15))}


def _check_type(key: str, value) -> None:
    types, elem = _SCHEMA[key]
    # bool is an int subclass; only accept it where bool is declared
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{key}: expected {_names(types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{key}: expected {_names(types)}, got {type(value).__name__}")
    if isinstance(value, list) and elem is not None:
        for v in value:
            if isinstance(v, bool) or not isinstance(v, elem):
                raise ConfigError(f"{key}: every entry must be {_names(elem)}")


def _names(types) -> str:
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def _check_base_stations(rows: list) -> None:
    for i, b in enumerate(rows):
        extra = set(b) - _BS_KEYS
        if extra:
            raise ConfigError(f"base_stations[{i}]: unknown keys {sorted(extra)}")
        pos = b.get("position")
        if not isinstance(pos, list) or len(pos) != 3 or not all(
                isinstance(c, _NUMBER) and not isinstance(c, bool) for c in pos):
            raise ConfigError(f"base_stations[{i}].position must be three numbers")
        r = b.get("capture_radius", 0.15)
        if isinstance(r, bool) or not isinstance(r, _NUMBER) or r <= 0:
            raise ConfigError(f"base_stations[{i}].capture_radius must be a positive number")


def _check_positions(rows: list) -> None:
    for i, p in enumerate(rows):
        if len(p) != 3 or not all(isinstance(c, _NUMBER) and not isinstance(c, bool) for c in p):
            raise ConfigError(f"positions[{i}] must be three numbers")


def from_dict(doc: Optional[dict], base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a parsed document and build a ``RunConfig``.

    Relative paths are resolved against ``base_dir``. Unknown keys, wrong
    types and out-of-range values raise ``ConfigError``.
    """
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of keys to values")
    unknown = sorted(set(doc) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(map(str, unknown))}")
    for key, value in doc.items():
        _check_type(key, value)
    if "base_stations" in doc:
        _check_base_stations(doc["base_stations"])
    if doc.get("positions") is not None:
        _check_positions(doc["positions"])

    doc = dict(doc)
    for key in ("scene", "calibration"):
        if doc.get(key) is not None and base_dir is not None:
            doc[key] = str((base_dir / doc[key]).resolve())
    calibration = doc.pop("calibration", None)
    positions = doc.pop("positions", None)
    campaign = CampaignConfig(**doc)
    try:
        campaign.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if positions is not None:
        positions = [[float(c) for c in p] for p in positions]
    return RunConfig(campaign, calibration, positions)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return from_dict(doc, path.parent)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def write_effective(config: RunConfig, out_dir) -> Path:
    """Echo the fully defaulted config so the run can be repeated from it."""
    path = Path(out_dir) / EFFECTIVE_CONFIG
    path.write_text(dump_config(config))
    return path
