"""Plain-text scenario files.

INI-style sections ``[track]``, ``[sensors]``, ``[controller]``, ``[fsm]``
and ``[run]`` with ``key = value`` lines; ``#`` starts a comment. Unknown
sections or keys are rejected with the offending line number.

Example::

    [track]
    type = paper_track      # paper_track | straight | waypoints
    length = 200            # m
    [run]
    seed = 3
    duration = 90           # s
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .control import GAIN_PRESETS, BicycleParams, ControllerGains
from .perception import PerceptionConfig
from .planning import FsmParams
from .sensors import SensorConfig, SourceConfig
from .simulation import Scenario
from .track import Obstacle, StopTarget, TrackDefinition, paper_track, straight_track


class ScenarioError(ValueError):
    """Malformed scenario file; the message names the file, line and key."""

    def __init__(self, message: str, path: str = "<string>", line: Optional[int] = None, key: Optional[str] = None):
        where = path if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path, self.line, self.key = path, line, key


def _floats(text: str, n: Optional[int] = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in re.split(r"[,\s]+", text.strip()) if v)
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {len(vals)}")
    return vals


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _waypoints(text: str) -> np.ndarray:
    pts = [_floats(chunk, 2) for chunk in text.split(";") if chunk.strip()]
    return np.array(pts, dtype=float)


def _obstacles(text: str) -> tuple[Obstacle, ...]:
    # each entry: s[:lateral], separated by ';'
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            parts = [float(v) for v in chunk.split(":")]
            out.append(Obstacle(*parts))
    return tuple(out)


def _stops(text: str) -> tuple[StopTarget, ...]:
    return tuple(StopTarget(v) for v in _floats(text))


SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "track": {
        "type": str,
        "length": float,
        "turn_radius": float,
        "lane_width": float,
        "lanes": int,
        "aspect": float,
        "waypoints": _waypoints,
        "closed": _bool,
        "stop_lines": _stops,
        "obstacles": _obstacles,
    },
    "sensors": {
        "steerable_rate": float,
        "steerable_sigma": lambda t: _floats(t, 3),
        "steerable_dropout": float,
        "lidar_rate": float,
        "lidar_sigma": lambda t: _floats(t, 3),
        "lidar_dropout": float,
        "fit_reach": float,
        "a_max": float,
    },
    "controller": {
        "preset": str,
        "gamma1": float,
        "gamma2": float,
        "lookahead": float,
        "kp": float,
        "ki": float,
        "wheelbase": float,
        "max_steer": float,
        "steer_rate": float,
    },
    "fsm": {
        "v_cruise": float,
        "a_decel": float,
        "stop_margin": float,
        "dwell": float,
        "lane_change_trigger": float,
        "lane_change_length": float,
        "lat_accel_limit": float,
    },
    "run": {
        "seed": int,
        "duration": float,
        "mode": str,
        "reference": str,
        "laps": float,
        "start_s": float,
        "start_lateral": float,
        "start_heading": float,
    },
}


@dataclass(frozen=True)
class ScenarioFile:
    """Parsed, typed values per section (only the keys present in the file)."""

    values: dict[str, dict[str, object]]
    path: str = "<string>"

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def with_override(self, dotted: str, raw: str) -> "ScenarioFile":
        """Copy with ``section.key`` replaced by the parsed ``raw`` value."""
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ScenarioError(f"unknown parameter {dotted!r}", self.path, key=dotted)
        try:
            value = SCHEMA[section][key](raw)
        except ValueError as exc:
            raise ScenarioError(f"bad value for {dotted!r}: {exc}", self.path, key=dotted) from None
        values = {s: dict(v) for s, v in self.values.items()}
        values.setdefault(section, {})[key] = value
        return ScenarioFile(values, self.path)


def _line_of(text: str, section: Optional[str], key: Optional[str] = None) -> Optional[int]:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        m = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.I):
            return no
    return None


def parse_scenario(text: str, path: str = "<string>") -> ScenarioFile:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ScenarioError(str(exc).splitlines()[0], path, line) from None
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        name = section.strip().lower()
        if name not in SCHEMA:
            raise ScenarioError(f"unknown section [{section}]", path, _line_of(text, name), section)
        typed = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[name]:
                raise ScenarioError(f"unknown key {key!r} in [{name}]", path, _line_of(text, name, key), key)
            try:
                typed[key] = SCHEMA[name][key](raw)
            except (ValueError, TypeError) as exc:
                raise ScenarioError(f"bad value for {key!r}: {exc}", path, _line_of(text, name, key), key) from None
        values[name] = typed
    return ScenarioFile(values, path)


def load_scenario_file(path: str | Path) -> ScenarioFile:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", str(p)) from None
    return parse_scenario(text, str(p))


def shipped_scenarios() -> list[str]:
    root = resources.files("mapless_av") / "scenarios"
    return sorted(f.name[:-4] for f in root.iterdir() if f.name.endswith(".ini"))


def shipped_scenario_path(name: str) -> Path:
    path = Path(str(resources.files("mapless_av") / "scenarios" / f"{name}.ini"))
    if not path.exists():
        raise ScenarioError(f"no shipped scenario named {name!r} (have: {', '.join(shipped_scenarios())})", name)
    return path


def resolve_scenario_path(target: str) -> Path:
    """A filesystem path, or the name of a shipped scenario."""
    p = Path(target)
    if p.exists() or p.suffix:
        return p
    return shipped_scenario_path(target)


def _build_track(cfg: ScenarioFile) -> TrackDefinition:
    kind = cfg.get("track", "type", "paper_track")
    common = dict(
        lane_width=cfg.get("track", "lane_width", 3.0),
        lanes=cfg.get("track", "lanes", 1),
    )
    extras = dict(
        stop_lines=cfg.get("track", "stop_lines", ()),
        obstacles=cfg.get("track", "obstacles", ()),
    )
    if kind == "paper_track":
        tr = paper_track(
            cfg.get("track", "length", 200.0),
            cfg.get("track", "turn_radius", 3.0),
            aspect=cfg.get("track", "aspect", 2.0),
            **common,
        )
        if extras["stop_lines"] or extras["obstacles"]:
            tr = TrackDefinition(tr.xy[:-1], closed=True, turn_curvature=tr.turn_curvature, **common, **extras)
        return tr
    if kind == "straight":
        return straight_track(cfg.get("track", "length", 100.0), **common, **extras)
    if kind == "waypoints":
        pts = cfg.get("track", "waypoints")
        if pts is None:
            raise ValueError("track type 'waypoints' needs a 'waypoints' key")
        return TrackDefinition(pts, closed=cfg.get("track", "closed", False), **common, **extras)
    raise ValueError(f"unknown track type {kind!r}")


def build_scenario(cfg: ScenarioFile) -> Scenario:
    """Turn a parsed file into a runnable :class:`Scenario`; value errors become :class:`ScenarioError`."""
    try:
        return _build(cfg)
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(str(exc), cfg.path) from None


def _build(cfg: ScenarioFile) -> Scenario:
    track = _build_track(cfg)
    base = SensorConfig()
    sources = {}
    for name, default in base.sources.items():
        sources[name] = SourceConfig(
            cfg.get("sensors", f"{name}_sigma", default.sigma),
            cfg.get("sensors", f"{name}_rate", default.rate),
            cfg.get("sensors", f"{name}_dropout", default.dropout),
        )
    sensors = replace(
        base,
        sources=sources,
        fit_reach=cfg.get("sensors", "fit_reach", base.fit_reach),
        a_max=cfg.get("sensors", "a_max", base.a_max),
    )
    preset = cfg.get("controller", "preset", "default")
    if preset not in GAIN_PRESETS:
        raise ScenarioError(f"unknown gain preset {preset!r}", cfg.path, None, "preset")
    g = GAIN_PRESETS[preset]
    gains = ControllerGains(
        cfg.get("controller", "gamma1", g.gamma1),
        cfg.get("controller", "gamma2", g.gamma2),
        cfg.get("controller", "lookahead", g.lookahead),
    )
    vb = BicycleParams()
    vehicle = BicycleParams(
        cfg.get("controller", "wheelbase", vb.wheelbase),
        vb.t_s,
        cfg.get("controller", "max_steer", vb.max_steer),
        cfg.get("controller", "steer_rate", vb.steer_rate),
    )
    fsm = replace(FsmParams(), **cfg.values.get("fsm", {}))
    run = cfg.values.get("run", {})
    kwargs = {k: run[k] for k in run}
    kwargs.update(
        {k: cfg.get("controller", k) for k in ("kp", "ki") if cfg.get("controller", k) is not None}
    )
    return Scenario(
        track,
        sensors=sensors,
        vehicle=vehicle,
        gains=gains,
        fsm=fsm,
        perception=replace(PerceptionConfig(), a_max=sensors.a_max),
        **kwargs,
    )


def load_scenario(target: str | Path) -> Scenario:
    return build_scenario(load_scenario_file(resolve_scenario_path(str(target))))
