"""Flat INI run configuration with strict key validation.

Every key has a default below; a config file may override any subset but
unknown sections or keys are rejected so experiment files stay honest.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict] = {
    "optics": {
        "focal_length": 0.016,
        "f_number": 1.4,
        "focus_distance": 0.5,
        "pixel_pitch": 1.44e-5,
        "sensor_width": 640,
        "sensor_height": 480,
        "aperture": "coded",  # coded | open | pinhole
        "mask_file": "",
    },
    "planes": {"min": 0.5, "max": 2.5, "step": 0.25},
    "pattern": {
        "seed": 7,
        "count": 300,
        "dot_radius_px": 1.5,
        "min_separation": 0.03,
        "intensity": 1.0,
    },
    "datagen": {
        "count": 2000,
        "max_polygons": 6,
        "vertex_min": 3,
        "vertex_max": 10,
        "size_min": 0.08,
        "size_max": 0.45,
        "alpha_min": 0.4,
        "alpha_max": 1.0,
        "w_ref_min": 0.0,
        "w_ref_max": 0.15,
        "noise_min": 0.005,
        "noise_max": 0.03,
        "background": "procedural",
        "background_dir": "",
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "epochs": 50,
        "decay_factor": 0.5,
        "decay_every": 10,
        "huber_delta": 0.25,
        "patch_size": 33,
        "dots_per_pair": 64,
        "seed": 0,
    },
    "nav": {
        "dodge_distance": 1.0,
        "forward_speed": 1.0,
        "repulse_gain": 3.0,
        "max_lateral": 1.0,
        "max_vertical": 0.6,
        "fg_area_deadband": 0.02,
        "logvar_cap": 14.0,
    },
    "sim": {
        "dt": 0.05,
        "max_steps": 400,
        "trials": 20,
        "density": 0.12,
        "bounds_x": 12.0,
        "bounds_y": 8.0,
        "bounds_z": 3.5,
        "altitude": 1.5,
        "obstacle_mix": "forest",
        "latency_frames": 0,
        "sensor_width": 320,
        "sensor_height": 240,
        "tm_cell": 32,
    },
    "benchmark": {
        "zf_list": "0.5,0.75,1.0",
        "zb_list": "1.0,1.5,2.0,2.5",
        "seeds": 10,
        "noise_sigma": 0.005,
        "tm_cell": 64,
        "tm_min_peak": 0.05,
        "dog_threshold": 0.01,
        "offsets_cm": "0,1,2,4",
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, dict]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def floats(self, section: str, key: str) -> tuple[float, ...]:
        raw = str(self.get(section, key))
        return tuple(float(t) for t in raw.split(",") if t.strip())

    def lines(self) -> list[str]:
        out = []
        for section in sorted(self.values):
            out.append(f"[{section}]")
            for key in sorted(self.values[section]):
                out.append(f"{key}={self.values[section][key]}")
        return out


def _coerce(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}={raw!r}: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, overlaid with an optional INI file and explicit overrides."""
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[section][key] = _coerce(section, key, raw)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        values[section][key] = _coerce(section, key, str(value))
    _validate(values)
    return RunConfig(values=values)


def _validate(values: dict[str, dict]) -> None:
    planes = values["planes"]
    if not (0 < planes["min"] < planes["max"]) or planes["step"] <= 0:
        raise ConfigError("[planes] requires 0 < min < max and step > 0")
    if values["optics"]["aperture"] not in ("coded", "open", "pinhole"):
        raise ConfigError("[optics] aperture must be coded, open, or pinhole")
    if values["datagen"]["background"] not in ("procedural", "directory"):
        raise ConfigError("[datagen] background must be procedural or directory")
    if values["sim"]["obstacle_mix"] not in ("forest", "dark"):
        raise ConfigError("[sim] obstacle_mix must be forest or dark")
    for section, key in (
        ("optics", "focal_length"),
        ("optics", "pixel_pitch"),
        ("nav", "forward_speed"),
        ("sim", "dt"),
        ("train", "learning_rate"),
    ):
        if values[section][key] <= 0:
            raise ConfigError(f"[{section}] {key} must be > 0")


def config_planes(config: RunConfig) -> tuple[float, ...]:
    lo = config.get("planes", "min")
    hi = config.get("planes", "max")
    step = config.get("planes", "step")
    out = []
    z = lo
    while z <= hi + 1e-9:
        out.append(round(z / step) * step)
        z += step
    if len(out) < 1 or any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError("[planes] does not produce an increasing plane set")
    return tuple(out)
