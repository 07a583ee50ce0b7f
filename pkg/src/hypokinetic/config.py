"""INI-style scenario configuration with strict key checking.

Every key has a default; unknown sections or keys are errors that name the
offending entry.  Values are validated by building the objects they feed
(grid, sigma model, scenario) before any computation starts.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .solver import INITIAL_KINDS, MODELS, Scenario
from .uq import LMAX_GUARD, SigmaModel


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _pos_float(v: float) -> bool:
    return math.isfinite(v) and v > 0


# (type, default, validator or choices)
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {
        "nx": (int, 32, None),
        "lx": (float, 2.0 * math.pi, _pos_float),
        "nv": (int, 16, None),
        "velocity_rule": (str, "gauss_hermite", ("gauss_hermite", "uniform_symmetric")),
        "v_shift": (float, 0.0, math.isfinite),
        "derivative_rule": (str, "spectral", ("spectral", "central2")),
    },
    "model": {
        "model": (str, "bgk", MODELS),
        "kernel_strength": (float, 0.5, lambda v: math.isfinite(v) and v >= 0),
    },
    "scaling": {
        "scaling": (str, "kinetic", ("kinetic", "parabolic", "highfield")),
        "kn": (float, 1.0, lambda v: 0 < v <= 1),
    },
    "sigma": {
        "kind": (str, "constant", ("constant", "affine", "analytic")),
        "sigma0": (float, 1.0, math.isfinite),
        "sigma1": (float, 0.0, math.isfinite),
        "z_min": (float, -1.0, math.isfinite),
        "z_max": (float, 1.0, math.isfinite),
        "z0": (float, 0.0, math.isfinite),
    },
    "initial": {
        "kind": (str, "default", INITIAL_KINDS),
        "seed": (int, 0, lambda v: v >= 0),
        "h": (float, 0.0, lambda v: math.isfinite(v) and v >= 0),
    },
    "time": {
        "t_end": (float, 10.0, _pos_float),
        "dt": (float, 0.0, lambda v: math.isfinite(v) and v >= 0),  # 0 selects the largest stable step
        "save_every": (int, 1, lambda v: v >= 1),
        "collision_rule": (str, "exponential", ("exponential", "implicit")),
    },
    "uq": {
        "lmax": (int, 5, lambda v: 0 <= v <= LMAX_GUARD),
        "collocation_nodes": (int, 17, lambda v: v >= 7 and v % 2 == 1),  # odd, so the midpoint is a node
    },
    "output": {
        "dir": (str, "out", None),
        "fit_window": (float, 0.5, lambda v: 0 < v <= 1),
    },
}


def _convert(section: str, key: str, raw: str):
    typ, _, check = SCHEMA[section][key]
    try:
        value = typ(raw) if typ is not int else int(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected {typ.__name__}") from None
    if isinstance(check, tuple):
        if value not in check:
            raise ConfigError(f"[{section}] {key} = {value!r}: expected one of {', '.join(check)}")
    elif check is not None and not check(value):
        raise ConfigError(f"[{section}] {key} = {raw!r}: value out of range")
    return value


@dataclass
class Config:
    values: dict[str, dict[str, object]] = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        full = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
        for sec, items in self.values.items():
            full[sec].update(items)
        self.values = full

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def override(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        self.values[section][key] = _convert(section, key, str(value))

    def sigma_model(self) -> SigmaModel:
        """The configured coefficient; ``constant`` is the affine model with ``sigma1 = 0``."""
        s = self["sigma"]
        if not s["z_min"] < s["z_max"]:
            raise ConfigError("[sigma] z_min must be smaller than z_max")
        if s["kind"] == "constant":
            return SigmaModel("affine", s["sigma0"], 0.0, (s["z_min"], s["z_max"]))
        return SigmaModel(s["kind"], s["sigma0"], s["sigma1"], (s["z_min"], s["z_max"]))

    def scenario(self) -> Scenario:
        g, t = self["grid"], self["time"]
        sigma = self.sigma_model()
        try:
            scen = Scenario(
                model=self["model"]["model"],
                scaling=self["scaling"]["scaling"],
                kn=self["scaling"]["kn"],
                nx=g["nx"],
                lx=g["lx"],
                nv=g["nv"],
                velocity_rule=g["velocity_rule"],
                v_shift=g["v_shift"],
                derivative_rule=g["derivative_rule"],
                kernel_strength=self["model"]["kernel_strength"],
                sigma=sigma,
                z=self["sigma"]["z0"],
                t_end=t["t_end"],
                dt=t["dt"] or None,
                save_every=t["save_every"],
                collision_rule=t["collision_rule"],
                initial=self["initial"]["kind"],
                seed=self["initial"]["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return scen

    def validate(self) -> Scenario:
        """Build every derived object once so that invalid input fails before any run."""
        scen = self.scenario()
        try:
            grid = scen.grid
        except ValueError as exc:
            raise ConfigError(f"[grid] {exc}") from None
        sigma = scen.sigma
        lo, hi = sigma.z_interval
        if not lo <= scen.z <= hi:
            raise ConfigError("[sigma] z0 must lie in [z_min, z_max]")
        try:
            sigma.check_positive(grid.x_nodes)
        except ValueError as exc:
            raise ConfigError(f"[sigma] {exc}") from None
        return scen


def parse_config(text: str, source: str | None = None) -> Config:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            values.setdefault(section, {})[key] = _convert(section, key, raw)
    return Config(values, source)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def default_config_text() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {spec[1]}" for key, spec in keys.items())
        lines.append("")
    return "\n".join(lines)
