"""YAML run configuration with unit conversion at the boundary.

Frequencies are written in GHz, couplings in MHz (both as f = omega / 2 pi)
and lifetimes in microseconds; everything is converted to rad/s and seconds
on load.  Unknown keys and malformed values are reported with their line.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

from .device import GHZ, MHZ, US, DeviceParams, derived_couplings, solve_matched_couplings
from .experiments import SolverConfig

PRESETS = ("table1",)


class ConfigError(ValueError):
    """Malformed configuration; the message names the file and line when known."""


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return int(v)


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _floats(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of numbers")
    return [_float(x) for x in v]


def _ints(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of integers")
    return [_int(x) for x in v]


def _float_or_floats(v):
    return _floats(v) if isinstance(v, list) else _float(v)


def _optional(kind):
    def check(v):
        return None if v is None else kind(v)
    return check


# section -> key -> (validator, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "device": {
        "alpha": (_float, 1.25),
        "omega_eg_ghz": (_float, 4.0),
        "omega_fe_ghz": (_float, 3.3),
        "omega_c_ghz": (_floats, [3.24, 3.21, 3.18]),
        "g1_mhz": (_float, 4.5),
        "g_mhz": (_optional(_floats), None),
        "mismatch_c": (_float, 0.0),
        "tilde_ratio": (_float, 1 / math.sqrt(2)),
        "prime_ratio": (_float, 0.01),
        "cross_ratio": (_float, 0.01),
        "kappa_inv_us": (_float_or_floats, 45.0),
        "gamma_eg_inv_us": (_float, 60.0),
        "gamma_fe_inv_us": (_float, 30.0),
        "gamma_fg_inv_us": (_float, 150.0),
        "gamma_phi_e_inv_us": (_float, 20.0),
        "gamma_phi_f_inv_us": (_float, 20.0),
    },
    "solver": {
        "method": (_str, "trajectories"),
        "integrator": (_str, "exact"),
        "cutoff": (_int, 15),
        "resolution": (_float, 20.0),
        "n_traj": (_int, 2000),
        "seed": (_int, 0),
        "drop_gprime": (_bool, True),
    },
    "sweep": {
        "kappa_inv_us": (_floats, [45.0, 60.0, 100.0]),
        "delta": (_floats, [-0.1, -0.05, 0.0, 0.05, 0.1]),
        "c": (_floats, [-0.05, -0.025, 0.0, 0.025, 0.05]),
    },
    "gate": {
        "cutoff": (_int, 15),
        "threshold": (_float, 1e-4),
        "reference_extra": (_int, 10),
    },
    "diagnose": {"threshold": (_float, 10.0)},
    "ghz": {"n_cats": (_int, 3), "m_spectators": (_int, 0)},
    "converge": {
        "cutoffs": (_ints, [10, 15, 20]),
        "resolutions": (_floats, [20.0, 40.0]),
        "threshold": (_float, 5e-4),
    },
}
TOP_LEVEL = {"output_dir": (_str, "results")}


def _defaults() -> dict:
    out = {sec: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    out.update({k: d for k, (_, d) in TOP_LEVEL.items()})
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=_defaults)
    source: str = "<defaults>"

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def set(self, section: str, key: str, value: Any) -> "RunConfig":
        """Validated copy with one value replaced (used for command-line overrides)."""
        schema = SCHEMA[section] if section in SCHEMA else None
        if schema is None or key not in schema:
            raise ConfigError(f"unknown setting {section}.{key}")
        try:
            checked = schema[key][0](value)
        except TypeError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
        out = RunConfig(copy.deepcopy(self.values), self.source)
        out.values[section][key] = checked
        return out

    def device_params(self) -> DeviceParams:
        d = self.values["device"]
        try:
            return _device_params(d)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: device: {exc}") from None

    def solver_config(self) -> SolverConfig:
        s = self.values["solver"]
        try:
            return SolverConfig(method=s["method"], cutoff=s["cutoff"], resolution=s["resolution"],
                                n_traj=s["n_traj"], seed=s["seed"], integrator=s["integrator"],
                                drop_gprime=s["drop_gprime"])
        except ValueError as exc:
            raise ConfigError(f"{self.source}: solver: {exc}") from None

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    def dump(self) -> str:
        return yaml.safe_dump(self.values, sort_keys=False, default_flow_style=None)


def _lifetime_rate(inv_us: float, name: str) -> float:
    if not inv_us > 0:
        raise ValueError(f"{name} must be positive (use .inf to disable the channel)")
    return 0.0 if math.isinf(inv_us) else 1.0 / (inv_us * US)


def _device_params(d: dict) -> DeviceParams:
    if not d["alpha"] > 0:
        raise ValueError("alpha must be positive")
    omega_c = tuple(f * GHZ for f in d["omega_c_ghz"])
    if not omega_c:
        raise ValueError("omega_c_ghz needs at least one cavity")
    if min(d["omega_eg_ghz"], d["omega_fe_ghz"], *d["omega_c_ghz"]) <= 0:
        raise ValueError("frequencies must be positive")
    omega_eg, omega_fe = d["omega_eg_ghz"] * GHZ, d["omega_fe_ghz"] * GHZ
    det = omega_fe - np.asarray(omega_c)
    if d["g_mhz"] is not None:
        if len(d["g_mhz"]) != len(omega_c):
            raise ValueError("g_mhz needs one entry per cavity")
        g = tuple(x * MHZ for x in d["g_mhz"])
    else:
        g = solve_matched_couplings(d["g1_mhz"] * MHZ, det, d["mismatch_c"])
    n = len(omega_c)
    kinv = d["kappa_inv_us"]
    kinv = list(kinv) if isinstance(kinv, list) else [kinv] * n
    if len(kinv) != n:
        raise ValueError("kappa_inv_us needs one entry per cavity or a single value")
    return DeviceParams(
        alpha=d["alpha"],
        omega_eg=omega_eg,
        omega_fe=omega_fe,
        omega_fg=omega_eg + omega_fe,
        omega_c=omega_c,
        kappa=tuple(_lifetime_rate(k, "kappa_inv_us") for k in kinv),
        gamma_eg=_lifetime_rate(d["gamma_eg_inv_us"], "gamma_eg_inv_us"),
        gamma_fe=_lifetime_rate(d["gamma_fe_inv_us"], "gamma_fe_inv_us"),
        gamma_fg=_lifetime_rate(d["gamma_fg_inv_us"], "gamma_fg_inv_us"),
        gamma_phi_e=_lifetime_rate(d["gamma_phi_e_inv_us"], "gamma_phi_e_inv_us"),
        gamma_phi_f=_lifetime_rate(d["gamma_phi_f_inv_us"], "gamma_phi_f_inv_us"),
        c_mismatch=d["mismatch_c"],
        **derived_couplings(g, d["tilde_ratio"], d["prime_ratio"], d["cross_ratio"]),
    )


def _line(node) -> int:
    return node.start_mark.line + 1


def _plain(loader: yaml.SafeLoader, node) -> Any:
    return loader.construct_object(node, deep=True)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Validate YAML text against the schema; missing keys take their defaults."""
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    values = _defaults()
    if root is None:
        return RunConfig(values, source)
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}:{_line(root)}: top level must be a mapping")
    seen = set()
    for knode, vnode in root.value:
        key = _plain(loader, knode)
        if key in seen:
            raise ConfigError(f"{source}:{_line(knode)}: duplicate key '{key}'")
        seen.add(key)
        if key in TOP_LEVEL:
            try:
                values[key] = TOP_LEVEL[key][0](_plain(loader, vnode))
            except TypeError as exc:
                raise ConfigError(f"{source}:{_line(vnode)}: {key}: {exc}") from None
            continue
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{_line(knode)}: unknown key '{key}'")
        if not isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"{source}:{_line(vnode)}: section '{key}' must be a mapping")
        inner_seen = set()
        for ik, iv in vnode.value:
            name = _plain(loader, ik)
            if name not in SCHEMA[key]:
                raise ConfigError(f"{source}:{_line(ik)}: unknown key '{name}' in section '{key}'")
            if name in inner_seen:
                raise ConfigError(f"{source}:{_line(ik)}: duplicate key '{name}' in section '{key}'")
            inner_seen.add(name)
            try:
                values[key][name] = SCHEMA[key][name][0](_plain(loader, iv))
            except TypeError as exc:
                raise ConfigError(f"{source}:{_line(iv)}: {key}.{name}: {exc}") from None
    return RunConfig(values, source)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a config file, or a bundled preset by name (default ``table1``)."""
    if path is None or str(path) in PRESETS:
        name = "table1" if path is None else str(path)
        text = resources.files("hybridcnot").joinpath("presets", f"{name}.yaml").read_text()
        return parse_config(text, f"preset:{name}")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read ({exc.strerror})") from None
    return parse_config(text, str(p))
