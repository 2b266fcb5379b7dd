"""TOML run configuration with strict key checking."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import tomli
import tomli_w

from .circulator import CirculatorModel, InternalFieldProfile, ShieldModel, calibrate_lumped_K
from .jointsim import JointProfile
from .sweep import RotorAssembly, SweepConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "circulator": {
        # [center_cm, peak_mT, width_cm]; with pin_lobe_peaks the profile equals peak_mT at center
        "lobes": [[2.0, 4.8, 0.4], [3.0, -3.4, 0.4]],
        "pin_lobe_peaks": True,
        "yig_sites_cm": [2.0, 3.0],
        "sigma0": 0.42,
        "shielded_azimuth_deg": [270.0, 90.0],
        "lumped_K": "auto",
        "saturation_alpha_max_dB": 30.0,
        "device_diameter_mm": 4.5,
        "response": "linear",
    },
    "rotor": {
        "delta_d_mm": 3.0,
        "radial_standoff_mm": 11.0,
        "axial_center_cm": 2.5,
        "phase_deg": 0.0,
        "remanence_T": 1.0,
        "magnet_dims_mm": [17.0, 9.0, 4.5],
        "orientation": "face-on",
    },
    "sweep": {
        "velocity_deg_per_s": 200.0,
        "dt_s": 0.005,
        "revolutions": 1.0,
        "noise_sigma_dB": 0.017,
    },
    "encoder": {
        "grid_step_deg": 0.1,
        "target_resolution_deg": 0.3,
        # noise level the sensitivity is calibrated against, independent of [sweep]
        "calibration_noise_sigma_dB": 0.017,
        "direction_hint": 1,
    },
    "placement": {
        "delta_d_min_mm": 0.0,
        "delta_d_max_mm": 5.0,
        "delta_d_step_mm": 0.5,
    },
    "joint": {
        "increments_deg": [10.0] * 36,
        "dwell_s": 0.5,
        "velocity_deg_per_s": 200.0,
        "accel_deg_per_s2": 2000.0,
        "runs": 1,
        "protractor_quantization_deg": 1.0,
    },
    "field_map": {
        # plane through the magnets' mid-height, rotor at zero angle
        "x_range_mm": [-10.0, 40.0],
        "y_range_mm": [-20.0, 20.0],
        "step_mm": 1.0,
        "profile_offset_mm": 2.3,
        "profile_samples": 201,
    },
}


def _check_value(section: str, key: str, value, default):
    where = f"[{section}].{key}"
    if key == "lumped_K":
        if value == "auto" or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return float(value) if value != "auto" else value
        raise ConfigError(f"{where} must be a number or \"auto\"")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool) and key in ("runs", "profile_samples", "direction_hint"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        try:
            if default and isinstance(default[0], list):
                return [[float(x) for x in row] for row in value]
            return [float(x) for x in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{where} must hold numbers") from None
    raise ConfigError(f"{where}: unsupported value")


def merge(user: dict) -> dict:
    """Defaults overlaid with ``user``; unknown sections or keys are rejected by name."""
    out = copy.deepcopy(DEFAULTS)
    for section, body in user.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key [{section}].{key}")
            out[section][key] = _check_value(section, key, value, DEFAULTS[section][key])
    return out


def load_config(path=None) -> dict:
    if path is None:
        return merge({})
    try:
        with open(Path(path), "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return merge(raw)


def dump_config(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


@dataclass(frozen=True)
class RunObjects:
    model: CirculatorModel
    assembly: RotorAssembly
    sweep: SweepConfig
    joint: JointProfile
    lumped_K: float


def build(cfg: dict, calibrate: bool = True) -> RunObjects:
    """Construct model objects; invalid physical parameters surface as ConfigError.

    With ``calibrate=False`` an "auto" gain is left at 1 dB/mT, which is
    enough for commands that only need the rotor geometry.
    """
    c, r, s, e, j = (cfg[k] for k in ("circulator", "rotor", "sweep", "encoder", "joint"))
    try:
        profile = (InternalFieldProfile.pinned(c["lobes"]) if c["pin_lobe_peaks"]
                   else InternalFieldProfile(tuple(tuple(l) for l in c["lobes"])))
        shield = ShieldModel(c["sigma0"], tuple(c["shielded_azimuth_deg"]))
        K = 1.0 if c["lumped_K"] == "auto" else c["lumped_K"]
        model = CirculatorModel(profile, tuple(c["yig_sites_cm"]), shield, K,
                                c["saturation_alpha_max_dB"], c["device_diameter_mm"], c["response"])
        assembly = RotorAssembly.build(
            r["delta_d_mm"], r["radial_standoff_mm"], magnet_dims=tuple(r["magnet_dims_mm"]),
            remanence_Br=r["remanence_T"], axial_center_mm=10.0 * r["axial_center_cm"],
            phase_deg=r["phase_deg"], orientation=r["orientation"])
        from .sweep import check_geometry
        check_geometry(assembly, model)
        sweep = SweepConfig(s["velocity_deg_per_s"], s["dt_s"], s["revolutions"], s["noise_sigma_dB"])
        joint = JointProfile(tuple(j["increments_deg"]), j["dwell_s"], j["velocity_deg_per_s"],
                             j["accel_deg_per_s2"], s["dt_s"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if c["lumped_K"] == "auto" and calibrate:
        model = calibrate_lumped_K(model, e["calibration_noise_sigma_dB"], e["target_resolution_deg"],
                                   assembly, e["grid_step_deg"])
    return RunObjects(model, assembly, sweep, joint, model.lumped_K)
