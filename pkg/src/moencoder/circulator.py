"""Optical response of the modified circulator.

The circulator carries two YIG Faraday rotators, each biased by an internal
magnet. An externally added axial field ``B_add`` pulls the bias back and the
residual field sets the polarization rotation, hence the attenuation. Fields
passed in here use the opposing-field sign convention: ``B_add`` equal to the
local bias cancels it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

DEVICE_LENGTH_CM = 5.0


class CalibrationError(RuntimeError):
    """Raised when the sensitivity cannot be fitted to the requested resolution."""


@dataclass(frozen=True)
class InternalFieldProfile:
    """Two-lobe Gaussian model of the bias field along the device axis.

    Each lobe is ``(center_l_cm, peak_B_mT, width_cm)`` with ``width`` the
    Gaussian standard deviation.
    """

    lobes: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        lobes = tuple(tuple(float(v) for v in lobe) for lobe in self.lobes)
        centers = [c for c, _, _ in lobes]
        if any(not 0.0 <= c <= DEVICE_LENGTH_CM for c in centers):
            raise ValueError("lobe centers must lie inside the device")
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise ValueError("lobe centers must be strictly increasing")
        if any(w <= 0 for _, _, w in lobes):
            raise ValueError("lobe widths must be positive")
        object.__setattr__(self, "lobes", lobes)

    @classmethod
    def pinned(cls, targets: Sequence[Sequence[float]]) -> "InternalFieldProfile":
        """Solve lobe amplitudes so the summed profile hits each target at its center.

        ``targets`` holds ``(center_l_cm, value_mT, width_cm)``; the neighbouring
        lobes' tails are compensated exactly.
        """
        targets = np.asarray(targets, dtype=float).reshape(-1, 3)
        if len(targets) == 0:
            return cls(())
        c, v, w = targets.T
        G = np.exp(-0.5 * ((c[:, None] - c[None, :]) / w[None, :]) ** 2)
        amps = np.linalg.solve(G, v)
        return cls(tuple(zip(c, amps, w)))

    def __call__(self, l) -> np.ndarray:
        return internal_field_at(self, l)


def default_profile() -> InternalFieldProfile:
    # magnetometer peaks on the unshielded side
    return InternalFieldProfile.pinned([(2.0, 4.8, 0.4), (3.0, -3.4, 0.4)])


def internal_field_at(profile: InternalFieldProfile, l):
    l_arr = np.asarray(l, dtype=float)
    if np.any((l_arr < 0) | (l_arr > DEVICE_LENGTH_CM)):
        raise ValueError(f"axial position outside device [0, {DEVICE_LENGTH_CM}] cm")
    out = np.zeros_like(l_arr)
    for c, a, w in profile.lobes:
        out = out + a * np.exp(-0.5 * ((l_arr - c) / w) ** 2)
    return float(out) if out.ndim == 0 else out


def _wrap180(deg):
    return np.remainder(np.asarray(deg, dtype=float) + 180.0, 360.0) - 180.0


@dataclass(frozen=True)
class ShieldModel:
    """Kovar half-cylinder shielding.

    ``shielded_azimuth`` is the (start, end) azimuth interval covered by the
    Kovar, read counter-clockwise and allowed to wrap through 0.
    """

    shield_ratio_sigma0: float = 0.42
    shielded_azimuth: tuple[float, float] = (270.0, 90.0)

    def __post_init__(self):
        if not 0.0 <= self.shield_ratio_sigma0 <= 1.0:
            raise ValueError("shield_ratio_sigma0 must be in [0, 1]")
        width = self.width_deg
        if not 0.0 < width < 360.0:
            raise ValueError("shielded azimuth width must be in (0, 360) degrees")

    @property
    def width_deg(self) -> float:
        start, end = self.shielded_azimuth
        return float(np.remainder(end - start, 360.0))

    @property
    def center_deg(self) -> float:
        start, _ = self.shielded_azimuth
        return float(np.remainder(start + self.width_deg / 2.0, 360.0))

    @property
    def unshielded_center_deg(self) -> float:
        return float(np.remainder(self.center_deg + 180.0, 360.0))


def shielding_ratio(shield: ShieldModel, theta):
    """Raised-cosine shielding: sigma0 at the shielded center, 0 opposite."""
    half = np.radians(_wrap180(np.asarray(theta, float) - shield.center_deg)) / 2.0
    s = shield.shield_ratio_sigma0 * np.cos(half) ** 2
    return float(s) if np.ndim(s) == 0 else s


@dataclass(frozen=True)
class CirculatorModel:
    internal_field: InternalFieldProfile = field(default_factory=default_profile)
    yig_sites: tuple[float, float] = (2.0, 3.0)  # cm
    shield: ShieldModel = field(default_factory=ShieldModel)
    lumped_K: float = 1.0  # dB/mT, one pass through one rotator
    saturation_alpha_max: float = 30.0  # dB
    device_diameter: float = 4.5  # mm
    response: str = "linear"

    def __post_init__(self):
        sites = tuple(float(s) for s in self.yig_sites)
        object.__setattr__(self, "yig_sites", sites)
        if len(sites) != 2:
            raise ValueError("exactly two rotator sites are modelled")
        if any(not 0.0 <= s <= DEVICE_LENGTH_CM for s in sites):
            raise ValueError("rotator sites must lie inside the device")
        lobes = self.internal_field.lobes
        if lobes and any(min(abs(s - c) for c, _, _ in lobes) > 0.3 + 1e-12 for s in sites):
            raise ValueError("each rotator must sit within 0.3 cm of a field lobe")
        if not np.isfinite(self.lumped_K):
            raise ValueError("lumped_K must be finite")
        if self.saturation_alpha_max <= 0:
            raise ValueError("saturation_alpha_max must be positive")
        if self.response not in ("linear", "malus"):
            raise ValueError("response must be 'linear' or 'malus'")

    @property
    def bias_at_sites(self) -> np.ndarray:
        return np.asarray(internal_field_at(self.internal_field, np.array(self.yig_sites)))

    @property
    def site_z_mm(self) -> np.ndarray:
        return np.array(self.yig_sites) * 10.0

    def with_K(self, K: float) -> "CirculatorModel":
        return replace(self, lumped_K=float(K))


def _per_rotator_loss(model: CirculatorModel, residual: np.ndarray) -> np.ndarray:
    lin = np.abs(model.lumped_K * residual)
    if model.response == "linear":
        return lin
    # Malus mode: the linear loss scale maps onto rotation, extinction at the clamp
    phi = np.minimum(lin / model.saturation_alpha_max, 1.0) * (np.pi / 2)
    floor = 10.0 ** (-model.saturation_alpha_max / 10.0)
    return -10.0 * np.log10(np.maximum(np.cos(phi) ** 2, floor))


def _unclamped_single(model: CirculatorModel, B_add_axial) -> np.ndarray:
    B_add = np.asarray(B_add_axial, dtype=float)
    residual = model.bias_at_sites - B_add
    return _per_rotator_loss(model, residual).sum(axis=-1)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def single_pass_attenuation(model: CirculatorModel, B_add_axial):
    """Attenuation (dB) after one pass; ``B_add_axial`` has shape (..., 2)."""
    return _out(np.minimum(_unclamped_single(model, B_add_axial), model.saturation_alpha_max))


def double_pass_attenuation(model: CirculatorModel, B_add_axial):
    """Reflective configuration: the rotators are traversed twice."""
    return _out(np.minimum(2.0 * _unclamped_single(model, B_add_axial), model.saturation_alpha_max))


def shielded_attenuation(model: CirculatorModel, B_add_axial, theta):
    """Double-pass attenuation with the added field partly screened by the Kovar.

    The screened part is ``sigma(theta) * B_add``; ``theta`` broadcasts
    against the leading dimensions of ``B_add_axial``.
    """
    B_add = np.asarray(B_add_axial, dtype=float)
    sigma = np.asarray(shielding_ratio(model.shield, theta))[..., None]
    return double_pass_attenuation(model, B_add - sigma * B_add)


def shielded_side_ratio(model: CirculatorModel) -> float:
    """Bias seen through the Kovar relative to the open side."""
    return 1.0 - model.shield.shield_ratio_sigma0


def calibrate_lumped_K(model: CirculatorModel, noise_sigma_dB: float, target_resolution_deg: float,
                       assembly=None, grid_step_deg: float = 0.1,
                       K_bounds=(1e-6, 1e3), rtol: float = 1e-13) -> CirculatorModel:
    """Bisect lumped_K until the resolution metric of the rotor sweep hits the target.

    A coarse log-spaced scan brackets the first K that reaches the target,
    then bisection in log K refines it.
    """
    from .encoder import build_calibration, resolution_metric, DegenerateCalibrationError
    from .sweep import default_rotor

    if target_resolution_deg <= 0 or noise_sigma_dB <= 0:
        raise ValueError("target resolution and noise must be positive")
    assembly = assembly if assembly is not None else default_rotor()

    def metric(K):
        try:
            table = build_calibration(model.with_K(K), assembly, grid_step_deg)
        except DegenerateCalibrationError:
            return np.inf
        return resolution_metric(table, noise_sigma_dB)

    # the clamp flattens the response at large K, so bracket on a coarse scan first
    logs = np.linspace(np.log(K_bounds[0]), np.log(K_bounds[1]), 61)
    vals = [metric(np.exp(x)) for x in logs]
    hit = [i for i in range(1, len(logs)) if vals[i] <= target_resolution_deg < vals[i - 1]]
    if vals[0] <= target_resolution_deg:
        hit = [0]
    if not hit:
        finite = [v for v in vals if np.isfinite(v)]
        best = min(finite) if finite else np.inf
        raise CalibrationError(
            f"target {target_resolution_deg} deg not reachable for K in {tuple(K_bounds)} "
            f"(best metric {best:.4g} deg)")
    i = hit[0]
    if i == 0:
        return model.with_K(K_bounds[0])
    lo, hi = logs[i - 1], logs[i]
    while hi - lo > rtol:
        mid = 0.5 * (lo + hi)
        if metric(np.exp(mid)) > target_resolution_deg:
            lo = mid
        else:
            hi = mid
    return model.with_K(float(np.exp(0.5 * (lo + hi))))
