"""Rotor geometry, rotor field at the rotators, and synthetic attenuation sweeps."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .circulator import CirculatorModel, shielded_attenuation
from .magnetostatics import Magnet, field_at_points

VALIDATED_VELOCITY = (135.0, 370.0)  # deg/s


class GeometryError(ValueError):
    """Raised for rotor layouts that collide or violate the opposing-field layout."""


class TraceFormatError(ValueError):
    """Raised for malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _rz(deg) -> np.ndarray:
    """Rotation matrices about z, shape (..., 3, 3)."""
    a = np.radians(np.asarray(deg, dtype=float))
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    R[..., 2, 2] = 1.0
    return R


@dataclass(frozen=True)
class RotorAssembly:
    """Two side-by-side magnets with opposed axial magnetization.

    Magnets are stored in the rotor frame at zero rotation: x radial, y
    tangential, z along the optical axis. Magnet ``a`` sits nearer the first
    rotator site and magnet ``b`` nearer the second; ``delta_d`` is their
    axial offset.
    """

    magnet_a: Magnet
    magnet_b: Magnet
    radial_standoff: float
    delta_d: float
    phase_deg: float = 0.0
    axial_center_mm: float = 25.0
    orientation: str = "face-on"

    @classmethod
    def build(cls, delta_d: float = 3.0, radial_standoff: float = 11.0, *,
              magnet_dims=(17.0, 9.0, 4.5), remanence_Br: float = 1.0,
              axial_center_mm: float = 25.0, phase_deg: float = 0.0,
              orientation: str = "face-on") -> "RotorAssembly":
        """``magnet_dims`` is (axial length, wide side, thin side) in mm."""
        if delta_d < 0:
            raise GeometryError("delta_d must be >= 0")
        length, wide, thin = (float(v) for v in magnet_dims)
        if orientation == "face-on":
            radial, tangential = thin, wide
        elif orientation == "edge-on":
            radial, tangential = wide, thin
        else:
            raise GeometryError(f"unknown orientation {orientation!r}")
        dims = (radial, tangential, length)
        x = radial_standoff + radial / 2.0
        a = Magnet((x, tangential / 2.0, axial_center_mm - delta_d / 2.0), dims,
                   (0.0, 0.0, 1.0), remanence_Br)
        b = Magnet((x, -tangential / 2.0, axial_center_mm + delta_d / 2.0), dims,
                   (0.0, 0.0, -1.0), remanence_Br)
        return cls(a, b, float(radial_standoff), float(delta_d), float(phase_deg),
                   float(axial_center_mm), orientation)

    def with_delta_d(self, delta_d: float) -> "RotorAssembly":
        shift = (float(delta_d) - self.delta_d) / 2.0
        a = self.magnet_a.with_(center=self.magnet_a.center - (0, 0, shift))
        b = self.magnet_b.with_(center=self.magnet_b.center + (0, 0, shift))
        return replace(self, magnet_a=a, magnet_b=b, delta_d=float(delta_d))

    def with_remanence(self, Br: float) -> "RotorAssembly":
        return replace(self, magnet_a=self.magnet_a.with_(remanence_Br=Br),
                       magnet_b=self.magnet_b.with_(remanence_Br=Br))

    @property
    def magnets(self) -> tuple[Magnet, Magnet]:
        return self.magnet_a, self.magnet_b

    def magnets_at(self, theta_deg: float) -> tuple[Magnet, Magnet]:
        """World-frame magnets at rotor angle ``theta_deg``."""
        R = _rz(theta_deg + self.phase_deg)
        return tuple(m.with_(center=R @ m.center, rotation=R @ m.rotation) for m in self.magnets)


def default_rotor(delta_d: float = 3.0) -> RotorAssembly:
    return RotorAssembly.build(delta_d=delta_d)


def _xy_clearance(m: Magnet) -> float:
    """Closest approach of a z-aligned magnet to the rotation axis, in mm."""
    half = m.dims / 2.0
    corners = np.array([[sx, sy, 0.0] for sx in (-1, 1) for sy in (-1, 1)]) * half
    xy = (corners @ m.rotation.T + m.center)[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    gap = np.maximum(np.maximum(lo, -hi), 0.0)
    return float(np.hypot(*gap))


def _site_points(model: CirculatorModel) -> np.ndarray:
    return np.column_stack([np.zeros(2), np.zeros(2), model.site_z_mm])


def _single_magnet_opposing(magnet: Magnet, model: CirculatorModel, theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    sites = _site_points(model)
    Rt = np.swapaxes(_rz(-theta), -1, -2)  # row-vector form of R(-theta)
    pts = np.einsum("sj,njk->nsk", sites, Rt).reshape(-1, 3)
    Bz = field_at_points(magnet, pts)[:, 2].reshape(len(theta), 2)
    # opposing convention: positive when the field pulls against the bias
    return -Bz


def check_geometry(assembly: RotorAssembly, model: CirculatorModel) -> None:
    radius = model.device_diameter / 2.0
    if assembly.radial_standoff <= radius:
        raise GeometryError("radial standoff must exceed the device radius")
    for name, m in zip("ab", assembly.magnets):
        if _xy_clearance(m) <= radius:
            raise GeometryError(f"magnet {name} overlaps the circulator body")
    bias = model.bias_at_sites
    for i, m in enumerate(assembly.magnets):
        if m.remanence_Br == 0:
            continue
        own = _single_magnet_opposing(m, model, 0.0)[0, i]
        if np.sign(own) != np.sign(bias[i]):
            raise GeometryError(
                f"magnet {'ab'[i]} adds to the bias at its rotator instead of opposing it")


def rotor_field_at_sites(assembly: RotorAssembly, model: CirculatorModel, theta) -> np.ndarray:
    """Axial rotor field at both rotator sites, opposing convention, shape (..., 2) in mT."""
    check_geometry(assembly, model)
    theta_arr = np.asarray(theta, dtype=float)
    phi = theta_arr.reshape(-1) + assembly.phase_deg
    B = sum(_single_magnet_opposing(m, model, phi) for m in assembly.magnets)
    return B.reshape(theta_arr.shape + (2,))


def response(model: CirculatorModel, assembly: RotorAssembly, theta) -> np.ndarray:
    """Absolute double-pass attenuation (dB) versus rotor angle."""
    return shielded_attenuation(model, rotor_field_at_sites(assembly, model, theta), theta)


def revolution_minimum(model: CirculatorModel, assembly: RotorAssembly,
                       grid_step_deg: float = 0.1) -> float:
    """Continuous minimum of the response over one revolution."""
    from scipy.optimize import minimize_scalar

    grid = np.arange(0.0, 360.0, grid_step_deg)
    vals = np.asarray(response(model, assembly, grid))
    k = int(np.argmin(vals))
    res = minimize_scalar(lambda t: float(response(model, assembly, t)),
                          bounds=(grid[k] - grid_step_deg, grid[k] + grid_step_deg),
                          method="bounded", options={"xatol": 1e-10})
    return float(min(vals[k], res.fun))


@dataclass(frozen=True)
class SweepConfig:
    velocity_deg_per_s: float = 200.0
    dt_s: float = 0.005
    revolutions: float = 1.0
    noise_sigma_dB: float = 0.017
    start_deg: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.velocity_deg_per_s) and self.velocity_deg_per_s > 0):
            raise ValueError("velocity must be finite and positive")
        if self.dt_s <= 0:
            raise ValueError("dt_s must be positive")
        if self.revolutions < 1:
            raise ValueError("revolutions must be >= 1")
        if self.noise_sigma_dB < 0:
            raise ValueError("noise_sigma_dB must be >= 0")
        lo, hi = VALIDATED_VELOCITY
        if not lo <= abs(self.velocity_deg_per_s) <= hi:
            warnings.warn(f"velocity {self.velocity_deg_per_s} deg/s is outside the validated "
                          f"{lo:g}-{hi:g} deg/s band", RuntimeWarning, stacklevel=2)


@dataclass(frozen=True)
class AttenuationTrace:
    t_s: np.ndarray
    alpha_dB: np.ndarray
    theta_true_deg: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t_s, dtype=float).reshape(-1)
        a = np.asarray(self.alpha_dB, dtype=float).reshape(-1)
        if t.shape != a.shape:
            raise ValueError("t_s and alpha_dB lengths differ")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a))):
            raise ValueError("trace values must be finite")
        if len(t) > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise ValueError("timestamps must be strictly increasing")
            if np.ptp(d) > 1e-6 * d.mean():
                raise ValueError("timestamps must be uniformly spaced")
        th = self.theta_true_deg
        if th is not None:
            th = np.asarray(th, dtype=float).reshape(-1)
            if th.shape != t.shape:
                raise ValueError("theta_true_deg length differs from t_s")
        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "alpha_dB", a)
        object.__setattr__(self, "theta_true_deg", th)

    def __len__(self) -> int:
        return len(self.t_s)

    @property
    def dt_s(self) -> float:
        return float(np.diff(self.t_s).mean()) if len(self) > 1 else float("nan")

    def window(self, start: int, stop: int) -> "AttenuationTrace":
        th = None if self.theta_true_deg is None else self.theta_true_deg[start:stop]
        return AttenuationTrace(self.t_s[start:stop], self.alpha_dB[start:stop], th)


def sample_noise(seed: int, n: int, sigma: float) -> np.ndarray:
    """Gaussian noise from a counter-based stream: sample i depends only on (seed, i)."""
    if sigma == 0 or n == 0:
        return np.zeros(n)
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    return sigma * gen.standard_normal(n)


def noisy_attenuation(clean: np.ndarray, seed: int, sigma: float) -> np.ndarray:
    # not clipped: clipping at the 0 dB reference would bias readings near the minimum
    return clean + sample_noise(seed, len(clean), sigma)


def synthesize_sweep(model: CirculatorModel, assembly: RotorAssembly, config: SweepConfig,
                     seed: int) -> AttenuationTrace:
    """Constant-velocity rotation sampled every ``dt``.

    The sample interval is adjusted (by less than half a sample per sweep) so
    the sweep ends exactly on the last revolution boundary.
    """
    v = config.velocity_deg_per_s
    span = 360.0 * config.revolutions
    n_int = max(1, int(round(span / (v * config.dt_s))))
    dt = span / (v * n_int)
    t = np.arange(n_int + 1) * dt
    step = span / n_int
    theta = config.start_deg + np.arange(n_int + 1) * step
    ref = revolution_minimum(model, assembly)
    clean = np.maximum(np.asarray(response(model, assembly, theta)) - ref, 0.0)
    alpha = noisy_attenuation(clean, seed, config.noise_sigma_dB)
    return AttenuationTrace(t, alpha, theta)


def write_trace(path, trace: AttenuationTrace) -> None:
    with_theta = trace.theta_true_deg is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "alpha_dB"] + (["theta_true_deg"] if with_theta else []))
        cols = [trace.t_s, trace.alpha_dB] + ([trace.theta_true_deg] if with_theta else [])
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def read_trace(path) -> AttenuationTrace:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TraceFormatError("empty file, expected header", 1)
    header = [h.strip() for h in rows[0]]
    if header not in (["t_s", "alpha_dB"], ["t_s", "alpha_dB", "theta_true_deg"]):
        raise TraceFormatError(f"unexpected header {','.join(header)}", 1)
    ncol = len(header)
    data = np.empty((len(rows) - 1, ncol))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != ncol:
            raise TraceFormatError(f"expected {ncol} columns, got {len(row)}", line)
        try:
            data[i] = [float(v) for v in row]
        except ValueError:
            raise TraceFormatError(f"non-numeric value in {row}", line) from None
        if not np.all(np.isfinite(data[i])):
            raise TraceFormatError("non-finite value", line)
        if i > 0 and data[i, 0] <= data[i - 1, 0]:
            raise TraceFormatError("timestamps not strictly increasing", line)
    if len(data) > 2:
        d = np.diff(data[:, 0])
        bad = np.flatnonzero(np.abs(d - d[0]) > 1e-6 * d[0])
        if bad.size:
            raise TraceFormatError("non-uniform sample spacing", int(bad[0]) + 3)
    return AttenuationTrace(data[:, 0], data[:, 1], data[:, 2] if ncol == 3 else None)
