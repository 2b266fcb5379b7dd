"""Robot-joint simulation: stepped rotations with dwells, decoded from the attenuation."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .circulator import CirculatorModel
from .encoder import (CalibrationTable, DecodedTrace, TrackingLossError, build_calibration,
                      decode_trace, default_max_step, home_estimate)
from .sweep import (VALIDATED_VELOCITY, AttenuationTrace, RotorAssembly, noisy_attenuation,
                    response, revolution_minimum)

SETTLE_FRACTION = 0.2


@dataclass(frozen=True)
class JointProfile:
    """Signed rotation increments, each a trapezoidal move followed by a dwell.

    The joint starts with one dwell at home (0 deg).
    """

    increments_deg: tuple[float, ...] = (10.0,) * 36
    dwell_s: float = 0.5
    velocity_deg_per_s: float = 200.0
    accel_deg_per_s2: float = 2000.0
    dt_s: float = 0.005

    def __post_init__(self):
        object.__setattr__(self, "increments_deg", tuple(float(x) for x in self.increments_deg))
        if self.dwell_s <= 0 or self.dt_s <= 0:
            raise ValueError("dwell_s and dt_s must be positive")
        if self.velocity_deg_per_s <= 0 or self.accel_deg_per_s2 <= 0:
            raise ValueError("velocity and acceleration must be positive")
        if self.dwell_s * (1 - SETTLE_FRACTION) < self.dt_s:
            raise ValueError("dwell too short to average")
        lo, hi = VALIDATED_VELOCITY
        if not lo <= self.velocity_deg_per_s <= hi:
            warnings.warn(f"move velocity {self.velocity_deg_per_s:g} deg/s is outside the "
                          f"validated {lo:g}-{hi:g} deg/s band", RuntimeWarning, stacklevel=3)

    @property
    def commanded_deg(self) -> np.ndarray:
        return np.cumsum(self.increments_deg)

    def _move_time(self, dist: float) -> tuple[float, float, float]:
        v, a = self.velocity_deg_per_s, self.accel_deg_per_s2
        if dist >= v * v / a:
            ta = v / a
            return ta, (dist - v * v / a) / v, v
        ta = np.sqrt(dist / a)
        return ta, 0.0, a * ta

    def segments(self):
        """(t_start, t_end, theta_start, increment, kind) for every move and dwell."""
        segs, t, th = [(0.0, self.dwell_s, 0.0, 0.0, "dwell")], self.dwell_s, 0.0
        for inc in self.increments_deg:
            ta, tc, _ = self._move_time(abs(inc))
            dur = 2 * ta + tc
            if dur > 0:
                segs.append((t, t + dur, th, inc, "move"))
            t += dur
            th += inc
            segs.append((t, t + self.dwell_s, th, 0.0, "dwell"))
            t += self.dwell_s
        return segs

    def trajectory(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample times and true unwrapped angle."""
        segs = self.segments()
        n = int(np.floor(segs[-1][1] / self.dt_s + 1e-9))
        t = np.arange(n) * self.dt_s
        theta = np.empty_like(t)
        a = self.accel_deg_per_s2
        for t0, t1, th0, inc, kind in segs:
            sel = (t >= t0) & (t < t1)
            if kind == "dwell":
                theta[sel] = th0
                continue
            ta, tc, vp = self._move_time(abs(inc))
            tau = t[sel] - t0
            s = np.where(tau < ta, 0.5 * a * tau**2,
                         np.where(tau < ta + tc, 0.5 * vp * ta + vp * (tau - ta),
                                  abs(inc) - 0.5 * a * np.maximum(2 * ta + tc - tau, 0) ** 2))
            theta[sel] = th0 + np.sign(inc) * s
        return t, theta

    def dwell_windows(self, t: np.ndarray) -> list[np.ndarray]:
        """Sample indices of each post-increment dwell, settling margin removed."""
        out = []
        for t0, t1, _, _, kind in self.segments()[1:]:
            if kind != "dwell":
                continue
            start = t0 + SETTLE_FRACTION * (t1 - t0)
            out.append(np.flatnonzero((t >= start - 1e-12) & (t < t1)))
        return out


@dataclass
class JointReport:
    commanded_deg: list[float]
    decoded_deg: list[float]
    per_increment_error_deg: list[float]
    signed_error_deg: list[float]
    mean_abs_error_deg: float
    std_error_deg: float
    flat_fraction: float
    truncated: bool = False
    message: str = ""
    decoded: DecodedTrace | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("decoded")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _flat_dwell_angle(table: CalibrationTable, state, held_unwrapped: float, alpha_mean: float,
                      sigma_mean: float) -> float:
    """Angle from the dwell-averaged attenuation inside a flat stretch.

    When the two mirror solutions are closer together than the noise allows
    to separate, their midpoint (the extremum) is the least-error choice.
    """
    run = table.run_near(state.theta_deg)
    lo, hi, ext, _ = run
    cands = table.crossings(alpha_mean, lo - 1.0, hi + 1.0)
    h = 1.0
    curv = abs(table.alpha_at(ext + h) + table.alpha_at(ext - h) - 2 * table.alpha_at(ext)) / h**2
    # alpha ~ ext + curv/2 * x^2: mirror pairs closer than a 3-sigma dip are unresolved
    x_noise = np.sqrt(6.0 * sigma_mean / curv) if curv > 0 else np.inf
    left, right = cands[cands <= ext], cands[cands >= ext]
    if left.size == 0 and right.size == 0:
        est = ext
    elif left.size and right.size and 0.5 * (right.min() - left.max()) <= x_noise:
        est = 0.5 * (right.min() + left.max())
    elif state.crossed and state.direction != 0:
        pool = right if (state.direction > 0 and right.size) or not left.size else left
        est = float(pool[np.argmin(np.abs(pool - ext))])
    else:
        est = float(cands[np.argmin(np.abs(cands - state.theta_deg))])
    return held_unwrapped + float(np.remainder(est - state.theta_deg + 180.0, 360.0) - 180.0)


def joint_trace(model: CirculatorModel, assembly: RotorAssembly, profile: JointProfile,
                noise_sigma_dB: float, seed: int) -> AttenuationTrace:
    """Attenuation seen while the joint follows ``profile``; carries the true angle."""
    t, theta = profile.trajectory()
    ref = revolution_minimum(model, assembly)
    clean = np.maximum(np.asarray(response(model, assembly, theta)) - ref, 0.0)
    return AttenuationTrace(t, noisy_attenuation(clean, seed, noise_sigma_dB), theta)


def simulate_joint(model: CirculatorModel, assembly: RotorAssembly, profile: JointProfile,
                   noise_sigma_dB: float, seed: int, table: CalibrationTable | None = None,
                   max_step_deg: float | None = None) -> JointReport:
    """Run the profile through the sensor model and decode each dwell."""
    table = table if table is not None else build_calibration(model, assembly)
    trace = joint_trace(model, assembly, profile, noise_sigma_dB, seed)
    t, alpha = trace.t_s, trace.alpha_dB
    first = next((np.sign(x) for x in profile.increments_deg if x != 0), 1.0)
    init = home_estimate(table, 0.0, int(first))
    max_step = max_step_deg if max_step_deg is not None else default_max_step(
        table, profile.velocity_deg_per_s, profile.dt_s, noise_sigma_dB)
    commanded = profile.commanded_deg
    truncated, message = False, ""
    try:
        dec = decode_trace(table, trace, init, max_step_deg=max_step,
                           noise_sigma_dB=noise_sigma_dB, start_unwrapped_deg=0.0)
    except TrackingLossError as exc:
        dec, truncated = exc.partial, True
        message = f"tracking lost at t={t[exc.index]:.3f} s: {exc}"
    decoded = []
    sigma_avg = noise_sigma_dB
    for idx in profile.dwell_windows(t):
        idx = idx[idx < len(dec)]
        if idx.size == 0 or (truncated and idx[-1] >= len(dec) - 1):
            break
        flat = dec.flat[idx]
        if flat.mean() > 0.5:
            s_avg = max(sigma_avg / np.sqrt(idx.size), 1e-12)
            est = _flat_dwell_angle(table, dec.states[idx[-1]], dec.theta_deg[idx[-1]],
                                    float(alpha[idx].mean()), s_avg)
        else:
            est = float(dec.theta_deg[idx][~flat].mean())
        decoded.append(est)
    n = len(decoded)
    signed = np.asarray(decoded) - commanded[:n]
    abs_err = np.abs(signed)
    return JointReport(
        commanded_deg=[float(c) for c in commanded[:n]],
        decoded_deg=[float(d) for d in decoded],
        per_increment_error_deg=[float(e) for e in abs_err],
        signed_error_deg=[float(e) for e in signed],
        mean_abs_error_deg=float(abs_err.mean()) if n else 0.0,
        std_error_deg=float(signed.std()) if n else 0.0,
        flat_fraction=float(dec.flat.mean()) if len(dec) else 0.0,
        truncated=truncated, message=message, decoded=dec)


def protractor_reference(profile: JointProfile, quantization_deg: float = 1.0,
                         seed: int = 0) -> np.ndarray:
    """Reference readings: commanded angles rounded to the dial with +-1 count jitter."""
    truth = profile.commanded_deg
    if quantization_deg == 0:
        return truth.copy()
    if quantization_deg < 0:
        raise ValueError("quantization must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    counts = np.rint(truth / quantization_deg) + rng.integers(-1, 2, size=truth.shape)
    return counts * quantization_deg
