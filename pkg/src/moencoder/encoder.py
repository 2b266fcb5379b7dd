"""Angle encoder: calibration table, resolution metric and attenuation-to-angle decoding.

The attenuation waveform is periodic and not injective: every smooth
extremum has a mirror branch on either side. Decoding therefore tracks a
local inversion from a known starting angle. Around extrema the slope
vanishes, so the estimate is held there and flagged. A hysteretic motion
direction decides which branch to take when the hold is released.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .circulator import CirculatorModel
from .sweep import AttenuationTrace, RotorAssembly, TraceFormatError, response

FLAT_PERCENTILE = 10.0
# slopes below this fraction of the largest slope count as exactly zero
SLOPE_ZERO_RTOL = 1e-12


class DegenerateCalibrationError(ValueError):
    """The response does not vary with rotor angle."""


class AmbiguityError(RuntimeError):
    """The correlation search found competing start angles."""

    def __init__(self, message: str, candidates=()):
        self.candidates = tuple(candidates)
        super().__init__(message)


class TrackingLossError(RuntimeError):
    """No admissible crossing near the previous estimate."""

    def __init__(self, message: str, last=None, index: int | None = None, partial=None):
        self.last = last
        self.index = index
        self.partial = partial
        super().__init__(message)


def _periodic_slope(alpha: np.ndarray, step: float) -> np.ndarray:
    slope = (np.roll(alpha, -1) - np.roll(alpha, 1)) / (2.0 * step)
    scale = np.max(np.abs(slope)) if slope.size else 0.0
    slope[np.abs(slope) <= SLOPE_ZERO_RTOL * scale] = 0.0
    return slope


def flat_mask_from_slope(slope: np.ndarray) -> np.ndarray:
    mag = np.abs(slope)
    top = mag.max() if mag.size else 0.0
    if top > 0:
        # mirror-image samples tie at the threshold; rounding keeps the mask gain-invariant
        mag = np.round(mag / top, 9)
    return mag < np.percentile(mag, FLAT_PERCENTILE)


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """Attenuation versus rotor angle on a uniform grid covering [0, 360)."""

    theta_grid: np.ndarray
    alpha: np.ndarray
    slope: np.ndarray
    flat_mask: np.ndarray
    reference_dB: float = 0.0
    _interp: PchipInterpolator = field(init=False, repr=False)
    _runs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta_grid, dtype=float)
        a = np.asarray(self.alpha, dtype=float)
        s = np.asarray(self.slope, dtype=float)
        fm = np.asarray(self.flat_mask, dtype=bool)
        if not (th.shape == a.shape == s.shape == fm.shape) or th.ndim != 1 or len(th) < 8:
            raise ValueError("calibration arrays must be 1-D, equal length, >= 8 points")
        step = 360.0 / len(th)
        if abs(th[0]) > 1e-9 or np.max(np.abs(np.diff(th) - step)) > 1e-6:
            raise ValueError("calibration grid must be uniform on [0, 360) starting at 0")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
            raise ValueError("calibration values must be finite")
        for name, v in (("theta_grid", th), ("alpha", a), ("slope", s), ("flat_mask", fm)):
            object.__setattr__(self, name, v)
        x = np.concatenate([th - 360.0, th, th + 360.0, [720.0]])
        y = np.concatenate([a, a, a, a[:1]])
        object.__setattr__(self, "_interp", PchipInterpolator(x, y, extrapolate=False))
        object.__setattr__(self, "_runs", self._find_runs())

    @classmethod
    def from_alpha(cls, alpha, reference_dB: float = 0.0) -> "CalibrationTable":
        a = np.asarray(alpha, dtype=float)
        step = 360.0 / len(a)
        slope = _periodic_slope(a, step)
        return cls(np.arange(len(a)) * step, a, slope, flat_mask_from_slope(slope), reference_dB)

    @property
    def step_deg(self) -> float:
        return 360.0 / len(self.theta_grid)

    def alpha_at(self, theta):
        v = self._interp(np.remainder(np.asarray(theta, dtype=float), 360.0))
        return float(v) if np.ndim(v) == 0 else v

    def slope_at(self, theta):
        v = self._interp(np.remainder(np.asarray(theta, dtype=float), 360.0), 1)
        return float(v) if np.ndim(v) == 0 else v

    def _index(self, theta) -> np.ndarray:
        k = np.rint(np.remainder(np.asarray(theta, dtype=float), 360.0) / self.step_deg)
        return k.astype(int) % len(self.theta_grid)

    def flat_at(self, theta):
        v = self.flat_mask[self._index(theta)]
        return bool(v) if np.ndim(v) == 0 else v

    def _find_runs(self) -> tuple:
        """Contiguous flat stretches as (lo_deg, hi_deg, extremum_deg, extremum_alpha)."""
        fm = self.flat_mask
        n = len(fm)
        if fm.all() or not fm.any():
            return ()
        start = int(np.flatnonzero(~fm)[0])  # rotate so index 0 is not flat
        order = (np.arange(n) + start) % n
        runs, cur = [], []
        for k in order:
            if fm[k]:
                cur.append(k)
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        out = []
        step = self.step_deg
        for r in runs:
            lo = self.theta_grid[r[0]]
            idx = np.arange(len(r))
            degs = lo + idx * step
            vals = self.alpha[r]
            # extremum that sits furthest from the run's edge values
            edge = 0.5 * (vals[0] + vals[-1])
            j = int(np.argmax(vals)) if vals.max() - edge >= edge - vals.min() else int(np.argmin(vals))
            out.append((float(lo), float(degs[-1]), float(degs[j]), float(vals[j])))
        return tuple(out)

    @property
    def flat_runs(self) -> tuple:
        return self._runs

    def run_near(self, theta: float):
        """Flat run nearest to ``theta``, shifted by whole turns to bracket it closely."""
        if not self._runs:
            return None
        best, best_d = None, np.inf
        for lo, hi, ext, aext in self._runs:
            for shift in (-360.0, 0.0, 360.0):
                a, b = lo + shift, hi + shift
                d = max(a - theta, theta - b, 0.0)
                if d < best_d:
                    best, best_d = (a, b, ext + shift, aext), d
        return best

    def crossings(self, level: float, a: float, b: float) -> np.ndarray:
        """Angles in [a, b] (unwrapped, within [-360, 720]) where the table equals ``level``."""
        a, b = max(a, -360.0), min(b, 720.0)
        if b <= a:
            return np.empty(0)
        x = self._interp.x
        k0 = np.searchsorted(x, a, side="right")
        k1 = np.searchsorted(x, b, side="left")
        xs = np.concatenate([[a], x[k0:k1], [b]])
        d = self._interp(xs) - level
        roots = list(xs[:-1][d[:-1] == 0.0])
        if d[-1] == 0.0:
            roots.append(xs[-1])
        f = lambda t: float(self._interp(t)) - level
        for i in np.flatnonzero(d[:-1] * d[1:] < 0):
            roots.append(brentq(f, xs[i], xs[i + 1], xtol=1e-12, rtol=4 * np.finfo(float).eps))
        return np.unique(np.round(np.asarray(roots, dtype=float), 10))


def build_calibration(model: CirculatorModel, assembly: RotorAssembly,
                      grid_step_deg: float = 0.1) -> CalibrationTable:
    n = int(round(360.0 / grid_step_deg))
    if n < 8 or abs(n * grid_step_deg - 360.0) > 1e-9:
        raise ValueError("grid step must divide 360 degrees")
    grid = np.arange(n) * (360.0 / n)
    raw = np.asarray(response(model, assembly, grid), dtype=float)
    if np.ptp(raw) <= 1e-12 * max(1.0, float(np.max(np.abs(raw)))):
        raise DegenerateCalibrationError("attenuation does not change with rotor angle")
    ref = float(raw.min())
    table = CalibrationTable.from_alpha(raw - ref, reference_dB=ref)
    return table


def resolution_metric(table: CalibrationTable, noise_sigma_dB: float) -> float:
    """Mean angular resolution noise/|slope| over the non-flat part of the table."""
    keep = ~table.flat_mask
    if not keep.any():
        raise ValueError("every calibration point is flat")
    s = np.abs(table.slope[keep])
    if np.any(s == 0):
        return float("inf")
    return float(np.mean(noise_sigma_dB / s))


@dataclass(frozen=True)
class AngleEstimate:
    """Decoder output and tracking state.

    ``direction`` is the last confirmed sense of motion and ``anchor_deg``
    the unwrapped angle where it was confirmed. ``crossed`` records whether
    the current hold has seen the extremum of its flat stretch.
    """

    theta_deg: float
    sigma_deg: float
    flat_flag: bool = False
    direction: int = 0
    anchor_deg: float | None = None
    crossed: bool = False

    def __post_init__(self):
        th = float(np.remainder(self.theta_deg, 360.0))
        if th >= 360.0:
            th = 0.0
        object.__setattr__(self, "theta_deg", th)
        if not self.sigma_deg >= 0:
            raise ValueError("sigma_deg must be >= 0")
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")


def _sigma(table: CalibrationTable, theta: float, noise: float) -> float:
    s = abs(table.slope_at(theta))
    return max(noise / s if s > 0 else np.inf, table.step_deg)


def _near_extremum(run, alpha: float, noise: float, table: CalibrationTable) -> bool:
    lo, hi, _, aext = run
    depth = abs(aext - 0.5 * (table.alpha_at(lo) + table.alpha_at(hi)))
    return abs(alpha - aext) <= max(noise, 0.05 * depth)


def _hold(prev: AngleEstimate, table, run, alpha, noise) -> AngleEstimate:
    half = 0.5 * (run[1] - run[0]) if run else prev.sigma_deg
    crossed = prev.crossed if prev.flat_flag else False
    if run is not None:
        crossed = crossed or _near_extremum(run, alpha, noise, table)
    return replace(prev, sigma_deg=max(prev.sigma_deg, half), flat_flag=True, crossed=crossed)


def _within_noise(table: CalibrationTable, a: float, b: float, alpha: float, noise: float) -> bool:
    vals = table.alpha_at(np.linspace(a, b, max(int(np.ceil((b - a) / table.step_deg)) + 1, 2)))
    gap = max(vals.min() - alpha, alpha - vals.max(), 0.0)
    return gap <= 5.0 * noise


def _unwrap_near(theta: float, ref: float) -> float:
    return ref + float(np.remainder(theta - ref + 180.0, 360.0) - 180.0)


def decode_step(table: CalibrationTable, prev: AngleEstimate, alpha_sample: float,
                max_step_deg: float, noise_sigma_dB: float = 0.017,
                hysteresis_deg: float = 3.0) -> AngleEstimate:
    """Advance the estimate by one attenuation sample."""
    if max_step_deg <= 0:
        raise ValueError("max_step_deg must be positive")
    th0 = prev.theta_deg
    if prev.flat_flag and (run := table.run_near(th0)) is not None:
        a, b = run[0] - max_step_deg, run[1] + max_step_deg
        a, b = min(a, th0 - max_step_deg), max(b, th0 + max_step_deg)
    else:
        run = None
        a, b = th0 - max_step_deg, th0 + max_step_deg
    cands = table.crossings(alpha_sample, a, b)

    if cands.size == 0:
        near = run if run is not None else table.run_near(th0)
        touches = near is not None and near[0] - max_step_deg <= th0 <= near[1] + max_step_deg
        # only noise can push a sample past the extremum of a flat stretch
        if (prev.flat_flag or touches) and _within_noise(table, a, b, alpha_sample, noise_sigma_dB):
            return _hold(prev, table, near, alpha_sample, noise_sigma_dB)
        raise TrackingLossError(
            f"no crossing of {alpha_sample:.6g} dB within {max_step_deg:g} deg of {th0:.3f} deg",
            last=prev)

    if run is None:
        # ordinary tracking: nearest crossing, ties go to the smaller step then forward
        d = cands - th0
        order = np.lexsort((-np.sign(d), np.abs(d)))
        pick = float(cands[order[0]])
        if table.flat_at(pick):
            near = table.run_near(pick)
            return _hold(prev, table, near, alpha_sample, noise_sigma_dB)
    else:
        inside = np.asarray(table.flat_at(cands), dtype=bool)
        lo, hi = run[0], run[1]
        crossed = prev.crossed or _near_extremum(run, alpha_sample, noise_sigma_dB, table)
        if crossed and prev.direction != 0 and (~inside).any():
            outside = cands[~inside]
            edge = hi if prev.direction > 0 else lo
            pick = float(outside[np.argmin(np.abs(outside - edge))])
        else:
            d = cands - th0
            k = np.lexsort((-np.sign(d), np.abs(d)))[0]
            if inside[k]:
                return _hold(prev, table, run, alpha_sample, noise_sigma_dB)
            pick = float(cands[k])

    sigma = _sigma(table, pick, noise_sigma_dB)
    # direction with hysteresis, frozen while held
    anchor = prev.anchor_deg if prev.anchor_deg is not None else th0
    pick_u = _unwrap_near(pick, anchor)
    direction = prev.direction
    threshold = max(hysteresis_deg, 6.0 * sigma)
    moved = pick_u - anchor
    if abs(moved) > threshold:
        direction, anchor = int(np.sign(moved)), pick_u
    elif direction != 0 and np.sign(moved) == direction:
        anchor = pick_u  # keep the anchor at the furthest point along the motion
    return AngleEstimate(pick, sigma, False, direction, float(np.remainder(anchor, 360.0)), False)


def decode_init(table: CalibrationTable, window: AttenuationTrace, velocity_deg_per_s: float,
                direction_hint: int | None = 1, min_span_deg: float = 90.0) -> AngleEstimate:
    """Starting angle from the cyclic normalized cross-correlation of a sweep window."""
    if len(window) < 3:
        raise ValueError("window too short")
    span = abs(velocity_deg_per_s) * (window.t_s[-1] - window.t_s[0])
    if span < min_span_deg - 1e-9:
        raise ValueError(f"window spans {span:.1f} deg, need >= {min_span_deg:g}")
    w = window.alpha_dB - window.alpha_dB.mean()
    wn = np.linalg.norm(w)
    shifts = table.theta_grid
    if wn == 0:
        # every shift fits equally well
        raise AmbiguityError("window has no variation", tuple(float(x) for x in shifts))
    dirs = (1, -1) if direction_hint is None else (int(np.sign(direction_hint)) or 1,)
    best = []
    for dsign in dirs:
        off = dsign * abs(velocity_deg_per_s) * (window.t_s - window.t_s[0])
        T = table.alpha_at(shifts[:, None] + off[None, :])
        T = T - T.mean(axis=1, keepdims=True)
        tn = np.linalg.norm(T, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            ncc = np.where(tn > 0, (T @ w) / (tn * wn), -np.inf)
        best.append((dsign, ncc))
    # local maxima across both directions
    peaks = []
    for dsign, ncc in best:
        left, right = np.roll(ncc, 1), np.roll(ncc, -1)
        for k in np.flatnonzero((ncc >= left) & (ncc > right) & np.isfinite(ncc)):
            peaks.append((float(ncc[k]), dsign, int(k)))
    if not peaks:
        raise AmbiguityError("correlation has no peak")
    peaks.sort(reverse=True)
    top = peaks[0][0]
    if top <= 0:
        raise AmbiguityError("no positive correlation with the calibration")
    rivals = [p for p in peaks[1:] if p[0] >= 0.95 * top]
    if rivals:
        cands = [shifts[k] for _, _, k in [peaks[0]] + rivals]
        raise AmbiguityError(f"{len(rivals) + 1} correlation peaks within 5% of the maximum",
                             candidates=cands)
    rho, dsign, k = peaks[0]
    ncc = dict(best)[dsign]
    n = len(ncc)
    ym, y0, yp = ncc[(k - 1) % n], ncc[k], ncc[(k + 1) % n]
    curv = ym - 2 * y0 + yp
    step = table.step_deg
    delta = 0.5 * (ym - yp) / curv if curv < 0 else 0.0
    theta0 = shifts[k] + delta * step
    kappa = -curv / step**2
    sigma = np.sqrt(max(1.0 - rho, 1e-12) / kappa) if kappa > 0 else np.inf
    sigma = max(float(sigma), step)
    flat = bool(table.flat_at(theta0))
    crossed = False
    if flat:
        run = table.run_near(theta0)
        crossed = _near_extremum(run, table.alpha_at(theta0), 0.0, table)
    return AngleEstimate(theta0, sigma, flat, dsign, float(np.remainder(theta0, 360.0)), crossed)


def home_estimate(table: CalibrationTable, theta_deg: float = 0.0, direction: int = 1) -> AngleEstimate:
    """Estimate for a rotor parked at a known angle."""
    flat = bool(table.flat_at(theta_deg))
    crossed = False
    if flat:
        run = table.run_near(theta_deg)
        crossed = _near_extremum(run, table.alpha_at(theta_deg), 0.0, table)
    return AngleEstimate(theta_deg, table.step_deg, flat, direction, theta_deg, crossed)


def default_max_step(table: CalibrationTable, velocity_deg_per_s: float, dt_s: float,
                     noise_sigma_dB: float) -> float:
    """Per-sample search half-width: twice the motion plus four worst-case noise widths."""
    edge_slope = np.percentile(np.abs(table.slope), FLAT_PERCENTILE)
    noise_w = 4.0 * noise_sigma_dB / edge_slope if edge_slope > 0 else 0.0
    return max(2.0 * abs(velocity_deg_per_s) * dt_s + noise_w, 2.0 * table.step_deg)


@dataclass(frozen=True)
class DecodedTrace:
    t_s: np.ndarray
    theta_deg: np.ndarray  # unwrapped
    sigma_deg: np.ndarray
    flat: np.ndarray
    states: tuple = ()

    @property
    def theta_wrapped(self) -> np.ndarray:
        return np.remainder(self.theta_deg, 360.0)

    def __len__(self) -> int:
        return len(self.t_s)


def _collect(t, ests, start_unwrapped: float) -> DecodedTrace:
    th = np.array([e.theta_deg for e in ests])
    if th.size:
        steps = np.remainder(np.diff(th) + 180.0, 360.0) - 180.0
        first = _unwrap_near(th[0], start_unwrapped)
        th = first + np.concatenate([[0.0], np.cumsum(steps)])
    return DecodedTrace(np.asarray(t[:len(ests)], dtype=float), th,
                        np.array([e.sigma_deg for e in ests]),
                        np.array([e.flat_flag for e in ests], dtype=bool), tuple(ests))


def decode_trace(table: CalibrationTable, trace: AttenuationTrace,
                 init: AngleEstimate | None = None, *, velocity_deg_per_s: float | None = None,
                 direction_hint: int | None = 1, max_step_deg: float | None = None,
                 noise_sigma_dB: float = 0.017, start_unwrapped_deg: float | None = None
                 ) -> DecodedTrace:
    """Decode every sample of ``trace``; angles are unwrapped across the 0/360 seam.

    Without ``init`` the start is found by correlating the first quarter turn,
    which needs ``velocity_deg_per_s``.
    """
    if len(trace) == 0:
        raise ValueError("trace has no samples")
    v = velocity_deg_per_s
    if init is None:
        if v is None:
            raise ValueError("velocity_deg_per_s is required to locate the start angle")
        n_win = int(np.ceil(90.0 / (abs(v) * trace.dt_s))) + 1
        if n_win > len(trace):
            raise ValueError("trace is shorter than the quarter turn needed for start-up")
        init = decode_init(table, trace.window(0, n_win), v, direction_hint)
    if max_step_deg is None:
        dt = trace.dt_s if len(trace) > 1 else 0.0
        max_step_deg = default_max_step(table, v if v is not None else 370.0, dt, noise_sigma_dB)
    if start_unwrapped_deg is None:
        start_unwrapped_deg = float(np.remainder(init.theta_deg + 180.0, 360.0) - 180.0)
    start = start_unwrapped_deg
    ests, prev = [], init
    for i, a in enumerate(trace.alpha_dB):
        try:
            prev = decode_step(table, prev, float(a), max_step_deg, noise_sigma_dB)
        except TrackingLossError as exc:
            exc.index = i
            exc.partial = _collect(trace.t_s, ests, start)
            raise
        ests.append(prev)
    return _collect(trace.t_s, ests, start)


CAL_HEADER = ["theta_deg", "alpha_dB", "slope_dB_per_deg", "flat"]
DEC_HEADER = ["t_s", "theta_deg", "sigma_deg", "flat"]


def write_calibration(path, table: CalibrationTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CAL_HEADER)
        for th, a, s, f in zip(table.theta_grid, table.alpha, table.slope, table.flat_mask):
            w.writerow([repr(float(th)), repr(float(a)), repr(float(s)), int(f)])


def read_calibration(path) -> CalibrationTable:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != CAL_HEADER:
        raise TraceFormatError(f"expected header {','.join(CAL_HEADER)}", 1)
    vals = []
    for i, row in enumerate(rows[1:]):
        if len(row) != 4:
            raise TraceFormatError(f"expected 4 columns, got {len(row)}", i + 2)
        try:
            th, a, s = (float(v) for v in row[:3])
            f = int(row[3])
        except ValueError:
            raise TraceFormatError(f"non-numeric value in {row}", i + 2) from None
        if f not in (0, 1):
            raise TraceFormatError("flat must be 0 or 1", i + 2)
        vals.append((th, a, s, f))
    if not vals:
        raise TraceFormatError("calibration has no rows", 2)
    arr = np.array(vals)
    try:
        return CalibrationTable(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(bool))
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from None


def write_decoded(path, decoded: DecodedTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEC_HEADER)
        for t, th, s, f in zip(decoded.t_s, decoded.theta_deg, decoded.sigma_deg, decoded.flat):
            w.writerow([repr(float(t)), repr(float(th)), repr(float(s)), int(f)])
