"""Search over the axial offset between the two rotor magnets."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .circulator import CirculatorModel
from .encoder import DegenerateCalibrationError, build_calibration, resolution_metric
from .sweep import RotorAssembly

OBJECTIVE = "mean_sigma_over_slope"


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlacementSweepResult:
    delta_d_grid: np.ndarray
    resolution_deg: np.ndarray
    best_delta_d: float
    best_resolution_deg: float
    objective: str = OBJECTIVE

    def to_json(self) -> str:
        return json.dumps({"best_delta_d_mm": self.best_delta_d,
                           "best_resolution_deg": self.best_resolution_deg,
                           "objective": self.objective}, indent=2, sort_keys=True) + "\n"


def delta_d_grid(d_min: float, d_max: float, step: float) -> np.ndarray:
    if step <= 0 or d_max < d_min or d_min < 0:
        raise ValueError("need 0 <= d_min <= d_max and step > 0")
    n = int(np.floor((d_max - d_min) / step + 1e-9)) + 1
    return np.round(d_min + np.arange(n) * step, 12)


def evaluate_delta_d(model: CirculatorModel, assembly: RotorAssembly, delta_d: float,
                     noise_sigma_dB: float, grid_step_deg: float = 0.1) -> float:
    """Resolution metric at one offset; a response with no angular signal scores +inf."""
    try:
        table = build_calibration(model, assembly.with_delta_d(delta_d), grid_step_deg)
    except DegenerateCalibrationError:
        return float("inf")
    return resolution_metric(table, noise_sigma_dB)


def sweep_delta_d(model: CirculatorModel, assembly: RotorAssembly, d_min: float = 0.0,
                  d_max: float = 5.0, step: float = 0.5, noise_sigma_dB: float = 0.017,
                  threads: int = 1, grid_step_deg: float = 0.1) -> PlacementSweepResult:
    """Evaluate the resolution metric over a grid of offsets; ties go to the smaller offset."""
    grid = delta_d_grid(d_min, d_max, step)
    job = lambda d: evaluate_delta_d(model, assembly, float(d), noise_sigma_dB, grid_step_deg)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = np.array(list(ex.map(job, grid)))
    else:
        res = np.array([job(d) for d in grid])
    if not np.isfinite(res).any():
        raise PlacementError("no offset in the grid yields a usable angular signal")
    k = int(np.argmin(res))  # first occurrence: smaller offset wins ties
    return PlacementSweepResult(grid, res, float(grid[k]), float(res[k]))


def write_placement(csv_path, json_path, result: PlacementSweepResult) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta_d_mm", "resolution_deg"])
        for d, r in zip(result.delta_d_grid, result.resolution_deg):
            w.writerow([repr(float(d)), repr(float(r))])
    with open(json_path, "w") as fh:
        fh.write(result.to_json())
