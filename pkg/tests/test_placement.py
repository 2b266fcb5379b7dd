import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from moencoder import placement
from moencoder.placement import (PlacementError, delta_d_grid, evaluate_delta_d, sweep_delta_d,
                                 write_placement)


@pytest.fixture(scope="module")
def coarse(model, rotor):
    return sweep_delta_d(model, rotor, 0.0, 5.0, 0.5, 0.017)


def test_grid_shape():
    assert_allclose(delta_d_grid(0, 5, 0.5), np.arange(11) * 0.5)
    assert_allclose(delta_d_grid(2.5, 3.5, 0.1), 2.5 + np.arange(11) * 0.1)
    with pytest.raises(ValueError):
        delta_d_grid(3, 1, 0.5)
    with pytest.raises(ValueError):
        delta_d_grid(0, 1, 0)


def test_best_is_grid_argmin(coarse):
    assert len(coarse.delta_d_grid) == len(coarse.resolution_deg) == 11
    k = int(np.argmin(coarse.resolution_deg))
    assert coarse.best_delta_d == coarse.delta_d_grid[k]
    assert coarse.best_resolution_deg == coarse.resolution_deg[k]


def test_best_beats_aligned_magnets(coarse):
    assert coarse.resolution_deg[0] == np.inf  # aligned magnets cancel on the axis
    assert coarse.best_resolution_deg < coarse.resolution_deg[0]


def test_fine_grid_oracle(coarse, model, rotor):
    fine = delta_d_grid(max(coarse.best_delta_d - 0.5, 0.0), coarse.best_delta_d + 0.5, 0.1)
    vals = np.array([evaluate_delta_d(model, rotor, d, 0.017) for d in fine])
    assert abs(fine[np.argmin(vals)] - coarse.best_delta_d) <= 0.5
    assert vals.min() <= coarse.best_resolution_deg


def test_order_and_threads_do_not_matter(coarse, model, rotor):
    rev = [evaluate_delta_d(model, rotor, d, 0.017) for d in coarse.delta_d_grid[::-1]]
    assert np.array_equal(np.array(rev[::-1]), coarse.resolution_deg)
    par = sweep_delta_d(model, rotor, 0.0, 5.0, 0.5, 0.017, threads=4)
    assert np.array_equal(par.resolution_deg, coarse.resolution_deg)
    assert par.best_delta_d == coarse.best_delta_d


def test_noise_scaling_keeps_argmin(coarse, model, rotor):
    twice = sweep_delta_d(model, rotor, 0.0, 5.0, 0.5, 0.034)
    fin = np.isfinite(coarse.resolution_deg)
    assert np.array_equal(np.isfinite(twice.resolution_deg), fin)
    assert_allclose(twice.resolution_deg[fin], 2 * coarse.resolution_deg[fin], rtol=1e-14)
    assert twice.best_delta_d == coarse.best_delta_d


def test_reproducible(coarse, model, rotor):
    again = sweep_delta_d(model, rotor, 0.0, 5.0, 0.5, 0.017)
    assert again.best_resolution_deg == coarse.best_resolution_deg


def test_ties_go_to_smaller_offset(monkeypatch, model, rotor):
    monkeypatch.setattr(placement, "evaluate_delta_d",
                        lambda m, a, d, n, g=0.1: 1.0 if d in (1.0, 2.0) else 5.0)
    res = sweep_delta_d(model, rotor, 0.0, 3.0, 0.5)
    assert res.best_delta_d == 1.0


def test_single_point_sweep(model, rotor):
    res = sweep_delta_d(model, rotor, 3.0, 3.0)
    assert res.best_delta_d == 3.0 and len(res.delta_d_grid) == 1


def test_all_degenerate_raises(model, rotor):
    with pytest.raises(PlacementError):
        sweep_delta_d(model, rotor, 0.0, 0.0)
    with pytest.raises(PlacementError):
        sweep_delta_d(model, rotor.with_remanence(0.0), 0.0, 2.0)


def test_outputs(tmp_path, coarse):
    write_placement(tmp_path / "p.csv", tmp_path / "p.json", coarse)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "delta_d_mm,resolution_deg" and len(lines) == 12
    assert lines[1] == "0.0,inf"
    js = json.loads((tmp_path / "p.json").read_text())
    assert js == {"best_delta_d_mm": coarse.best_delta_d,
                  "best_resolution_deg": coarse.best_resolution_deg,
                  "objective": "mean_sigma_over_slope"}
