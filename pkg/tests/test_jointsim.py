import json

import numpy as np
import pytest

from moencoder.encoder import decode_trace, home_estimate
from moencoder.jointsim import (JointProfile, joint_trace, protractor_reference, simulate_joint)


def test_zero_increments(model, rotor, table):
    rep = simulate_joint(model, rotor, JointProfile(increments_deg=()), 0.017, 0, table)
    assert rep.per_increment_error_deg == [] and rep.mean_abs_error_deg == 0.0


def test_noiseless_full_turn(model, rotor, table):
    rep = simulate_joint(model, rotor, JointProfile(), 0.0, 0, table)
    assert not rep.truncated
    assert len(rep.per_increment_error_deg) == 36
    assert rep.mean_abs_error_deg <= 0.1


def test_noisy_full_turn(model, rotor, table):
    rep = simulate_joint(model, rotor, JointProfile(), 0.017, 1, table)
    assert rep.mean_abs_error_deg <= 0.5
    assert all(0.0 <= e <= 1.0 for e in rep.per_increment_error_deg)
    assert 0.0 <= rep.flat_fraction <= 1.0
    assert rep.commanded_deg == list(np.cumsum([10.0] * 36))


def test_cumulative_consistency(model, rotor, table):
    prof = JointProfile(increments_deg=(7.0, 13.0, 25.0, 40.0, 5.0))
    for seed in range(3):
        rep = simulate_joint(model, rotor, prof, 0.017, seed, table)
        assert abs(rep.decoded_deg[-1] - sum(prof.increments_deg)) <= 1.0


def test_reversal_returns_home(model, rotor, table):
    prof = JointProfile(increments_deg=(90.0, -90.0))
    for seed in range(5):
        rep = simulate_joint(model, rotor, prof, 0.017, seed, table)
        assert abs(rep.decoded_deg[-1]) <= 2.0


def test_dwell_average_beats_single_samples(model, rotor, table):
    prof = JointProfile(increments_deg=(10.0,) * 12)
    avg, single = [], []
    for seed in range(5):
        rep = simulate_joint(model, rotor, prof, 0.017, seed, table)
        avg.extend(rep.signed_error_deg)
        dec = rep.decoded
        tr = joint_trace(model, rotor, prof, 0.017, seed)
        for idx in prof.dwell_windows(tr.t_s):
            single.extend(dec.theta_deg[idx] - tr.theta_true_deg[idx])
    assert np.sqrt(np.mean(np.square(avg))) <= np.sqrt(np.mean(np.square(single)))


def test_decoded_matches_standalone_decode(model, rotor, table):
    prof = JointProfile(increments_deg=(10.0,) * 4)
    rep = simulate_joint(model, rotor, prof, 0.017, 4, table)
    tr = joint_trace(model, rotor, prof, 0.017, 4)
    assert np.array_equal(rep.decoded.t_s, tr.t_s)
    again = decode_trace(table, tr, home_estimate(table, 0.0, 1), max_step_deg=None,
                         velocity_deg_per_s=200.0, start_unwrapped_deg=0.0)
    assert np.array_equal(again.theta_deg, rep.decoded.theta_deg)


def test_tracking_loss_truncates(model, rotor, table):
    rep = simulate_joint(model, rotor, JointProfile(), 0.017, 0, table, max_step_deg=0.05)
    assert rep.truncated
    assert "tracking lost" in rep.message
    assert len(rep.per_increment_error_deg) < 36


def test_report_json(model, rotor, table):
    rep = simulate_joint(model, rotor, JointProfile(increments_deg=(10.0, 10.0)), 0.017, 0, table)
    d = json.loads(rep.to_json())
    for key in ("per_increment_error_deg", "mean_abs_error_deg", "std_error_deg", "flat_fraction"):
        assert key in d
    assert "decoded" not in d


def test_profile_validation():
    with pytest.raises(ValueError):
        JointProfile(dwell_s=0)
    with pytest.raises(ValueError):
        JointProfile(velocity_deg_per_s=-5)
    with pytest.warns(RuntimeWarning):
        JointProfile(velocity_deg_per_s=50.0)


def test_trajectory_hits_commanded_angles():
    prof = JointProfile(increments_deg=(10.0, -25.0, 300.0))
    t, th = prof.trajectory()
    for idx, c in zip(prof.dwell_windows(t), prof.commanded_deg):
        assert np.all(th[idx] == c)
    assert np.max(np.abs(np.diff(th))) <= prof.velocity_deg_per_s * prof.dt_s + 1e-9


def test_protractor():
    prof = JointProfile(increments_deg=(90.0,))
    vals = [protractor_reference(prof, 1.0, s)[0] for s in range(50)]
    assert set(vals) <= {89.0, 90.0, 91.0} and len(set(vals)) > 1
    assert np.array_equal(protractor_reference(prof, 1.0, 7), protractor_reference(prof, 1.0, 7))
    assert np.array_equal(protractor_reference(prof, 0.0, 7), prof.commanded_deg)
    with pytest.raises(ValueError):
        protractor_reference(prof, -1.0)
