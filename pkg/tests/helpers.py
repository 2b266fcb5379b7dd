"""Shared round-trip helpers for decoder tests."""

import numpy as np

from moencoder.encoder import decode_trace, home_estimate
from moencoder.sweep import SweepConfig, synthesize_sweep


def round_trip(table, model, rotor, cfg: SweepConfig, seed: int):
    """Synthesize a sweep from 0 deg, decode it from home, return (trace, decoded)."""
    trace = synthesize_sweep(model, rotor, cfg, seed)
    dec = decode_trace(table, trace, home_estimate(table, cfg.start_deg, 1),
                       velocity_deg_per_s=cfg.velocity_deg_per_s,
                       noise_sigma_dB=max(cfg.noise_sigma_dB, 1e-6))
    return trace, dec


def errors_outside_flat(table, trace, dec):
    """Signed wrapped decode error and sigma outside flat regions.

    A sample counts when its true angle is off the flat mask and the decoder
    did not flag it as a hold.
    """
    err = np.remainder(dec.theta_deg - trace.theta_true_deg + 180.0, 360.0) - 180.0
    keep = ~table.flat_at(trace.theta_true_deg) & ~dec.flat
    return err[keep], dec.sigma_deg[keep]


def rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))
