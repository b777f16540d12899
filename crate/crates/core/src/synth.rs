//! Synthetic wind-power series for fixtures and benchmarks.
//!
//! Output follows a two-regime process (calm around a low mean, windy around
//! a high mean) with mean-reverting Gaussian noise. On a regime change the
//! power either drifts towards the new mean or, with probability
//! `ramp_share`, performs a scripted ramp: two moderate steps in the ramp
//! direction, one jump larger than half the rated capacity, then a small
//! settling step. Jumps are the severe ramp events.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{GapPolicy, SeriesPoint, WindPowerSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_points: usize,
    pub resolution_s: i64,
    pub rated_capacity_mw: f64,
    pub start_timestamp: i64,
    /// Per-step probability of a regime change.
    pub switch_prob: f64,
    /// Share of regime changes that happen as a severe ramp.
    pub ramp_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_points: 50_000,
            resolution_s: 600,
            rated_capacity_mw: 20.0,
            start_timestamp: 1_167_609_600,
            switch_prob: 0.08,
            ramp_share: 0.85,
            seed: 13_000,
        }
    }
}

#[derive(Clone, Copy)]
struct Regime {
    mean: f64,
    sigma: f64,
}

/// Generates a single contiguous series with values in `[0, rated_capacity_mw]`.
pub fn ramp_series(cfg: &SynthConfig) -> WindPowerSeries {
    let cap = cfg.rated_capacity_mw;
    let calm = Regime { mean: 0.175 * cap, sigma: 0.0175 * cap };
    let windy = Regime { mean: 0.825 * cap, sigma: 0.03 * cap };
    let reversion = 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut windy_now = false;
    let mut power = calm.mean;
    let mut pending: Vec<f64> = Vec::new();
    let mut points = Vec::with_capacity(cfg.n_points);

    for i in 0..cfg.n_points {
        if let Some(step) = pending.pop() {
            power += step + 0.0025 * cap * unit.sample(&mut rng);
        } else {
            if rng.gen_bool(cfg.switch_prob) {
                windy_now = !windy_now;
                if rng.gen_bool(cfg.ramp_share) {
                    let dir = if windy_now { 1.0 } else { -1.0 };
                    let script = [
                        rng.gen_range(0.04..0.07) * cap,
                        rng.gen_range(0.06..0.10) * cap,
                        rng.gen_range(0.53..0.62) * cap,
                        rng.gen_range(0.015..0.04) * cap,
                    ];
                    let total: f64 = script.iter().sum();
                    let room = if windy_now { cap - power } else { power };
                    if total <= room {
                        pending = script.iter().rev().map(|s| dir * s).collect();
                    }
                }
            }
            let regime = if windy_now { windy } else { calm };
            power += reversion * (regime.mean - power) + regime.sigma * unit.sample(&mut rng);
        }
        power = power.clamp(0.0, cap);
        points.push(SeriesPoint { timestamp: cfg.start_timestamp + i as i64 * cfg.resolution_s, power_mw: power });
    }
    WindPowerSeries::new(points, cfg.resolution_s, cap, "synthetic", GapPolicy::Split).expect("generator emits a valid series")
}
