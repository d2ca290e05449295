//! Stationary performance measures of a tagged station.

use crate::error::{Error, Result};
use crate::generator::AssemblyMode;
use crate::model::{MeanFieldVector, ModelParams};
use crate::qbd::{solve_fixed_point, FixedPointOptions};
use crate::rates::Scale;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceReport {
    /// `E[Q]`: mean number of bikes at the station, counting bikes held by
    /// waiting returners.
    pub mean_bikes: f64,
    /// `E[N1]`: mean number of waiting renters.
    pub mean_wait_rent: f64,
    /// `E[N2]`: mean number of waiting returners.
    pub mean_wait_return: f64,
    /// `E[N] = max(E[N1], E[N2])`.
    pub mean_wait_max: f64,
    /// Probability that a waiting room is full.
    pub prob_strong: f64,
    /// Probability that the station has no bike or no free dock.
    pub prob_weak: f64,
}

impl PerformanceReport {
    pub const HEADER: [&'static str; 6] = ["EQ", "EN1", "EN2", "EN", "p_s", "p_w"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.mean_bikes,
            self.mean_wait_rent,
            self.mean_wait_return,
            self.mean_wait_max,
            self.prob_strong,
            self.prob_weak,
        ]
    }
}

pub fn performance(pi: &MeanFieldVector, capacity: u32) -> PerformanceReport {
    let levels = pi.levels();
    let k_cap = capacity as i32;
    let mut r = PerformanceReport {
        mean_bikes: 0.0,
        mean_wait_rent: 0.0,
        mean_wait_return: 0.0,
        mean_wait_max: 0.0,
        prob_strong: pi.level_mass(levels.min) + pi.level_mass(levels.max),
        prob_weak: 0.0,
    };
    for k in levels.iter() {
        let mass = pi.level_mass(k);
        let kf = f64::from(k);
        if k >= 1 {
            r.mean_bikes += kf * mass;
        }
        if k <= -1 {
            r.mean_wait_rent += -kf * mass;
        }
        if k > k_cap {
            r.mean_wait_return += f64::from(k - k_cap) * mass;
        }
        if k <= 0 || k >= k_cap {
            r.prob_weak += mass;
        }
    }
    r.mean_wait_max = r.mean_wait_rent.max(r.mean_wait_return);
    r
}

/// `p_s` with the given waiting room over `p_s` without one.
pub fn efficiency_ratio(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
) -> Result<f64> {
    if p.waiting_room == 0 {
        return Err(Error::InvalidParams(
            "efficiency ratio needs a waiting room (L >= 1)".into(),
        ));
    }
    let with = solve_fixed_point(p, scale, mode, opts)?;
    let base_params = p.with_waiting_room(0);
    let base = solve_fixed_point(&base_params, scale, mode, &baseline_options(opts))?;
    let num = performance(&with.pi, p.capacity).prob_strong;
    let den = performance(&base.pi, p.capacity).prob_strong;
    Ok(num / den)
}

/// A caller-supplied starting vector has the wrong shape for the `L = 0`
/// model, so the baseline falls back to the default start.
fn baseline_options(opts: &FixedPointOptions) -> FixedPointOptions {
    let mut o = opts.clone();
    if matches!(o.init, crate::qbd::Initialization::Given(_)) {
        o.init = crate::qbd::Initialization::InitialBikes;
    }
    o
}
