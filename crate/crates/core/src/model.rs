//! Model parameters and the level/phase indexed probability vector shared by
//! the rate, generator, ODE and fixed-point modules.
//!
//! A tagged station is described by its level `k` in `[-L, K+L]`:
//! negative levels count renters waiting for a bike, `0..=K` counts parked
//! bikes, and levels above `K` count returners waiting (with their bikes) for
//! a free dock. The second coordinate is the environment phase `j`.

use std::ops::{Index, IndexMut};

use crate::env::Environment;
use crate::error::{Error, Result};

/// Inclusive range of station levels, `[-L, K+L]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelRange {
    pub min: i32,
    pub max: i32,
}

impl LevelRange {
    pub fn new(min: i32, max: i32) -> Self {
        assert!(min <= max, "empty level range");
        Self { min, max }
    }

    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: i32) -> bool {
        self.min <= k && k <= self.max
    }

    /// Array offset of level `k`.
    pub fn offset(&self, k: i32) -> usize {
        debug_assert!(self.contains(k), "level {k} outside {self:?}");
        (k - self.min) as usize
    }

    pub fn level(&self, offset: usize) -> i32 {
        self.min + offset as i32
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i32> {
        self.min..=self.max
    }

    pub fn check(&self, k: i32) -> Result<usize> {
        if self.contains(k) {
            Ok(self.offset(k))
        } else {
            Err(Error::LevelOutOfRange {
                level: k,
                min: self.min,
                max: self.max,
            })
        }
    }
}

/// A complete model instance: station geometry, customer behaviour and the
/// Markovian environment.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Parking places per station (`K`).
    pub capacity: u32,
    /// Bikes per station at time zero (`C`).
    pub initial_bikes: u32,
    /// Waiting places per station, for renters and for returners (`L`).
    pub waiting_room: u32,
    /// Probability that a renter finding no bike waits.
    pub alpha: f64,
    /// Probability that a returner finding no dock waits.
    pub beta: f64,
    pub env: Environment,
}

impl ModelParams {
    pub fn new(
        capacity: u32,
        initial_bikes: u32,
        waiting_room: u32,
        alpha: f64,
        beta: f64,
        env: Environment,
    ) -> Result<Self> {
        let p = Self {
            capacity,
            initial_bikes,
            waiting_room,
            alpha,
            beta,
            env,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_bikes < 1 || self.initial_bikes > self.capacity {
            return Err(Error::InvalidParams(format!(
                "need 1 <= C <= K, got C = {}, K = {}",
                self.initial_bikes, self.capacity
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!("{name} = {v} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> i32 {
        self.capacity as i32
    }

    pub fn c(&self) -> i32 {
        self.initial_bikes as i32
    }

    pub fn l(&self) -> i32 {
        self.waiting_room as i32
    }

    pub fn phases(&self) -> usize {
        self.env.phases()
    }

    pub fn levels(&self) -> LevelRange {
        LevelRange::new(-self.l(), self.k() + self.l())
    }

    /// Length of the flattened (level, phase) vector, `(K+2L+1)m`.
    pub fn dim(&self) -> usize {
        self.levels().len() * self.phases()
    }

    /// Same model with a different waiting-room size.
    pub fn with_waiting_room(&self, waiting_room: u32) -> Self {
        Self {
            waiting_room,
            ..self.clone()
        }
    }
}

/// Probability mass over (level, phase) pairs, stored level-major:
/// entry `(k, j)` lives at `offset(k) * m + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldVector {
    levels: LevelRange,
    phases: usize,
    data: Vec<f64>,
}

impl MeanFieldVector {
    pub fn zeros(levels: LevelRange, phases: usize) -> Self {
        Self {
            levels,
            phases,
            data: vec![0.0; levels.len() * phases],
        }
    }

    pub fn from_vec(levels: LevelRange, phases: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != levels.len() * phases {
            return Err(Error::Dimension(format!(
                "expected {} entries, got {}",
                levels.len() * phases,
                data.len()
            )));
        }
        Ok(Self {
            levels,
            phases,
            data,
        })
    }

    /// All mass at level `k`, spread over phases according to `weights`.
    pub fn point_mass(levels: LevelRange, k: i32, weights: &[f64]) -> Self {
        let mut y = Self::zeros(levels, weights.len());
        for (j, w) in weights.iter().enumerate() {
            y[(k, j)] = *w;
        }
        y
    }

    pub fn uniform(levels: LevelRange, phases: usize) -> Self {
        let n = levels.len() * phases;
        Self {
            levels,
            phases,
            data: vec![1.0 / n as f64; n],
        }
    }

    pub fn levels(&self) -> LevelRange {
        self.levels
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Block `y_k` as a slice of length `m`.
    pub fn block(&self, k: i32) -> &[f64] {
        let o = self.levels.offset(k) * self.phases;
        &self.data[o..o + self.phases]
    }

    /// `y_k e`, the probability of level `k`.
    pub fn level_mass(&self, k: i32) -> f64 {
        self.block(k).iter().sum()
    }

    pub fn level_marginal(&self) -> Vec<f64> {
        self.data
            .chunks(self.phases)
            .map(|c| c.iter().sum())
            .collect()
    }

    pub fn phase_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.phases];
        for c in self.data.chunks(self.phases) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }

    pub fn normalize(&mut self) {
        let s = self.total();
        if s > 0.0 {
            self.data.iter_mut().for_each(|v| *v /= s);
        }
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        sup_distance(&self.data, &other.data)
    }
}

impl Index<(i32, usize)> for MeanFieldVector {
    type Output = f64;

    fn index(&self, (k, j): (i32, usize)) -> &f64 {
        &self.data[self.levels.offset(k) * self.phases + j]
    }
}

impl IndexMut<(i32, usize)> for MeanFieldVector {
    fn index_mut(&mut self, (k, j): (i32, usize)) -> &mut f64 {
        &mut self.data[self.levels.offset(k) * self.phases + j]
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_offsets() {
        let r = LevelRange::new(-5, 25);
        assert_eq!(r.len(), 31);
        assert_eq!(r.offset(-5), 0);
        assert_eq!(r.offset(0), 5);
        assert_eq!(r.level(30), 25);
        assert!(r.check(26).is_err());
    }

    #[test]
    fn vector_layout_is_level_major() {
        let r = LevelRange::new(-1, 2);
        let mut y = MeanFieldVector::zeros(r, 2);
        y[(0, 1)] = 0.25;
        y[(2, 0)] = 0.75;
        assert_eq!(y.as_slice()[3], 0.25);
        assert_eq!(y.as_slice()[6], 0.75);
        assert_eq!(y.level_marginal(), vec![0.0, 0.25, 0.0, 0.75]);
        assert_eq!(y.phase_marginal(), vec![0.75, 0.25]);
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }
}
