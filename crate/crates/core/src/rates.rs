//! Virtual service and arrival rates of the tagged-station reference queue.
//!
//! Bikes play the role of customers: a rented bike is a service completion
//! (level goes down) and a returned bike is an arrival (level goes up). The
//! service rate depends only on the level and the environment phase; the
//! arrival rate couples the tagged station to the rest of the system through
//! the interaction scalar `zeta_j(y)`, the mean number of bikes on the road
//! per station.

use crate::error::{Error, Result};
use crate::model::{MeanFieldVector, ModelParams};

/// Number of stations: finite `N` or the mean-field limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Finite(u64),
    Limit,
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(n) => write!(f, "N={n}"),
            Self::Limit => write!(f, "limit"),
        }
    }
}

/// Rate of the level `k -> k-1` transition (a bike is rented, or a renter
/// joins the queue) in phase `j`.
pub fn service_rate(k: i32, j: usize, p: &ModelParams) -> Result<f64> {
    let levels = p.levels();
    levels.check(k)?;
    if k == levels.min {
        return Err(Error::NoServiceAtFloor { level: k });
    }
    let lambda = p.env.lambda()[j];
    Ok(if k >= 1 { lambda } else { lambda * p.alpha })
}

/// `x + 2x^2 + 3x^3 + ... = x / (1-x)^2`, for `0 <= x < 1`.
fn retry_series(x: f64) -> f64 {
    x / ((1.0 - x) * (1.0 - x))
}

/// Mean number of bikes on the road per station, seen from phase `j`:
///
/// `C - sum_{k>=1} k y_{k,j} + sum_{k=K}^{K+L-1} S((1-beta) y_{k,j}) + S(y_{K+L,j})`
///
/// with `S(x) = x/(1-x)^2` the expected number of re-rides. The masses are
/// the joint `(level, phase)` probabilities, not probabilities conditioned on
/// the phase.
pub fn interaction_scalar(y: &MeanFieldVector, j: usize, p: &ModelParams) -> Result<f64> {
    interaction_scalar_from(|k| y[(k, j)], j, p)
}

pub(crate) fn interaction_scalar_from(
    mass: impl Fn(i32) -> f64,
    j: usize,
    p: &ModelParams,
) -> Result<f64> {
    let (k_cap, l) = (p.k(), p.l());
    let top = k_cap + l;
    let mut z = f64::from(p.initial_bikes);
    for k in 1..=top {
        z -= f64::from(k) * mass(k);
    }
    let retry = 1.0 - p.beta;
    if retry > 0.0 {
        for k in k_cap..top {
            let x = retry * mass(k);
            if x >= 1.0 {
                return Err(Error::RetrySeriesDivergence {
                    level: k,
                    phase: j,
                    ratio: x,
                });
            }
            z += retry_series(x);
        }
    }
    let x = mass(top);
    if x >= 1.0 {
        return Err(Error::RetrySeriesDivergence {
            level: top,
            phase: j,
            ratio: x,
        });
    }
    z += retry_series(x);
    Ok(z)
}

/// Arrival rate at level `l` in phase `j` given the interaction scalar.
/// May be negative when `zeta` is; callers decide whether to clamp.
pub fn arrival_rate_from_zeta(
    l: i32,
    j: usize,
    zeta: f64,
    scale: Scale,
    p: &ModelParams,
) -> Result<f64> {
    let levels = p.levels();
    levels.check(l)?;
    if l == levels.max {
        return Err(Error::NoArrivalAtCeiling { level: l });
    }
    let mu = p.env.mu()[j];
    let (k_cap, c) = (p.k(), p.c());
    let wait = if l >= k_cap { p.beta } else { 1.0 };
    Ok(match scale {
        Scale::Limit => wait * mu * zeta,
        Scale::Finite(n) => {
            let n = n as f64;
            // bikes ridden away from the tagged station itself
            let own = if l <= 0 {
                f64::from(c)
            } else if l < c {
                f64::from(c - l)
            } else {
                0.0
            };
            wait * (mu / n) * (own + (n - 1.0) * zeta)
        }
    })
}

/// Finite-`N` arrival rate at level `l` in phase `j`.
pub fn arrival_rate_finite(
    l: i32,
    j: usize,
    y: &MeanFieldVector,
    n: u64,
    p: &ModelParams,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParams(
            "station count must be at least 1".into(),
        ));
    }
    p.levels().check(l)?;
    if l == p.levels().max {
        return Err(Error::NoArrivalAtCeiling { level: l });
    }
    let zeta = interaction_scalar(y, j, p)?;
    arrival_rate_from_zeta(l, j, zeta, Scale::Finite(n), p)
}

/// Mean-field limit arrival rate: `mu_j zeta_j` below `K`, `beta mu_j zeta_j` from `K` up.
pub fn arrival_rate_limit(l: i32, j: usize, y: &MeanFieldVector, p: &ModelParams) -> Result<f64> {
    p.levels().check(l)?;
    if l == p.levels().max {
        return Err(Error::NoArrivalAtCeiling { level: l });
    }
    let zeta = interaction_scalar(y, j, p)?;
    arrival_rate_from_zeta(l, j, zeta, Scale::Limit, p)
}

/// All level/phase rates for one vector `y`, with negative arrival rates
/// clamped to zero.
#[derive(Debug, Clone)]
pub struct RateTable {
    pub phases: usize,
    /// `eta[offset(k) * m + j]`; zero at the floor level.
    pub service: Vec<f64>,
    /// `xi[offset(k) * m + j]`; zero at the ceiling level.
    pub arrival: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Number of arrival rates that were negative and clamped to zero.
    pub clamped: usize,
}

impl RateTable {
    pub fn evaluate(y: &MeanFieldVector, p: &ModelParams, scale: Scale) -> Result<Self> {
        let m = p.phases();
        if y.phases() != m || y.levels() != p.levels() {
            return Err(Error::Dimension("vector does not match model".into()));
        }
        let zeta = (0..m)
            .map(|j| interaction_scalar(y, j, p))
            .collect::<Result<Vec<_>>>()?;
        Self::from_zeta(zeta, p, scale)
    }

    pub fn from_zeta(zeta: Vec<f64>, p: &ModelParams, scale: Scale) -> Result<Self> {
        let levels = p.levels();
        let m = p.phases();
        let mut service = vec![0.0; levels.len() * m];
        let mut arrival = vec![0.0; levels.len() * m];
        let mut clamped = 0;
        for k in levels.iter() {
            let o = levels.offset(k) * m;
            for j in 0..m {
                if k > levels.min {
                    service[o + j] = service_rate(k, j, p)?;
                }
                if k < levels.max {
                    let xi = arrival_rate_from_zeta(k, j, zeta[j], scale, p)?;
                    if xi < 0.0 {
                        clamped += 1;
                    }
                    arrival[o + j] = xi.max(0.0);
                }
            }
        }
        Ok(Self {
            phases: m,
            service,
            arrival,
            zeta,
            clamped,
        })
    }

    pub fn service_at(&self, offset: usize, j: usize) -> f64 {
        self.service[offset * self.phases + j]
    }

    pub fn arrival_at(&self, offset: usize, j: usize) -> f64 {
        self.arrival[offset * self.phases + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use approx::assert_relative_eq;

    fn common() -> ModelParams {
        let env = Environment::two_phase(1.0, 1.0, [35.0, 50.0], [30.0, 20.0]).unwrap();
        ModelParams::new(20, 10, 5, 0.5, 0.5, env).unwrap()
    }

    fn mass_at_zero(p: &ModelParams) -> MeanFieldVector {
        MeanFieldVector::point_mass(p.levels(), 0, &[0.5, 0.5])
    }

    #[test]
    fn service_rate_branches() {
        let p = common();
        assert_eq!(service_rate(5, 1, &p).unwrap(), 50.0);
        assert_eq!(service_rate(0, 1, &p).unwrap(), 25.0);
        assert_eq!(service_rate(25, 0, &p).unwrap(), 35.0);
        assert_eq!(service_rate(-4, 0, &p).unwrap(), 17.5);
        assert!(matches!(
            service_rate(-5, 0, &p),
            Err(Error::NoServiceAtFloor { level: -5 })
        ));
        assert!(service_rate(26, 0, &p).is_err());

        let mut q = common();
        q.alpha = 0.0;
        for k in -4..=0 {
            assert_eq!(service_rate(k, 0, &q).unwrap(), 0.0);
        }
    }

    #[test]
    fn zeta_all_mass_at_zero_is_c() {
        let p = common();
        let y = mass_at_zero(&p);
        for j in 0..2 {
            assert_eq!(interaction_scalar(&y, j, &p).unwrap(), 10.0);
        }
    }

    #[test]
    fn zeta_with_half_mass_at_ceiling() {
        let p = common();
        let mut y = MeanFieldVector::zeros(p.levels(), 2);
        y[(25, 0)] = 0.5;
        y[(0, 0)] = 0.5;
        // series oracle: sum n x^n, truncated far past double precision
        let series: f64 = (1..2000).map(|n| n as f64 * 0.5f64.powi(n)).sum();
        assert!((series - 2.0).abs() < 1e-12);
        let z = interaction_scalar(&y, 0, &p).unwrap();
        assert_relative_eq!(z, 10.0 - 25.0 * 0.5 + series, epsilon = 1e-12);
        assert_relative_eq!(z, 10.0 - 12.5 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zeta_beta_one_drops_middle_sum() {
        let mut p = common();
        p.beta = 1.0;
        let mut y = MeanFieldVector::zeros(p.levels(), 2);
        y[(21, 1)] = 0.6;
        y[(3, 1)] = 0.4;
        let z = interaction_scalar(&y, 1, &p).unwrap();
        assert_relative_eq!(z, 10.0 - 21.0 * 0.6 - 3.0 * 0.4, epsilon = 1e-12);
    }

    #[test]
    fn zeta_divergence() {
        let p = common();
        let y = MeanFieldVector::point_mass(p.levels(), 25, &[1.0, 0.0]);
        assert!(matches!(
            interaction_scalar(&y, 0, &p),
            Err(Error::RetrySeriesDivergence {
                level: 25,
                phase: 0,
                ..
            })
        ));
    }

    #[test]
    fn single_station_ignores_interaction() {
        let p = common();
        let mut y = MeanFieldVector::zeros(p.levels(), 2);
        y[(15, 0)] = 1.0;
        for l in -5..=0 {
            assert_relative_eq!(arrival_rate_finite(l, 0, &y, 1, &p).unwrap(), 30.0 * 10.0);
        }
        assert_relative_eq!(arrival_rate_finite(3, 0, &y, 1, &p).unwrap(), 30.0 * 7.0);
    }

    #[test]
    fn finite_case_boundary_difference() {
        let p = common();
        let mut y = MeanFieldVector::zeros(p.levels(), 2);
        y[(8, 1)] = 0.3;
        y[(12, 1)] = 0.2;
        y[(8, 0)] = 0.5;
        for n in [2u64, 7, 100] {
            let a = arrival_rate_finite(9, 1, &y, n, &p).unwrap();
            let b = arrival_rate_finite(10, 1, &y, n, &p).unwrap();
            assert_relative_eq!(a - b, 20.0 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn limit_rates() {
        let p = common();
        let y = mass_at_zero(&p);
        for l in -5..20 {
            assert_relative_eq!(arrival_rate_limit(l, 0, &y, &p).unwrap(), 300.0);
        }
        for l in 20..25 {
            assert_relative_eq!(arrival_rate_limit(l, 0, &y, &p).unwrap(), 150.0);
        }
        assert!(matches!(
            arrival_rate_limit(25, 0, &y, &p),
            Err(Error::NoArrivalAtCeiling { level: 25 })
        ));

        let mut q = common();
        q.beta = 0.0;
        for l in 20..25 {
            assert_eq!(arrival_rate_limit(l, 1, &y, &q).unwrap(), 0.0);
        }
    }

    #[test]
    fn large_n_matches_limit() {
        let p = common();
        let mut y = MeanFieldVector::zeros(p.levels(), 2);
        for (k, w) in [(-2i32, 0.1), (4, 0.2), (11, 0.3), (22, 0.25), (25, 0.15)] {
            y[(k, k.rem_euclid(2) as usize)] = w;
        }
        for j in 0..2 {
            for l in -5..25 {
                let a = arrival_rate_finite(l, j, &y, 1_000_000, &p).unwrap();
                let b = arrival_rate_limit(l, j, &y, &p).unwrap();
                assert!(
                    (a - b).abs() <= 1e-4 * b.abs().max(1e-12),
                    "l={l} j={j}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn rate_table_clamps_negative_zeta() {
        let p = common();
        let y = MeanFieldVector::point_mass(p.levels(), 24, &[0.5, 0.5]);
        let t = RateTable::evaluate(&y, &p, Scale::Limit).unwrap();
        // zeta = 10 - 12 + (0.5*0.5... only level 24 is in the retry band)
        assert!(t.zeta[0] < 0.0);
        assert!(t.clamped > 0);
        assert!(t.arrival.iter().all(|&x| x >= 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_vector(p: &ModelParams, raw: &[f64]) -> MeanFieldVector {
            let s: f64 = raw.iter().sum();
            let data = raw.iter().map(|v| v / s).collect();
            MeanFieldVector::from_vec(p.levels(), p.phases(), data).unwrap()
        }

        proptest! {
            #[test]
            fn service_independent_of_state(k in -4i32..=25, j in 0usize..2) {
                let p = common();
                let a = service_rate(k, j, &p).unwrap();
                prop_assert!(a == p.env.lambda()[j] || a == p.env.lambda()[j] * p.alpha);
            }

            #[test]
            fn arrival_nonincreasing_in_level(raw in prop::collection::vec(0.01f64..1.0, 62), n in 1u64..5000, j in 0usize..2) {
                let p = common();
                let y = random_vector(&p, &raw);
                let z = interaction_scalar(&y, j, &p).unwrap();
                prop_assume!(z >= 0.0);
                let mut prev = f64::INFINITY;
                for l in -5..25 {
                    let a = arrival_rate_finite(l, j, &y, n, &p).unwrap();
                    prop_assert!(a <= prev + 1e-12);
                    prev = a;
                }
            }

            #[test]
            fn zeta_lower_bound(raw in prop::collection::vec(0.0f64..1.0, 62), j in 0usize..2) {
                let p = common();
                prop_assume!(raw.iter().sum::<f64>() > 0.0);
                let y = random_vector(&p, &raw);
                let z = interaction_scalar(&y, j, &p).unwrap();
                prop_assert!(z >= 10.0 - 25.0 - 1e-12);
            }
        }
    }
}
