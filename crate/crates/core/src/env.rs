//! Markovian environment: a finite irreducible CTMC whose current state fixes
//! the customer arrival rate and the ride-completion rate.
//!
//! The environment can be given directly (generator plus rate vectors) or
//! built from a segmentation of the day. In the latter case the phases form a
//! cycle `1 -> 2 -> ... -> m -> 1`, the stationary probabilities are the
//! segment time fractions, and the per-phase rates are the time averages of
//! rent/return rate profiles over each segment.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const HOURS_PER_DAY: f64 = 24.0;
const COVER_TOL: f64 = 1e-9;

/// An instantaneous rate as a function of the time of day (hours).
#[derive(Debug, Clone, PartialEq)]
pub enum RateProfile {
    Constant(f64),
    /// `(start, rate)` pairs: the rate holds from `start` until the next
    /// breakpoint (or 24h). The first breakpoint must be at 0.
    PiecewiseConstant(Vec<(f64, f64)>),
    /// `(t, rate)` knots interpolated linearly; must span `[0, 24]`.
    PiecewiseLinear(Vec<(f64, f64)>),
}

impl RateProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidProfile(msg.to_string()));
        match self {
            Self::Constant(c) => {
                if !(c.is_finite() && *c >= 0.0) {
                    return bad("constant rate must be finite and nonnegative");
                }
            }
            Self::PiecewiseConstant(pts) | Self::PiecewiseLinear(pts) => {
                if pts.is_empty() {
                    return bad("no breakpoints");
                }
                if pts.iter().any(|(_, r)| !(r.is_finite() && *r >= 0.0)) {
                    return bad("rates must be finite and nonnegative");
                }
                if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("breakpoints must be strictly increasing");
                }
                if pts[0].0.abs() > COVER_TOL {
                    return bad("first breakpoint must be at t = 0");
                }
                if let Self::PiecewiseLinear(_) = self {
                    if pts.len() < 2 || (pts[pts.len() - 1].0 - HOURS_PER_DAY).abs() > COVER_TOL {
                        return bad("linear profile must have a knot at t = 24");
                    }
                } else if pts[pts.len() - 1].0 >= HOURS_PER_DAY {
                    return bad("piecewise-constant breakpoints must lie in [0, 24)");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::PiecewiseConstant(pts) => {
                let i = pts.partition_point(|(s, _)| *s <= t);
                pts[i.saturating_sub(1)].1
            }
            Self::PiecewiseLinear(pts) => {
                let i = pts.partition_point(|(s, _)| *s <= t);
                if i == 0 {
                    return pts[0].1;
                }
                if i == pts.len() {
                    return pts[pts.len() - 1].1;
                }
                let (t0, r0) = pts[i - 1];
                let (t1, r1) = pts[i];
                r0 + (r1 - r0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Exact integral over `[a, b]` within `[0, 24]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Self::Constant(c) => c * (b - a),
            Self::PiecewiseConstant(pts) => {
                let mut total = 0.0;
                for (i, &(s, r)) in pts.iter().enumerate() {
                    let e = pts.get(i + 1).map_or(HOURS_PER_DAY, |p| p.0);
                    let lo = s.max(a);
                    let hi = e.min(b);
                    if hi > lo {
                        total += r * (hi - lo);
                    }
                }
                total
            }
            Self::PiecewiseLinear(pts) => {
                let mut total = 0.0;
                for w in pts.windows(2) {
                    let lo = w[0].0.max(a);
                    let hi = w[1].0.min(b);
                    if hi > lo {
                        // trapezoid is exact on a linear piece
                        total += 0.5 * (self.eval_on(w, lo) + self.eval_on(w, hi)) * (hi - lo);
                    }
                }
                total
            }
        }
    }

    fn eval_on(&self, w: &[(f64, f64)], t: f64) -> f64 {
        let (t0, r0) = w[0];
        let (t1, r1) = w[1];
        r0 + (r1 - r0) * (t - t0) / (t1 - t0)
    }
}

/// One part of the day; may be a union of disjoint intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub intervals: Vec<(f64, f64)>,
}

impl Segment {
    pub fn new(intervals: Vec<(f64, f64)>) -> Self {
        Self { intervals }
    }

    pub fn duration(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// An ordered partition of `[0, 24)` into segments.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySegmentation {
    segments: Vec<Segment>,
}

impl DaySegmentation {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSegmentation(msg));
        if segments.is_empty() {
            return bad("no segments".into());
        }
        let mut all = Vec::new();
        for (i, s) in segments.iter().enumerate() {
            if s.intervals.is_empty() {
                return bad(format!("segment {} has no intervals", i + 1));
            }
            for &(a, b) in &s.intervals {
                if !(a.is_finite() && b.is_finite())
                    || a < -COVER_TOL
                    || b > HOURS_PER_DAY + COVER_TOL
                {
                    return bad(format!("interval [{a}, {b}) outside [0, 24)"));
                }
                if b < a {
                    return bad(format!("interval [{a}, {b}) is reversed"));
                }
                all.push((a, b));
            }
            if s.duration() <= 0.0 {
                return bad(format!("segment {} has zero duration", i + 1));
            }
        }
        all.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut cursor = 0.0;
        for (a, b) in all {
            if (a - cursor).abs() > COVER_TOL {
                return bad(format!(
                    "segments do not partition the day: gap or overlap at t = {cursor}"
                ));
            }
            cursor = b;
        }
        if (cursor - HOURS_PER_DAY).abs() > COVER_TOL {
            return bad(format!("segments end at t = {cursor}, not 24"));
        }
        Ok(Self { segments })
    }

    /// Consecutive segments starting at t = 0 with the given durations.
    pub fn from_durations(durations: &[f64]) -> Result<Self> {
        let mut t = 0.0;
        let mut segs = Vec::with_capacity(durations.len());
        for &d in durations {
            segs.push(Segment::new(vec![(t, t + d)]));
            t += d;
        }
        Self::new(segs)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(Segment::duration).collect()
    }
}

/// Cyclic generator `1 -> 2 -> ... -> m -> 1` whose stationary vector is the
/// vector of segment time fractions.
///
/// Leaving rates are `x_i = theta_m / theta_i` (so `x_m = 1`), multiplied by
/// `time_scale`. Returns `(W, theta)`.
pub fn build_cyclic_generator(
    seg: &DaySegmentation,
    time_scale: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let m = seg.len();
    if m < 2 {
        return Err(Error::InvalidSegmentation(
            "a cyclic environment needs at least two segments".into(),
        ));
    }
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(Error::InvalidGenerator(format!(
            "time scale must be positive, got {time_scale}"
        )));
    }
    let d = seg.durations();
    let total: f64 = d.iter().sum();
    let theta: Vec<f64> = d.iter().map(|x| x / total).collect();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        let x = time_scale * theta[m - 1] / theta[i];
        w[(i, i)] = -x;
        w[(i, (i + 1) % m)] = x;
    }
    Ok((w, theta))
}

fn validate_generator(w: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != w.ncols() || w.nrows() == 0 {
        return Err(Error::InvalidGenerator(
            "generator must be square and nonempty".into(),
        ));
    }
    let m = w.nrows();
    for i in 0..m {
        let mut row = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..m {
            let v = w[(i, j)];
            if !v.is_finite() {
                return Err(Error::InvalidGenerator(format!(
                    "entry ({i}, {j}) is not finite"
                )));
            }
            if i != j && v < 0.0 {
                return Err(Error::InvalidGenerator(format!(
                    "negative off-diagonal entry ({i}, {j}) = {v}"
                )));
            }
            row += v;
            scale = scale.max(v.abs());
        }
        if row.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidGenerator(format!("row {i} sums to {row}")));
        }
    }
    Ok(())
}

fn strongly_connected(w: &DMatrix<f64>) -> bool {
    let m = w.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let v = if forward { w[(i, j)] } else { w[(j, i)] };
                if i != j && v > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Stationary probability vector of an irreducible generator: `theta W = 0`,
/// `theta e = 1`.
pub fn stationary_vector(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    validate_generator(w)?;
    let m = w.nrows();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    if !strongly_connected(w) {
        return Err(Error::NoUniqueStationaryVector(
            "generator is reducible".into(),
        ));
    }
    // theta W = 0 with the last equation swapped for the normalization
    let mut a = w.transpose();
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let theta = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NoUniqueStationaryVector("singular system".into()))?;
    Ok(theta.iter().map(|v| v.max(0.0)).collect())
}

/// Segment-wise time averages of the rent and return profiles.
pub fn average_rates(
    rent: &RateProfile,
    ret: &RateProfile,
    seg: &DaySegmentation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    rent.validate()?;
    ret.validate()?;
    let avg = |f: &RateProfile| {
        seg.segments()
            .iter()
            .map(|s| {
                let total: f64 = s.intervals.iter().map(|&(a, b)| f.integral(a, b)).sum();
                total / s.duration()
            })
            .collect::<Vec<_>>()
    };
    Ok((avg(rent), avg(ret)))
}

/// A fully specified environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    generator: DMatrix<f64>,
    stationary: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
}

impl Environment {
    /// Validates `generator` and computes its stationary vector.
    pub fn new(generator: DMatrix<f64>, lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        let stationary = stationary_vector(&generator)?;
        Self::with_stationary(generator, stationary, lambda, mu)
    }

    fn with_stationary(
        generator: DMatrix<f64>,
        stationary: Vec<f64>,
        lambda: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        let m = generator.nrows();
        if lambda.len() != m || mu.len() != m {
            return Err(Error::InvalidGenerator(format!(
                "{m} phases but {} arrival and {} ride rates",
                lambda.len(),
                mu.len()
            )));
        }
        if lambda
            .iter()
            .chain(&mu)
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(Error::InvalidParams(
                "rates must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            generator,
            stationary,
            lambda,
            mu,
        })
    }

    /// Environment with a single phase (no switching).
    pub fn constant(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(1, 1), vec![lambda], vec![mu])
    }

    /// Two-phase environment with the given switching rates `1 -> 2` and `2 -> 1`.
    pub fn two_phase(rate12: f64, rate21: f64, lambda: [f64; 2], mu: [f64; 2]) -> Result<Self> {
        let w = DMatrix::from_row_slice(2, 2, &[-rate12, rate12, rate21, -rate21]);
        Self::new(w, lambda.to_vec(), mu.to_vec())
    }

    /// Cyclic environment built from a day segmentation and rate profiles.
    pub fn from_day(
        seg: &DaySegmentation,
        rent: &RateProfile,
        ret: &RateProfile,
        time_scale: f64,
    ) -> Result<Self> {
        // one segment: a constant environment with nothing to switch to
        let (w, theta) = if seg.len() == 1 {
            (DMatrix::zeros(1, 1), vec![1.0])
        } else {
            build_cyclic_generator(seg, time_scale)?
        };
        let (lambda, mu) = average_rates(rent, ret, seg)?;
        Self::with_stationary(w, theta, lambda, mu)
    }

    /// Replace the per-phase rates, keeping the generator.
    pub fn with_rates(&self, lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        Self::with_stationary(self.generator.clone(), self.stationary.clone(), lambda, mu)
    }

    /// Same rates with switching switched off. Phases become absorbing, so
    /// the stationary vector is kept from `self` only as a starting mixture.
    pub fn without_switching(&self) -> Self {
        let m = self.phases();
        Self {
            generator: DMatrix::zeros(m, m),
            ..self.clone()
        }
    }

    pub fn phases(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Total leaving rate of phase `j`.
    pub fn leave_rate(&self, j: usize) -> f64 {
        -self.generator[(j, j)]
    }
}
