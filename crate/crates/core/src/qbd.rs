//! Stationary vectors of level-structured generators by block elimination,
//! and the nonlinear fixed point `pi V_pi = 0`, `pi e = 1`.
//!
//! Block elimination runs upward from the floor level. With `D_k`, `U_k`,
//! `A_k` the down, up and local blocks of level `k`:
//!
//! ```text
//! R_{min+1} = -D_{min+1} A_min^{-1}
//! R_k       = -D_k (R_{k-1} U_{k-2} + A_{k-1})^{-1}     k = min+2 ..= max
//! Xi        =  R_max U_{max-1} + A_max
//! ```
//!
//! `Xi` is the generator of the chain censored to the top level. Its null
//! vector gives `pi_max`, and `pi_k = pi_{k+1} R_{k+1}` fills in the rest.
//!
//! When some up block below the ceiling vanishes, the levels above it are
//! transient and carry no stationary mass; elimination then stops at the
//! lowest level with a zero up block, which takes the role of `max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::generator::{assemble, AssemblyMode, BlockTridiagonal};
use crate::meanfield::{steady_state_by_integration, StepControl};
use crate::model::{sup_distance, MeanFieldVector, ModelParams};
use crate::rates::{interaction_scalar, RateTable, Scale};

/// Rate matrices `R_k` for `k` in `(min, max]` plus the censored top-level
/// generator.
#[derive(Debug, Clone)]
pub struct RMeasure {
    min_level: i32,
    /// Level whose censored generator is `censored`.
    pub top: i32,
    r: Vec<DMatrix<f64>>,
    pub censored: DMatrix<f64>,
}

impl RMeasure {
    pub fn r(&self, k: i32) -> &DMatrix<f64> {
        &self.r[(k - self.min_level - 1) as usize]
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// `-d * u^{-1}`, or `None` if `u` is singular.
fn right_divide_neg(d: &DMatrix<f64>, u: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let x = u.transpose().lu().solve(&(-d.transpose()))?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x.transpose())
    } else {
        None
    }
}

/// The censored block at level `k` has row sums `-U_k e`. Setting its
/// diagonal from that identity avoids the cancellation in `R U + A`, whose
/// error otherwise grows by the norm of `R` at every level.
fn restore_diagonal(inner: &mut DMatrix<f64>, up: &DMatrix<f64>) {
    for i in 0..inner.nrows() {
        let off: f64 = (0..inner.ncols())
            .filter(|&j| j != i)
            .map(|j| inner[(i, j)])
            .sum();
        let exit: f64 = up.row(i).sum();
        inner[(i, i)] = -exit - off;
    }
}

pub fn rg_factorize(v: &BlockTridiagonal) -> Result<RMeasure> {
    let levels = v.levels();
    let min = levels.min;
    let max = levels
        .iter()
        .find(|&k| v.up(k).iter().all(|&x| x == 0.0))
        .unwrap_or(levels.max);
    let mut r: Vec<DMatrix<f64>> = Vec::with_capacity(levels.len() - 1);
    for k in (min + 1)..=max {
        if v.down(k).iter().all(|&x| x == 0.0) {
            // nothing leaves level k downward, so pi_{k-1} gets nothing from above
            r.push(DMatrix::zeros(v.phases(), v.phases()));
            continue;
        }
        let mut inner = if k == min + 1 {
            v.local(min).clone()
        } else {
            &r[r.len() - 1] * v.up(k - 2) + v.local(k - 1)
        };
        restore_diagonal(&mut inner, v.up(k - 1));
        let rk = right_divide_neg(v.down(k), &inner)
            .ok_or(Error::FactorizationFailure { level: k - 1 })?;
        r.push(rk);
    }
    let mut censored = match r.last() {
        Some(top) => top * v.up(max - 1) + v.local(max),
        None => v.local(max).clone(),
    };
    restore_diagonal(&mut censored, v.up(max));
    Ok(RMeasure {
        min_level: min,
        top: max,
        r,
        censored,
    })
}

/// Null vector of the censored generator, normalized to sum 1.
fn boundary_vector(xi: &DMatrix<f64>, scale: f64) -> Result<DVector<f64>> {
    let m = xi.nrows();
    if m > 1 {
        let mut s: Vec<f64> = xi.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s[m - 2] <= 1e-10 * scale {
            return Err(Error::DegenerateBoundary);
        }
    }
    // x Xi = 0, x e = 1: swap the last column of Xi for ones
    let mut a = xi.clone();
    for i in 0..m {
        a[(i, m - 1)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let x = a
        .transpose()
        .lu()
        .solve(&b)
        .ok_or(Error::DegenerateBoundary)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateBoundary);
    }
    Ok(x)
}

/// Stationary vector of a fixed (frozen-rate) generator.
pub fn linear_qbd_solve(v: &BlockTridiagonal) -> Result<MeanFieldVector> {
    let rm = rg_factorize(v)?;
    linear_solve_with(v, &rm)
}

pub fn linear_solve_with(v: &BlockTridiagonal, rm: &RMeasure) -> Result<MeanFieldVector> {
    let levels = v.levels();
    let m = v.phases();
    let scale = v.local(rm.top).amax().max(f64::MIN_POSITIVE);
    let top = boundary_vector(&rm.censored, scale)?;

    let mut pi = MeanFieldVector::zeros(levels, m);
    let mut cur = top.transpose();
    for k in (levels.min..=rm.top).rev() {
        if k < rm.top {
            cur = &cur * rm.r(k + 1);
        }
        for j in 0..m {
            pi[(k, j)] = cur[j];
        }
    }
    // roundoff can leave tiny negatives in an otherwise nonnegative vector
    let peak = pi.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    for x in pi.as_mut_slice() {
        if *x < 0.0 && *x > -1e-12 * peak {
            *x = 0.0;
        }
    }
    let total = pi.total();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateBoundary);
    }
    pi.normalize();
    Ok(pi)
}

/// Starting point of the outer iteration.
#[derive(Debug, Clone, Default)]
pub enum Initialization {
    /// Every station holds `C` bikes; phases follow the environment's
    /// stationary vector.
    #[default]
    InitialBikes,
    Uniform,
    Given(MeanFieldVector),
}

impl Initialization {
    pub fn vector(&self, p: &ModelParams) -> Result<MeanFieldVector> {
        match self {
            Self::InitialBikes => Ok(MeanFieldVector::point_mass(
                p.levels(),
                p.c(),
                p.env.stationary(),
            )),
            Self::Uniform => Ok(MeanFieldVector::uniform(p.levels(), p.phases())),
            Self::Given(y) => {
                if y.levels() != p.levels() || y.phases() != p.phases() {
                    Err(Error::Dimension(
                        "initial vector does not match model".into(),
                    ))
                } else {
                    Ok(y.clone())
                }
            }
        }
    }
}

/// Produces the next outer iterate from the current one and the stationary
/// vector of the generator frozen at the current one.
pub trait UpdateRule {
    fn update(&mut self, current: &[f64], candidate: &[f64], step: f64) -> Vec<f64>;

    /// Called when the iterate produced by the last update cannot be
    /// assembled or solved. Returns a smaller weight to retry that update
    /// with, or `None` to give up.
    fn retreat(&mut self) -> Option<f64> {
        None
    }
}

fn relax(current: &[f64], candidate: &[f64], omega: f64) -> Vec<f64> {
    current
        .iter()
        .zip(candidate)
        .map(|(a, b)| (1.0 - omega) * a + omega * b)
        .collect()
}

/// Plain successive substitution with a fixed weight.
#[derive(Debug, Clone)]
pub struct DampedSubstitution {
    pub omega: f64,
}

impl UpdateRule for DampedSubstitution {
    fn update(&mut self, current: &[f64], candidate: &[f64], _step: f64) -> Vec<f64> {
        relax(current, candidate, self.omega)
    }
}

/// Successive substitution whose weight is cut whenever the step length
/// grows and raised again, up to its starting value, while it shrinks.
#[derive(Debug, Clone)]
pub struct AdaptiveDamping {
    pub omega: f64,
    pub max_omega: f64,
    pub shrink: f64,
    pub grow: f64,
    pub min_omega: f64,
    last_step: f64,
}

impl AdaptiveDamping {
    pub fn new(omega: f64) -> Self {
        Self {
            omega,
            max_omega: omega,
            shrink: 0.5,
            grow: 1.25,
            min_omega: 1e-3,
            last_step: f64::INFINITY,
        }
    }
}

impl UpdateRule for AdaptiveDamping {
    fn update(&mut self, current: &[f64], candidate: &[f64], step: f64) -> Vec<f64> {
        if step > self.last_step {
            self.omega = (self.omega * self.shrink).max(self.min_omega);
        } else if self.last_step.is_finite() {
            self.omega = (self.omega * self.grow).min(self.max_omega);
        }
        self.last_step = step;
        relax(current, candidate, self.omega)
    }

    fn retreat(&mut self) -> Option<f64> {
        if self.omega <= self.min_omega {
            return None;
        }
        self.omega = (self.omega * self.shrink).max(self.min_omega);
        Some(self.omega)
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub init: Initialization,
    /// Relaxation weight (initial weight when `adaptive`).
    pub damping: f64,
    pub adaptive: bool,
    /// Bound on both the step length and `||pi V_pi||_inf`.
    pub tol: f64,
    pub max_iter: usize,
    /// Retry with Newton's method on the interaction scalars when
    /// substitution fails or runs out of iterations.
    pub newton_fallback: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            init: Initialization::InitialBikes,
            damping: 0.5,
            adaptive: true,
            tol: 1e-10,
            max_iter: 500,
            newton_fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub pi: MeanFieldVector,
    /// `||pi V_pi||_inf`.
    pub residual: f64,
    /// Length of the last outer step.
    pub step: f64,
    pub iterations: usize,
    /// Newton steps taken after substitution gave up; zero when
    /// substitution converged on its own.
    pub newton_steps: usize,
    pub converged: bool,
    pub mode: AssemblyMode,
    pub scale: Scale,
    /// Interaction scalars at `pi`.
    pub zeta: Vec<f64>,
    /// Arrival rates clamped to zero at `pi`.
    pub clamped: usize,
}

/// Damped substitution on `pi`. If it fails and `newton_fallback` is set,
/// the mean-field ODE is run to a rough steady state and Newton's method on
/// the interaction scalars finishes from there. `iterations` then counts
/// both phases.
pub fn solve_fixed_point(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
) -> Result<FixedPoint> {
    let (substituted, best) = if opts.adaptive {
        substitute(
            p,
            scale,
            mode,
            opts,
            &mut AdaptiveDamping::new(opts.damping),
        )
    } else {
        substitute(
            p,
            scale,
            mode,
            opts,
            &mut DampedSubstitution {
                omega: opts.damping,
            },
        )
    };
    if !opts.newton_fallback {
        return substituted;
    }
    let spent = match &substituted {
        Ok(_) => return substituted,
        Err(Error::NotConverged { best }) => best.iterations,
        Err(Error::IterationFailed { iteration, .. }) => *iteration,
        Err(_) => return substituted,
    };
    let Some(start) = warm_start(p, scale, mode, opts).or(best.map(|b| b.zeta)) else {
        return substituted;
    };
    match solve_zeta_newton(p, scale, mode, opts, start) {
        Ok(mut fp) => {
            fp.newton_steps = fp.iterations;
            fp.iterations += spent;
            Ok(fp)
        }
        Err(_) => substituted,
    }
}

/// Interaction scalars of the mean-field ODE run from the starting vector
/// until its drift is small. Newton started here converges to the fixed
/// point the dynamics select; started elsewhere it may find another root.
fn warm_start(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
) -> Option<Vec<f64>> {
    let g = opts.init.vector(p).ok()?;
    let ctrl = StepControl::steady_state();
    let ss = steady_state_by_integration(p, scale, mode, &g, 1e-6, 1e4, &ctrl).ok()?;
    RateTable::evaluate(&ss.y, p, scale).ok().map(|r| r.zeta)
}

/// Stationary vector of the generator frozen at interaction scalars `zeta`.
fn frozen_solution(
    zeta: &[f64],
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
) -> Result<MeanFieldVector> {
    let rates = RateTable::from_zeta(zeta.to_vec(), p, scale)?;
    let v = BlockTridiagonal::from_rates(&rates, p.env.generator(), p.levels(), mode);
    linear_qbd_solve(&v)
}

/// `Z(Phi(zeta)) - zeta`, where `Phi` is the frozen stationary vector and
/// `Z` the interaction scalars of a vector.
fn zeta_defect(
    zeta: &[f64],
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
) -> Result<(Vec<f64>, MeanFieldVector)> {
    let pi = frozen_solution(zeta, p, scale, mode)?;
    let f = (0..p.phases())
        .map(|j| interaction_scalar(&pi, j, p).map(|z| z - zeta[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok((f, pi))
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Newton's method on the `m` interaction scalars.
///
/// The rates depend on `pi` only through `zeta`, so `pi V_pi = 0` is
/// equivalent to `zeta = Z(Phi(zeta))`. Where substitution on `pi` is
/// unstable (a steep, decreasing map `zeta -> Z(Phi(zeta))`), this
/// `m`-dimensional root problem is still well conditioned. The Jacobian is
/// formed by forward differences and steps are halved until the defect
/// decreases.
pub fn solve_zeta_newton(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
    start: Vec<f64>,
) -> Result<FixedPoint> {
    p.validate()?;
    check_mode(p, mode)?;
    let m = p.phases();
    let mut zeta = start;
    let (mut f, mut pi) = zeta_defect(&zeta, p, scale, mode)?;
    let mut best: Option<FixedPoint> = None;
    for iteration in 0..=opts.max_iter {
        let asm = assemble(&pi, p, scale, mode)?;
        let residual = asm.generator.stationarity_residual(pi.as_slice());
        let step = sup_distance(linear_qbd_solve(&asm.generator)?.as_slice(), pi.as_slice());
        let snapshot = |converged| FixedPoint {
            pi: pi.clone(),
            residual,
            step,
            iterations: iteration,
            newton_steps: iteration,
            converged,
            mode,
            scale,
            zeta: asm.rates.zeta.clone(),
            clamped: asm.rates.clamped,
        };
        if step <= opts.tol && residual <= opts.tol {
            return Ok(snapshot(true));
        }
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(snapshot(false));
        }
        if iteration == opts.max_iter {
            break;
        }

        let mut jac = DMatrix::zeros(m, m);
        for c in 0..m {
            let h = 1e-7 * zeta[c].abs().max(1.0);
            let mut shifted = zeta.clone();
            shifted[c] += h;
            let (fh, _) = zeta_defect(&shifted, p, scale, mode)?;
            for r in 0..m {
                jac[(r, c)] = (fh[r] - f[r]) / h;
            }
        }
        let rhs = -DVector::from_column_slice(&f);
        let Some(delta) = jac.lu().solve(&rhs) else {
            break;
        };

        let norm = sup_norm(&f);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = zeta
                .iter()
                .zip(delta.iter())
                .map(|(z, d)| z + t * d)
                .collect();
            if let Ok((ft, pt)) = zeta_defect(&trial, p, scale, mode) {
                if sup_norm(&ft) < (1.0 - 1e-4 * t) * norm {
                    zeta = trial;
                    f = ft;
                    pi = pt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let best = best.expect("at least one iterate");
    Err(Error::NotConverged {
        best: Box::new(best),
    })
}

pub fn solve_fixed_point_with(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
    rule: &mut dyn UpdateRule,
) -> Result<FixedPoint> {
    substitute(p, scale, mode, opts, rule).0
}

/// Outer substitution loop. Also returns the iterate with the smallest
/// residual, which survives a failed solve further on.
fn substitute(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
    rule: &mut dyn UpdateRule,
) -> (Result<FixedPoint>, Option<FixedPoint>) {
    let mut best = None;
    let r = substitute_into(p, scale, mode, opts, rule, &mut best);
    (r, best)
}

/// With one phase every paper-literal block is zero, so any vector is
/// stationary and the fixed point is meaningless.
fn check_mode(p: &ModelParams, mode: AssemblyMode) -> Result<()> {
    if mode == AssemblyMode::PaperLiteral && p.phases() == 1 {
        return Err(Error::InvalidParams(
            "paper-literal assembly needs at least two environment phases".into(),
        ));
    }
    Ok(())
}

fn substitute_into(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    opts: &FixedPointOptions,
    rule: &mut dyn UpdateRule,
    best: &mut Option<FixedPoint>,
) -> Result<FixedPoint> {
    p.validate()?;
    check_mode(p, mode)?;
    let levels = p.levels();
    let m = p.phases();
    let mut current = opts.init.vector(p)?;

    // previous iterate and its candidate, kept so a failed step can be retried
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;

    for iteration in 0..=opts.max_iter {
        let fail = |e: Error, it: &MeanFieldVector| Error::IterationFailed {
            iteration,
            iterate: it.as_slice().to_vec(),
            source: Box::new(e),
        };
        let attempt = assemble(&current, p, scale, mode)
            .and_then(|asm| linear_qbd_solve(&asm.generator).map(|c| (asm, c)));
        let (asm, candidate) = match attempt {
            Ok(ok) => ok,
            Err(e) => match (&previous, rule.retreat()) {
                (Some((prev, cand)), Some(omega)) => {
                    current = MeanFieldVector::from_vec(levels, m, relax(prev, cand, omega))?;
                    current.normalize();
                    continue;
                }
                _ => return Err(fail(e, &current)),
            },
        };
        let residual = asm.generator.stationarity_residual(current.as_slice());
        let step = sup_distance(candidate.as_slice(), current.as_slice());

        let snapshot = |converged| FixedPoint {
            pi: current.clone(),
            residual,
            step,
            iterations: iteration,
            newton_steps: 0,
            converged,
            mode,
            scale,
            zeta: asm.rates.zeta.clone(),
            clamped: asm.rates.clamped,
        };
        if step <= opts.tol && residual <= opts.tol {
            return Ok(snapshot(true));
        }
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            *best = Some(snapshot(false));
        }
        if iteration == opts.max_iter {
            break;
        }
        let next = rule.update(current.as_slice(), candidate.as_slice(), step);
        previous = Some((current.as_slice().to_vec(), candidate.into_vec()));
        current = MeanFieldVector::from_vec(levels, m, next)?;
        current.normalize();
    }
    let mut best = best.clone().expect("at least one iterate");
    best.iterations = opts.max_iter;
    Err(Error::NotConverged {
        best: Box::new(best),
    })
}
