//! The mean-field ODE `dy/dt = y V_y` integrated with an embedded
//! Dormand-Prince 5(4) pair.

use std::io::Write;

use crate::error::{Error, Result};
use crate::generator::{assemble, AssemblyMode};
use crate::model::{MeanFieldVector, ModelParams};
use crate::rates::Scale;

// Dormand-Prince tableau; the system is autonomous so the nodes are unused
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order weights minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Step-size control and output sampling.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub atol: f64,
    pub rtol: f64,
    /// First trial step; chosen automatically when `None`.
    pub initial_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
    /// Output spacing in hours. `None` stores every accepted step.
    pub sample_every: Option<f64>,
    /// Entries above `-negative_tol` are treated as roundoff and clamped.
    pub negative_tol: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            initial_step: None,
            max_step: f64::INFINITY,
            max_steps: 10_000_000,
            sample_every: None,
            negative_tol: 1e-12,
        }
    }
}

impl StepControl {
    /// Tight tolerances for driving the drift norm below `1e-10`. Near an
    /// equilibrium the step size is stability-limited and the drift settles
    /// at roughly `100 * atol`.
    pub fn steady_state() -> Self {
        Self {
            atol: 1e-14,
            rtol: 1e-12,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldVector>,
    pub mode: AssemblyMode,
    pub scale: Scale,
    pub accepted: usize,
    pub rejected: usize,
    /// Steps after which roundoff negatives were clamped.
    pub clamp_events: usize,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldVector {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    /// Largest `|y(t) e - 1|` over the stored states.
    pub fn max_mass_error(&self) -> f64 {
        self.states
            .iter()
            .map(|y| (y.total() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// One row per stored time: `t, y(k,j)...`, columns named `y[k;j]`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let Some(first) = self.states.first() else {
            return Ok(());
        };
        write!(out, "t")?;
        for k in first.levels().iter() {
            for j in 0..first.phases() {
                write!(out, ",y[{k};{j}]")?;
            }
        }
        writeln!(out)?;
        for (t, y) in self.times.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for v in y.as_slice() {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Right-hand side `y V_y`.
pub struct Drift<'a> {
    params: &'a ModelParams,
    scale: Scale,
    mode: AssemblyMode,
}

impl<'a> Drift<'a> {
    pub fn new(params: &'a ModelParams, scale: Scale, mode: AssemblyMode) -> Self {
        Self {
            params,
            scale,
            mode,
        }
    }

    pub fn eval(&self, y: &MeanFieldVector, out: &mut [f64]) -> Result<()> {
        let asm = assemble(y, self.params, self.scale, self.mode)?;
        asm.generator.left_mul_into(y.as_slice(), out);
        Ok(())
    }

    /// Largest total leaving rate of any (level, phase) state.
    pub fn rate_scale(&self, y: &MeanFieldVector) -> Result<f64> {
        let v = assemble(y, self.params, self.scale, self.mode)?.generator;
        let mut r = 0.0f64;
        for k in v.levels().iter() {
            for i in 0..v.phases() {
                r = r.max(v.local(k)[(i, i)].abs());
            }
        }
        Ok(r)
    }

    pub fn norm(&self, y: &MeanFieldVector) -> Result<f64> {
        let mut d = vec![0.0; y.len()];
        self.eval(y, &mut d)?;
        Ok(d.iter().fold(0.0, |a, x| a.max(x.abs())))
    }
}

/// Integrator state between accepted steps.
struct Stepper<'a> {
    drift: Drift<'a>,
    ctrl: StepControl,
    y: MeanFieldVector,
    t: f64,
    h: f64,
    k1: Vec<f64>,
    accepted: usize,
    rejected: usize,
    clamp_events: usize,
}

impl<'a> Stepper<'a> {
    fn new(drift: Drift<'a>, g: MeanFieldVector, ctrl: StepControl) -> Result<Self> {
        let mut k1 = vec![0.0; g.len()];
        drift.eval(&g, &mut k1).map_err(|e| abort(0.0, e))?;
        let h = match ctrl.initial_step {
            Some(h) => h,
            None => {
                let d = k1.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                let rate = drift.rate_scale(&g).map_err(|e| abort(0.0, e))?;
                let mut h: f64 = 1e-3;
                if d > 0.0 {
                    h = f64::min(h.max(1e-3 / d), 1e3);
                }
                if rate > 0.0 {
                    h = h.min(0.1 / rate);
                }
                h.min(ctrl.max_step)
            }
        };
        Ok(Self {
            drift,
            ctrl,
            y: g,
            t: 0.0,
            h,
            k1,
            accepted: 0,
            rejected: 0,
            clamp_events: 0,
        })
    }

    fn stage(&self, coeffs: &[(f64, &[f64])], h: f64) -> MeanFieldVector {
        let mut z = self.y.clone();
        for (c, k) in coeffs {
            for (zi, ki) in z.as_mut_slice().iter_mut().zip(k.iter()) {
                *zi += h * c * ki;
            }
        }
        z
    }

    #[allow(clippy::too_many_arguments)]
    fn trial(
        &self,
        h: f64,
        k2: &mut [f64],
        k3: &mut [f64],
        k4: &mut [f64],
        k5: &mut [f64],
        k6: &mut [f64],
        k7: &mut [f64],
    ) -> Result<MeanFieldVector> {
        let k1 = &self.k1;
        let d = &self.drift;
        d.eval(&self.stage(&[(A21, k1)], h), k2)?;
        d.eval(&self.stage(&[(A31, k1), (A32, k2)], h), k3)?;
        d.eval(&self.stage(&[(A41, k1), (A42, k2), (A43, k3)], h), k4)?;
        d.eval(
            &self.stage(&[(A51, k1), (A52, k2), (A53, k3), (A54, k4)], h),
            k5,
        )?;
        d.eval(
            &self.stage(&[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)], h),
            k6,
        )?;
        let y_new = self.stage(&[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)], h);
        d.eval(&y_new, k7)?;
        Ok(y_new)
    }

    /// Advance by one accepted step of length at most `limit`.
    fn step(&mut self, limit: f64) -> Result<()> {
        let n = self.y.len();
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        loop {
            if self.accepted + self.rejected >= self.ctrl.max_steps {
                return Err(Error::IntegrationAborted {
                    time: self.t,
                    reason: format!("step budget of {} exhausted", self.ctrl.max_steps),
                });
            }
            let h = self.h.min(limit).min(self.ctrl.max_step);
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::IntegrationAborted {
                    time: self.t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let t = self.t;
            let y_new = match self.trial(h, &mut k2, &mut k3, &mut k4, &mut k5, &mut k6, &mut k7) {
                Ok(y) => y,
                Err(e) => {
                    // an inadmissible stage (retry series past its pole) means the step
                    // overshot; only a vanishing step makes it fatal
                    self.rejected += 1;
                    self.h = h * 0.25;
                    if self.h <= 1e-14 * t.abs().max(1.0) {
                        return Err(abort(t, e));
                    }
                    continue;
                }
            };
            let k1 = &self.k1;
            let mut err = 0.0f64;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.ctrl.atol
                    + self.ctrl.rtol * self.y.as_slice()[i].abs().max(y_new.as_slice()[i].abs());
                err = err.max((e / sc).abs());
            }

            if err <= 1.0 {
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.t += h;
                self.y = y_new;
                self.k1.copy_from_slice(&k7);
                self.accepted += 1;
                if h >= self.h * 0.999 || factor < 1.0 {
                    self.h = h * factor;
                }
                self.tidy()?;
                return Ok(());
            }
            self.rejected += 1;
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    /// Clamp roundoff negatives; refuse real negativity.
    fn tidy(&mut self) -> Result<()> {
        let mut worst = 0.0f64;
        for x in self.y.as_slice() {
            worst = worst.min(*x);
        }
        if worst >= 0.0 {
            return Ok(());
        }
        if worst < -self.ctrl.negative_tol {
            return Err(Error::IntegrationAborted {
                time: self.t,
                reason: format!("state entry {worst:e} is negative beyond roundoff"),
            });
        }
        for x in self.y.as_mut_slice() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.y.normalize();
        self.clamp_events += 1;
        let mut k1 = vec![0.0; self.y.len()];
        self.drift
            .eval(&self.y, &mut k1)
            .map_err(|e| abort(self.t, e))?;
        self.k1 = k1;
        Ok(())
    }
}

fn abort(time: f64, e: Error) -> Error {
    Error::IntegrationAborted {
        time,
        reason: e.to_string(),
    }
}

fn check_start(g: &MeanFieldVector, p: &ModelParams) -> Result<()> {
    if g.levels() != p.levels() || g.phases() != p.phases() {
        return Err(Error::Dimension(
            "initial vector does not match model".into(),
        ));
    }
    if g.as_slice().iter().any(|&x| !(x >= 0.0)) || (g.total() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(
            "initial vector is not a probability vector".into(),
        ));
    }
    Ok(())
}

/// Integrate from `g` over `[0, t_end]`.
pub fn integrate(
    g: &MeanFieldVector,
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    t_end: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    check_start(g, p)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParams(format!(
            "t_end = {t_end} must be positive"
        )));
    }
    let mut st = Stepper::new(Drift::new(p, scale, mode), g.clone(), ctrl.clone())?;
    let mut times = vec![0.0];
    let mut states = vec![g.clone()];
    let mut next_sample = ctrl.sample_every.map(|dt| dt.min(t_end));
    while st.t < t_end {
        let target = next_sample.unwrap_or(t_end).min(t_end);
        st.step(target - st.t)?;
        // snap onto the target to keep the grid exact
        if (target - st.t).abs() <= 1e-12 * target.max(1.0) {
            st.t = target;
        }
        match (ctrl.sample_every, next_sample) {
            (Some(dt), Some(ns)) => {
                if st.t >= ns {
                    times.push(st.t);
                    states.push(st.y.clone());
                    next_sample = Some((ns + dt).min(t_end));
                }
            }
            _ => {
                times.push(st.t);
                states.push(st.y.clone());
            }
        }
    }
    if *times.last().unwrap() < st.t {
        times.push(st.t);
        states.push(st.y.clone());
    }
    Ok(Trajectory {
        times,
        states,
        mode,
        scale,
        accepted: st.accepted,
        rejected: st.rejected,
        clamp_events: st.clamp_events,
    })
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub y: MeanFieldVector,
    pub time: f64,
    pub derivative_norm: f64,
    /// Largest `|y e - 1|` seen at any accepted step.
    pub max_mass_error: f64,
}

/// Integrate until `||y V_y||_inf < tol`.
pub fn steady_state_by_integration(
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
    g: &MeanFieldVector,
    tol: f64,
    t_max: f64,
    ctrl: &StepControl,
) -> Result<SteadyState> {
    check_start(g, p)?;
    let mut st = Stepper::new(Drift::new(p, scale, mode), g.clone(), ctrl.clone())?;
    let mut max_mass_error = (g.total() - 1.0).abs();
    loop {
        let d = st.k1.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if d < tol {
            return Ok(SteadyState {
                y: st.y.clone(),
                time: st.t,
                derivative_norm: d,
                max_mass_error,
            });
        }
        if st.t >= t_max {
            return Err(Error::NoSteadyState {
                t_max,
                derivative_norm: d,
            });
        }
        st.step(t_max - st.t)?;
        max_mass_error = max_mass_error.max((st.y.total() - 1.0).abs());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use crate::model::sup_distance;
    use crate::qbd::{solve_fixed_point, FixedPointOptions};
    use nalgebra::DMatrix;

    fn common() -> ModelParams {
        let env = Environment::two_phase(1.0, 1.0, [35.0, 50.0], [30.0, 20.0]).unwrap();
        ModelParams::new(20, 10, 5, 0.5, 0.5, env).unwrap()
    }

    fn start(p: &ModelParams) -> MeanFieldVector {
        MeanFieldVector::point_mass(p.levels(), p.c(), p.env.stationary())
    }

    #[test]
    fn environment_relaxation_matches_closed_form() {
        // no customers: only the phase mixture moves, p1(t) = b/(a+b) + (1 - b/(a+b)) e^{-(a+b)t}
        let (a, b) = (2.0, 0.5);
        let env = Environment::two_phase(a, b, [0.0, 0.0], [0.0, 0.0]).unwrap();
        let p = ModelParams::new(3, 2, 1, 0.5, 0.5, env).unwrap();
        let g = MeanFieldVector::point_mass(p.levels(), 2, &[1.0, 0.0]);
        let ctrl = StepControl {
            sample_every: Some(0.1),
            ..Default::default()
        };
        let traj = integrate(&g, &p, Scale::Limit, AssemblyMode::Standard, 2.0, &ctrl).unwrap();
        let s = b / (a + b);
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let exact = s + (1.0 - s) * (-(a + b) * t).exp();
            assert!((y[(2, 0)] - exact).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let p = common();
        let fp = solve_fixed_point(
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            &FixedPointOptions::default(),
        )
        .unwrap();
        let traj = integrate(
            &fp.pi,
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            5.0,
            &StepControl::default(),
        )
        .unwrap();
        for y in &traj.states {
            assert!(y.sup_distance(&fp.pi) < 1e-8);
        }
    }

    #[test]
    fn zero_rates_freeze_the_state() {
        let env = Environment::new(DMatrix::zeros(1, 1), vec![0.0], vec![0.0]).unwrap();
        let p = ModelParams::new(4, 2, 1, 0.5, 0.5, env).unwrap();
        let g = MeanFieldVector::uniform(p.levels(), 1);
        let traj = integrate(
            &g,
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            10.0,
            &StepControl::default(),
        )
        .unwrap();
        assert_eq!(traj.last(), &g);
    }

    #[test]
    fn phases_stay_isolated_without_switching() {
        let base = Environment::two_phase(1.0, 1.0, [3.0, 4.0], [2.0, 1.0]).unwrap();
        let mut p = ModelParams::new(6, 3, 2, 0.5, 0.5, base).unwrap();
        p.env = p.env.without_switching();
        let g = MeanFieldVector::point_mass(p.levels(), 3, &[1.0, 0.0]);
        let traj = integrate(
            &g,
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            3.0,
            &StepControl::default(),
        )
        .unwrap();
        for y in &traj.states {
            assert_eq!(y.phase_marginal()[1], 0.0);
        }
    }

    #[test]
    fn sampling_grid_is_exact() {
        let p = common();
        let ctrl = StepControl {
            sample_every: Some(0.25),
            ..Default::default()
        };
        let traj = integrate(
            &start(&p),
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            1.0,
            &ctrl,
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(traj.max_mass_error() <= 1e-9);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("t,y[-5;0],y[-5;1]"));
    }

    #[test]
    fn long_run_reaches_fixed_point() {
        let p = common();
        let ss = steady_state_by_integration(
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            &start(&p),
            1e-10,
            1e4,
            &StepControl::steady_state(),
        )
        .unwrap();
        eprintln!(
            "steady state at t = {} (drift {:e})",
            ss.time, ss.derivative_norm
        );
        let fp = solve_fixed_point(
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            &FixedPointOptions::default(),
        )
        .unwrap();
        assert!(ss.max_mass_error <= 1e-9);
        assert!(sup_distance(ss.y.as_slice(), fp.pi.as_slice()) <= 1e-6);
    }

    #[test]
    fn finite_n_trajectories_approach_limit() {
        let p = common();
        let ctrl = StepControl {
            sample_every: Some(0.5),
            ..Default::default()
        };
        let limit = integrate(
            &start(&p),
            &p,
            Scale::Limit,
            AssemblyMode::Standard,
            3.0,
            &ctrl,
        )
        .unwrap();
        let mut errs = Vec::new();
        for n in [10u64, 100, 1000] {
            let tr = integrate(
                &start(&p),
                &p,
                Scale::Finite(n),
                AssemblyMode::Standard,
                3.0,
                &ctrl,
            )
            .unwrap();
            let e = tr
                .states
                .iter()
                .zip(&limit.states)
                .map(|(a, b)| a.sup_distance(b))
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}
