//! Event-driven simulation of `N` interacting stations.
//!
//! Two dynamics are available:
//!
//! * [`SimMode::Physical`]: customers arrive system-wide at rate `N lambda_j`
//!   and pick a station uniformly; rented bikes join an explicit in-transit
//!   pool whose bikes each finish their ride at rate `mu_j` at a uniformly
//!   chosen station. A single environment drives all stations.
//! * [`SimMode::PaperRates`]: every station carries its own environment
//!   phase, and moves up one level at the closed finite-`N` rate evaluated on
//!   the current empirical measure. The empirical measure is then a Markov
//!   chain whose expected drift is `y V_y` at scale `N`.
//!
//! Replication seeds are derived from a master seed with [`split_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{total_variation, MeanFieldVector, ModelParams};
use crate::rates::{arrival_rate_from_zeta, interaction_scalar_from, service_rate, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    #[default]
    Physical,
    PaperRates,
}

impl SimMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Physical => "physical",
            Self::PaperRates => "paper-rates",
        }
    }
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physical" => Ok(Self::Physical),
            "paper-rates" => Ok(Self::PaperRates),
            _ => Err(Error::InvalidParams(format!(
                "unknown simulation mode `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The `index`-th output of a splitmix64 stream started at `master`
/// (`index` counts from 0).
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub stations: usize,
    /// Simulated time in hours.
    pub horizon: f64,
    pub seed: u64,
    pub mode: SimMode,
    /// Fraction of the horizon discarded before time averaging.
    pub burn_in: f64,
    /// Spacing of recorded snapshots; `None` records none.
    pub sample_every: Option<f64>,
    /// Stop after this many events even if the horizon is not reached.
    pub max_events: Option<u64>,
    /// Recount parked bikes after every event (physical mode).
    pub check_conservation: bool,
    /// Size of the disjoint station groups whose joint level histogram is
    /// recorded; `None` records nothing.
    pub chaos_group: Option<usize>,
    /// Number of equal time batches the averaging window is cut into.
    pub batches: usize,
    /// Starting configuration; every station at `C` with phases drawn from
    /// the stationary mixture when `None`.
    pub initial: Option<InitialState>,
}

/// Per-station levels and phases at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub levels: Vec<i32>,
    pub phases: Vec<usize>,
}

impl SimConfig {
    pub fn new(stations: usize, horizon: f64, seed: u64) -> Self {
        Self {
            stations,
            horizon,
            seed,
            mode: SimMode::Physical,
            burn_in: 0.2,
            sample_every: None,
            max_events: None,
            check_conservation: false,
            chaos_group: None,
            batches: 20,
            initial: None,
        }
    }

    fn validate(&self, p: &ModelParams) -> Result<()> {
        if let Some(init) = &self.initial {
            let levels = p.levels();
            for &l in &init.levels {
                levels.check(l)?;
            }
            if init.phases.iter().any(|&j| j >= p.phases()) {
                return Err(Error::InvalidParams("initial phase out of range".into()));
            }
            let parked: u64 = init.levels.iter().map(|&l| l.max(0) as u64).sum();
            if self.mode == SimMode::Physical
                && parked > self.stations as u64 * u64::from(p.initial_bikes)
            {
                return Err(Error::InvalidParams(
                    "initial state holds more bikes than N C".into(),
                ));
            }
        }
        if self.stations == 0 {
            return Err(Error::InvalidParams("need at least one station".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidParams(format!(
                "burn-in fraction {} not in [0, 1)",
                self.burn_in
            )));
        }
        if self.batches == 0 {
            return Err(Error::InvalidParams("need at least one batch".into()));
        }
        if let Some(k) = self.chaos_group {
            if k == 0 || k > self.stations {
                return Err(Error::InvalidParams(format!(
                    "group size {k} must lie in 1..={}",
                    self.stations
                )));
            }
        }
        if let Some(init) = &self.initial {
            if init.levels.len() != self.stations || init.phases.len() != self.stations {
                return Err(Error::InvalidParams(
                    "initial state has the wrong station count".into(),
                ));
            }
            if self.mode == SimMode::Physical && init.phases.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::InvalidParams(
                    "physical mode needs one environment phase for all stations".into(),
                ));
            }
        }
        if let Some(dt) = self.sample_every {
            if !(dt > 0.0) {
                return Err(Error::InvalidParams(
                    "sampling interval must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Time-weighted joint level histograms of disjoint station groups.
#[derive(Debug, Clone)]
pub struct GroupHistograms {
    pub group_size: usize,
    pub groups: usize,
    pub levels: usize,
    /// One histogram per batch, indexed by the mixed-radix code of the
    /// group's level offsets (first station most significant). Entries are
    /// station-group-hours.
    pub batches: Vec<Vec<f64>>,
}

impl GroupHistograms {
    /// Joint distribution and product of the pooled single-station
    /// marginals over the chosen batches (with repetition).
    pub fn joint_and_product(&self, batches: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let cells = self.batches[0].len();
        let mut joint = vec![0.0; cells];
        for &b in batches {
            for (o, v) in joint.iter_mut().zip(&self.batches[b]) {
                *o += v;
            }
        }
        let total: f64 = joint.iter().sum();
        if total > 0.0 {
            joint.iter_mut().for_each(|v| *v /= total);
        }
        let n = self.levels;
        let k = self.group_size;
        let mut marginal = vec![0.0; n];
        for (code, w) in joint.iter().enumerate() {
            let mut c = code;
            for _ in 0..k {
                marginal[c % n] += w / k as f64;
                c /= n;
            }
        }
        let product = (0..cells)
            .map(|code| {
                let mut c = code;
                let mut w = 1.0;
                for _ in 0..k {
                    w *= marginal[c % n];
                    c /= n;
                }
                w
            })
            .collect();
        (joint, product)
    }

    pub fn distance(&self) -> f64 {
        let all: Vec<usize> = (0..self.batches.len()).collect();
        let (j, p) = self.joint_and_product(&all);
        total_variation(&j, &p)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub mode: SimMode,
    pub stations: usize,
    pub seed: u64,
    pub sample_times: Vec<f64>,
    pub samples: Vec<MeanFieldVector>,
    /// Empirical measure averaged over `[burn-in, end]`.
    pub time_average: MeanFieldVector,
    pub events: u64,
    /// Time the run stopped (the horizon unless the event cap hit first).
    pub end_time: f64,
    pub averaging_start: f64,
    /// Each station's time-averaged level over the averaging window.
    pub station_mean_level: Vec<f64>,
    pub conservation_checks: u64,
    pub groups: Option<GroupHistograms>,
}

/// Lazily integrated occupation times.
struct Accumulators {
    active: bool,
    batch: usize,
    cell: Vec<f64>,
    cell_last: Vec<f64>,
    station: Vec<f64>,
    station_last: Vec<f64>,
    group_last: Vec<f64>,
    hist: Option<GroupHistograms>,
}

struct System<'a> {
    p: &'a ModelParams,
    cfg: &'a SimConfig,
    n: usize,
    m: usize,
    min_level: i32,
    level: Vec<i32>,
    phase: Vec<usize>,
    /// Global phase in physical mode.
    env: usize,
    in_transit: u64,
    parked: u64,
    count: Vec<usize>,
    /// Members of each (level, phase) cell with each station's position.
    members: Vec<Vec<usize>>,
    pos: Vec<usize>,
    service: Vec<f64>,
    acc: Accumulators,
    rng: ChaCha8Rng,
}

impl<'a> System<'a> {
    fn new(p: &'a ModelParams, cfg: &'a SimConfig) -> Self {
        let n = cfg.stations;
        let m = p.phases();
        let levels = p.levels();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let theta = p.env.stationary();
        let draw_phase = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, w) in theta.iter().enumerate() {
                acc += w;
                if u < acc {
                    return j;
                }
            }
            m - 1
        };
        let (level, phase) = match &cfg.initial {
            Some(init) => (init.levels.clone(), init.phases.clone()),
            None => {
                let env = draw_phase(&mut rng);
                let phase = match cfg.mode {
                    SimMode::Physical => vec![env; n],
                    SimMode::PaperRates => (0..n).map(|_| draw_phase(&mut rng)).collect(),
                };
                (vec![p.c(); n], phase)
            }
        };
        let env = phase[0];
        let parked: u64 = level.iter().map(|&l| l.max(0) as u64).sum();
        let cells = levels.len() * m;
        let mut service = vec![0.0; cells];
        for k in levels.iter() {
            if k > levels.min {
                for j in 0..m {
                    service[levels.offset(k) * m + j] =
                        service_rate(k, j, p).expect("level in range");
                }
            }
        }
        let mut count = vec![0; cells];
        let mut members = vec![Vec::new(); cells];
        let mut pos = vec![0; n];
        for (i, &j) in phase.iter().enumerate() {
            let cell = levels.offset(level[i]) * m + j;
            count[cell] += 1;
            pos[i] = members[cell].len();
            members[cell].push(i);
        }
        let hist = cfg.chaos_group.map(|k| {
            let size = levels.len().pow(k as u32);
            GroupHistograms {
                group_size: k,
                groups: n / k,
                levels: levels.len(),
                batches: vec![vec![0.0; size]; cfg.batches],
            }
        });
        let groups = hist.as_ref().map_or(0, |h| h.groups);
        Self {
            p,
            cfg,
            n,
            m,
            min_level: levels.min,
            level,
            phase,
            env,
            // unused by the closed-rate dynamics, where parked bikes are not conserved
            in_transit: ((n as u64) * u64::from(p.initial_bikes)).saturating_sub(parked),
            parked,
            count,
            members,
            pos,
            service,
            acc: Accumulators {
                active: false,
                batch: 0,
                cell: vec![0.0; cells],
                cell_last: vec![0.0; cells],
                station: vec![0.0; n],
                station_last: vec![0.0; n],
                group_last: vec![0.0; groups],
                hist,
            },
            rng,
        }
    }

    fn cell(&self, level: i32, phase: usize) -> usize {
        (level - self.min_level) as usize * self.m + phase
    }

    fn group_code(&self, g: usize, k: usize) -> usize {
        let n_levels = self.acc.hist.as_ref().map_or(0, |h| h.levels);
        let mut code = 0;
        for s in g * k..g * k + k {
            code = code * n_levels + (self.level[s] - self.min_level) as usize;
        }
        code
    }

    fn touch_cell(&mut self, c: usize, t: f64) {
        if self.acc.active {
            self.acc.cell[c] += self.count[c] as f64 * (t - self.acc.cell_last[c]);
            self.acc.cell_last[c] = t;
        }
    }

    fn touch_station(&mut self, i: usize, t: f64) {
        if !self.acc.active {
            return;
        }
        self.acc.station[i] += f64::from(self.level[i]) * (t - self.acc.station_last[i]);
        self.acc.station_last[i] = t;
        if let Some(k) = self.cfg.chaos_group {
            let g = i / k;
            if g < self.acc.group_last.len() {
                let code = self.group_code(g, k);
                let dt = t - self.acc.group_last[g];
                let batch = self.acc.batch;
                if let Some(h) = self.acc.hist.as_mut() {
                    h.batches[batch][code] += dt;
                }
                self.acc.group_last[g] = t;
            }
        }
    }

    /// Bring every accumulator up to `t`.
    fn flush(&mut self, t: f64) {
        for c in 0..self.count.len() {
            self.touch_cell(c, t);
        }
        for i in 0..self.n {
            self.touch_station(i, t);
        }
    }

    fn start_averaging(&mut self, t: f64) {
        self.acc.active = true;
        self.acc.cell_last.iter_mut().for_each(|x| *x = t);
        self.acc.station_last.iter_mut().for_each(|x| *x = t);
        self.acc.group_last.iter_mut().for_each(|x| *x = t);
    }

    fn move_cell(&mut self, i: usize, from: usize, to: usize) {
        let p = self.pos[i];
        let last = *self.members[from].last().expect("station is in its cell");
        self.members[from].swap_remove(p);
        if last != i {
            self.pos[last] = p;
        }
        self.pos[i] = self.members[to].len();
        self.members[to].push(i);
        self.count[from] -= 1;
        self.count[to] += 1;
    }

    fn set_level(&mut self, i: usize, new: i32, t: f64) {
        let from = self.cell(self.level[i], self.phase[i]);
        let to = self.cell(new, self.phase[i]);
        self.touch_cell(from, t);
        self.touch_cell(to, t);
        self.touch_station(i, t);
        self.parked = self.parked - self.level[i].max(0) as u64 + new.max(0) as u64;
        self.level[i] = new;
        self.move_cell(i, from, to);
    }

    fn set_phase(&mut self, i: usize, new: usize, t: f64) {
        let from = self.cell(self.level[i], self.phase[i]);
        let to = self.cell(self.level[i], new);
        self.touch_cell(from, t);
        self.touch_cell(to, t);
        self.phase[i] = new;
        self.move_cell(i, from, to);
    }

    /// Physical mode switches every station at once.
    fn set_global_phase(&mut self, new: usize, t: f64) {
        for c in 0..self.count.len() {
            self.touch_cell(c, t);
        }
        let old = self.env;
        let levels = self.p.levels();
        for k in levels.iter() {
            let (a, b) = (self.cell(k, old), self.cell(k, new));
            self.count[b] = self.count[a];
            self.count[a] = 0;
            let moved = std::mem::take(&mut self.members[a]);
            self.members[b] = moved;
        }
        self.env = new;
        self.phase.iter_mut().for_each(|j| *j = new);
    }

    fn pick_phase(&mut self, from: usize) -> usize {
        let w = self.p.env.generator();
        let total = -w[(from, from)];
        let mut u = self.rng.random::<f64>() * total;
        let mut last = from;
        for j in 0..self.m {
            if j == from || w[(from, j)] <= 0.0 {
                continue;
            }
            last = j;
            if u < w[(from, j)] {
                return j;
            }
            u -= w[(from, j)];
        }
        last
    }

    fn measure(&self) -> MeanFieldVector {
        let data = self
            .count
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect();
        MeanFieldVector::from_vec(self.p.levels(), self.m, data).expect("consistent sizes")
    }

    fn check_conservation(&self) -> Result<()> {
        let parked: u64 = self.level.iter().map(|&l| l.max(0) as u64).sum();
        let total = self.n as u64 * self.p.initial_bikes as u64;
        if parked != self.parked || parked + self.in_transit != total {
            return Err(Error::Simulation(format!(
                "bike count {} parked + {} riding != {total}",
                parked, self.in_transit
            )));
        }
        Ok(())
    }

    /// Physical mode: total event rate and its three components.
    fn physical_rates(&self) -> [f64; 3] {
        let j = self.env;
        [
            self.n as f64 * self.p.env.lambda()[j],
            self.in_transit as f64 * self.p.env.mu()[j],
            self.p.env.leave_rate(j),
        ]
    }

    fn physical_event(&mut self, rates: [f64; 3], t: f64) {
        let total: f64 = rates.iter().sum();
        let u = self.rng.random::<f64>() * total;
        let (k_cap, l) = (self.p.k(), self.p.l());
        if u < rates[0] {
            let i = self.rng.random_range(0..self.n);
            let lev = self.level[i];
            if lev >= 1 {
                self.set_level(i, lev - 1, t);
                self.in_transit += 1;
            } else if lev > -l && self.rng.random::<f64>() < self.p.alpha {
                self.set_level(i, lev - 1, t);
            }
        } else if u < rates[0] + rates[1] {
            let i = self.rng.random_range(0..self.n);
            let lev = self.level[i];
            if lev <= -1 {
                // the waiting renter rides off on the returned bike
                self.set_level(i, lev + 1, t);
            } else if lev < k_cap || (lev < k_cap + l && self.rng.random::<f64>() < self.p.beta) {
                self.set_level(i, lev + 1, t);
                self.in_transit -= 1;
            }
        } else {
            let j = self.pick_phase(self.env);
            self.set_global_phase(j, t);
        }
    }

    /// Paper-rates mode: up rate per cell at the current empirical measure.
    fn arrival_table(&self, out: &mut [f64]) {
        let levels = self.p.levels();
        let n = self.n as f64;
        for j in 0..self.m {
            let zeta =
                interaction_scalar_from(|k| self.count[self.cell(k, j)] as f64 / n, j, self.p)
                    // only reachable when every station sits in one cell at or above
                    // capacity, where the up rate carries a zero factor anyway
                    .unwrap_or(0.0);
            for k in levels.iter() {
                let c = self.cell(k, j);
                out[c] = if k == levels.max {
                    0.0
                } else {
                    arrival_rate_from_zeta(k, j, zeta, Scale::Finite(self.n as u64), self.p)
                        .expect("level below ceiling")
                        .max(0.0)
                };
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn paper_event(&mut self, up: &[f64], total: f64, t: f64) {
        let mut u = self.rng.random::<f64>() * total;
        for c in 0..self.count.len() {
            let cnt = self.count[c] as f64;
            if cnt == 0.0 {
                continue;
            }
            let j = c % self.m;
            let rates = [self.service[c], up[c], self.p.env.leave_rate(j)];
            for (kind, r) in rates.iter().enumerate() {
                let w = cnt * r;
                if u < w {
                    let members = &self.members[c];
                    let i = members[self.rng.random_range(0..members.len())];
                    let lev = self.level[i];
                    match kind {
                        0 => self.set_level(i, lev - 1, t),
                        1 => self.set_level(i, lev + 1, t),
                        _ => {
                            let to = self.pick_phase(j);
                            self.set_phase(i, to, t);
                        }
                    }
                    return;
                }
                u -= w;
            }
        }
    }
}

fn paper_total(sys: &System, up: &[f64]) -> f64 {
    let mut total = 0.0;
    for (c, &cnt) in sys.count.iter().enumerate() {
        if cnt > 0 {
            let j = c % sys.m;
            total += cnt as f64 * (sys.service[c] + up[c] + sys.p.env.leave_rate(j));
        }
    }
    total
}

/// Simulate one replication.
pub fn run(p: &ModelParams, cfg: &SimConfig) -> Result<SimOutput> {
    p.validate()?;
    cfg.validate(p)?;
    let mut sys = System::new(p, cfg);
    let avg_start = cfg.burn_in * cfg.horizon;
    let batch_len = (cfg.horizon - avg_start) / cfg.batches as f64;
    let mut sample_times = Vec::new();
    let mut samples = Vec::new();
    let mut next_sample = cfg.sample_every.map(|_| 0.0);
    let mut next_batch = 1usize;
    let mut up = vec![0.0; sys.count.len()];
    let mut t = 0.0;
    let mut events = 0u64;
    let mut checks = 0u64;
    if avg_start == 0.0 {
        sys.start_averaging(0.0);
    }

    let end_time = loop {
        let (total, phys) = match cfg.mode {
            SimMode::Physical => {
                let r = sys.physical_rates();
                (r.iter().sum::<f64>(), r)
            }
            SimMode::PaperRates => {
                sys.arrival_table(&mut up);
                (paper_total(&sys, &up), [0.0; 3])
            }
        };
        let dt = if total > 0.0 {
            let e: f64 = Exp1.sample(&mut sys.rng);
            e / total
        } else {
            f64::INFINITY
        };
        let t_next = t + dt;
        let stop = t_next.min(cfg.horizon);

        // the state is constant on [t, t_next)
        while let Some(ts) = next_sample {
            if ts > stop || (ts == stop && stop == t_next && t_next < cfg.horizon) {
                break;
            }
            sample_times.push(ts);
            samples.push(sys.measure());
            let nxt = ts + cfg.sample_every.expect("sampling on");
            next_sample = (nxt <= cfg.horizon * (1.0 + 1e-12)).then_some(nxt.min(cfg.horizon));
        }
        if !sys.acc.active && avg_start <= stop && avg_start > 0.0 {
            sys.start_averaging(avg_start);
        }
        while sys.acc.active && next_batch < cfg.batches {
            let tb = avg_start + next_batch as f64 * batch_len;
            if tb > stop {
                break;
            }
            sys.flush(tb);
            sys.acc.batch = next_batch;
            next_batch += 1;
        }
        if t_next >= cfg.horizon {
            break cfg.horizon;
        }
        t = t_next;
        match cfg.mode {
            SimMode::Physical => sys.physical_event(phys, t),
            SimMode::PaperRates => sys.paper_event(&up, total, t),
        }
        events += 1;
        if cfg.check_conservation && cfg.mode == SimMode::Physical {
            sys.check_conservation()?;
            checks += 1;
        }
        if cfg.max_events.is_some_and(|cap| events >= cap) {
            break t;
        }
    };

    if !sys.acc.active {
        sys.start_averaging(end_time);
    }
    sys.flush(end_time);
    let window = end_time - avg_start.min(end_time);
    let mut time_average = MeanFieldVector::zeros(p.levels(), sys.m);
    if window > 0.0 {
        for (o, v) in time_average.as_mut_slice().iter_mut().zip(&sys.acc.cell) {
            *o = v / (sys.n as f64 * window);
        }
    } else {
        time_average = sys.measure();
    }
    let station_mean_level = if window > 0.0 {
        sys.acc.station.iter().map(|v| v / window).collect()
    } else {
        sys.level.iter().map(|&l| f64::from(l)).collect()
    };
    Ok(SimOutput {
        mode: cfg.mode,
        stations: sys.n,
        seed: cfg.seed,
        sample_times,
        samples,
        time_average,
        events,
        end_time,
        averaging_start: avg_start.min(end_time),
        station_mean_level,
        conservation_checks: checks,
        groups: sys.acc.hist.take(),
    })
}

#[derive(Debug, Clone)]
pub struct ChaosReport {
    pub group_size: usize,
    pub groups: usize,
    /// Time-averaged joint distribution of a group's levels.
    pub joint: Vec<f64>,
    /// Product of the pooled single-station marginals.
    pub product: Vec<f64>,
    pub distance: f64,
    /// Percentile bootstrap interval over time batches.
    pub ci: (f64, f64),
}

/// Compare the joint level distribution of `k` stations with the product of
/// the marginals. Groups are the disjoint blocks `0..k`, `k..2k`, ...
pub fn chaos_check(
    p: &ModelParams,
    cfg: &SimConfig,
    k: usize,
    resamples: usize,
) -> Result<ChaosReport> {
    let mut cfg = cfg.clone();
    cfg.chaos_group = Some(k);
    let out = run(p, &cfg)?;
    let hist = out.groups.expect("groups requested");
    Ok(chaos_report(
        &hist,
        split_seed(cfg.seed, u64::MAX - 1),
        resamples,
    ))
}

/// Distance and bootstrap interval from recorded group histograms.
pub fn chaos_report(hist: &GroupHistograms, seed: u64, resamples: usize) -> ChaosReport {
    let all: Vec<usize> = (0..hist.batches.len()).collect();
    let (joint, product) = hist.joint_and_product(&all);
    let distance = total_variation(&joint, &product);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = hist.batches.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let pick: Vec<usize> = (0..b).map(|_| rng.random_range(0..b)).collect();
            let (j, q) = hist.joint_and_product(&pick);
            total_variation(&j, &q)
        })
        .collect();
    stats.sort_by(|a, b| a.total_cmp(b));
    let ci = if stats.is_empty() {
        (distance, distance)
    } else {
        let q = |f: f64| stats[((f * (stats.len() - 1) as f64).round()) as usize];
        (q(0.025), q(0.975))
    };
    ChaosReport {
        group_size: hist.group_size,
        groups: hist.groups,
        joint,
        product,
        distance,
        ci,
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub stations: usize,
    pub seeds: Vec<u64>,
    /// Total-variation distance between each replication's time-averaged
    /// level marginal and the reference.
    pub distances: Vec<f64>,
    pub mean: f64,
    /// Two standard errors.
    pub half_width: f64,
}

/// Replications at each station count, run in parallel. Replication `r` of
/// the `i`-th entry uses seed `split_seed(master, i * reps + r)`.
pub fn convergence_sweep(
    p: &ModelParams,
    base: &SimConfig,
    station_counts: &[usize],
    reps: usize,
    reference: &MeanFieldVector,
) -> Result<Vec<ConvergenceRow>> {
    let target = reference.level_marginal();
    let jobs: Vec<(usize, usize, u64)> = station_counts
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..reps).map(move |r| (i, n, (i * reps + r) as u64)))
        .map(|(i, n, idx)| (i, n, split_seed(base.seed, idx)))
        .collect();
    let results: Vec<Result<(usize, u64, f64)>> = jobs
        .par_iter()
        .map(|&(i, n, seed)| {
            let cfg = SimConfig {
                stations: n,
                seed,
                chaos_group: None,
                sample_every: None,
                ..base.clone()
            };
            let out = run(p, &cfg)?;
            Ok((
                i,
                seed,
                total_variation(&out.time_average.level_marginal(), &target),
            ))
        })
        .collect();
    let mut rows: Vec<ConvergenceRow> = station_counts
        .iter()
        .map(|&n| ConvergenceRow {
            stations: n,
            seeds: Vec::new(),
            distances: Vec::new(),
            mean: 0.0,
            half_width: 0.0,
        })
        .collect();
    for r in results {
        let (i, seed, d) = r?;
        rows[i].seeds.push(seed);
        rows[i].distances.push(d);
    }
    for row in &mut rows {
        let s = row.distances.len() as f64;
        row.mean = row.distances.iter().sum::<f64>() / s;
        let var = if s > 1.0 {
            row.distances
                .iter()
                .map(|d| (d - row.mean).powi(2))
                .sum::<f64>()
                / (s - 1.0)
        } else {
            0.0
        };
        row.half_width = 2.0 * (var / s).sqrt();
    }
    Ok(rows)
}
