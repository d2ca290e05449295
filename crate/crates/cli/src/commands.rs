//! Subcommand implementations.

use std::path::PathBuf;

use bikeshare::meanfield::{integrate, steady_state_by_integration, Drift};
use bikeshare::measures::{performance, PerformanceReport};
use bikeshare::model::{sup_distance, total_variation};
use bikeshare::simulator::{self, chaos_report, split_seed, SimOutput};
use bikeshare::{solve_fixed_point, AssemblyMode, Error, FixedPoint, MeanFieldVector, ModelParams};
use rayon::prelude::*;

use crate::config::{set_param, Config};
use crate::output::{ensure_dir, num, Metadata, Table};
use crate::plot::{self, LinePlot, Series};
use crate::{CliError, Command};

/// Writes tables and plots into the output directory.
struct Sink {
    dir: PathBuf,
    meta: Metadata,
    plots: bool,
}

impl Sink {
    fn new(cfg: &Config, command: Command) -> Result<Self, CliError> {
        Ok(Self {
            dir: ensure_dir(&cfg.output.dir)?,
            meta: Metadata::new(command.name(), &cfg.to_toml()),
            plots: cfg.output.plots,
        })
    }

    fn table(&self, name: &str, t: &Table) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        t.write(&path, &self.meta)?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn plot(&self, name: &str, p: &LinePlot) -> Result<(), CliError> {
        if self.plots {
            let path = self.dir.join(name);
            p.write(&path)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

pub fn dispatch(command: Command, cfg: &Config) -> Result<(), CliError> {
    if command != Command::Sweep && cfg.sweep.is_some() {
        return Err(CliError::Config(format!(
            "the configuration describes a sweep; run `sweep` instead of `{}`",
            command.name()
        )));
    }
    match command {
        Command::EnvBuild => env_build(cfg),
        Command::FixedPoint => fixed_point(cfg),
        Command::Integrate => integrate_cmd(cfg),
        Command::Simulate => simulate(cfg),
        Command::Sweep => sweep(cfg),
        Command::Compare => compare(cfg),
    }
}

fn report_header() -> Vec<String> {
    PerformanceReport::HEADER
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn report_cells(r: &PerformanceReport) -> Vec<String> {
    r.values().iter().map(|&v| num(v)).collect()
}

fn na(n: usize) -> Vec<String> {
    vec!["NA".into(); n]
}

fn pi_table(pi: &MeanFieldVector) -> Table {
    let mut t = Table::new(&["level", "phase", "probability"]);
    for k in pi.levels().iter() {
        for j in 0..pi.phases() {
            t.push(vec![k.to_string(), (j + 1).to_string(), num(pi[(k, j)])]);
        }
    }
    t
}

fn level_plot(title: &str, series: Vec<(&str, &MeanFieldVector)>) -> LinePlot {
    LinePlot {
        title: title.into(),
        x_label: "level".into(),
        y_label: "probability".into(),
        series: series
            .into_iter()
            .map(|(name, y)| Series {
                name: name.into(),
                points: y
                    .levels()
                    .iter()
                    .zip(y.level_marginal())
                    .map(|(k, v)| (f64::from(k), v))
                    .collect(),
            })
            .collect(),
    }
}

fn env_build(cfg: &Config) -> Result<(), CliError> {
    let env = cfg.environment()?;
    let sink = Sink::new(cfg, Command::EnvBuild)?;
    let m = env.phases();
    let mut header: Vec<String> = ["phase", "theta", "lambda", "mu"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=m).map(|j| format!("w{j}")));
    let mut t = Table::new(&header);
    let w = env.generator();
    for j in 0..m {
        let mut row = vec![
            (j + 1).to_string(),
            num(env.stationary()[j]),
            num(env.lambda()[j]),
            num(env.mu()[j]),
        ];
        row.extend((0..m).map(|i| num(w[(j, i)])));
        t.push(row);
    }
    sink.table("environment.csv", &t)?;

    // a drop-in [environment] section for other configurations
    let rows: Vec<String> = (0..m)
        .map(|j| {
            let r: Vec<String> = (0..m).map(|i| num(w[(j, i)])).collect();
            format!("[{}]", r.join(", "))
        })
        .collect();
    let list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ");
    let spec = format!(
        "# bikeshare {}\n# stationary vector: [{}]\n[environment]\ngenerator = [{}]\nlambda = [{}]\nmu = [{}]\n",
        env!("CARGO_PKG_VERSION"),
        list(env.stationary()),
        rows.join(", "),
        list(env.lambda()),
        list(env.mu())
    );
    let path = sink.dir.join("environment.toml");
    std::fs::write(&path, spec).map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", path.display());
    println!("phases: {m}");
    println!("theta: [{}]", list(env.stationary()));
    Ok(())
}

fn fixed_point_row(p: &ModelParams, fp: &FixedPoint, status: &str) -> Vec<String> {
    let mut row = vec![
        status.to_string(),
        fp.mode.to_string(),
        fp.scale.to_string(),
        fp.iterations.to_string(),
        fp.newton_steps.to_string(),
        num(fp.residual),
        num(fp.step),
        fp.clamped.to_string(),
    ];
    row.extend(report_cells(&performance(&fp.pi, p.capacity)));
    row
}

fn fixed_point(cfg: &Config) -> Result<(), CliError> {
    let p = cfg.model()?;
    let mode = cfg.assembly_mode()?;
    let opts = cfg.fixed_point_options()?;
    let sink = Sink::new(cfg, Command::FixedPoint)?;
    let mut header: Vec<String> = [
        "status",
        "mode",
        "scale",
        "iterations",
        "newton_steps",
        "residual",
        "step",
        "clamped",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(report_header());
    let mut report = Table::new(&header);

    let (fp, status) = match solve_fixed_point(&p, cfg.scale(), mode, &opts) {
        Ok(fp) => (fp, "ok"),
        Err(Error::NotConverged { best }) => (*best, "not-converged"),
        Err(e) => {
            return Err(CliError::Incomplete(format!("fixed point failed: {e}")));
        }
    };
    report.push(fixed_point_row(&p, &fp, status));
    sink.table("report.csv", &report)?;
    sink.table("pi.csv", &pi_table(&fp.pi))?;
    sink.plot(
        "pi.svg",
        &level_plot("stationary level distribution", vec![("pi", &fp.pi)]),
    )?;
    println!(
        "status {status}: {} iterations, residual {:.3e}, step {:.3e}",
        fp.iterations, fp.residual, fp.step
    );
    let r = performance(&fp.pi, p.capacity);
    for (h, v) in PerformanceReport::HEADER.iter().zip(r.values()) {
        println!("{h} = {v:.6}");
    }
    if status == "ok" {
        Ok(())
    } else {
        Err(CliError::Incomplete(format!(
            "fixed point did not converge in {} iterations (best residual {:.3e})",
            fp.iterations, fp.residual
        )))
    }
}

fn integrate_cmd(cfg: &Config) -> Result<(), CliError> {
    let p = cfg.model()?;
    let mode = cfg.assembly_mode()?;
    let scale = cfg.scale();
    let g = cfg.fixed_point_options()?.init.vector(&p)?;
    let sink = Sink::new(cfg, Command::Integrate)?;
    let traj = integrate(
        &g,
        &p,
        scale,
        mode,
        cfg.integrator.t_end,
        &cfg.step_control(),
    )?;

    let mut header = vec!["t".to_string(), "mass_error".to_string()];
    header.extend(report_header());
    let mut summary = Table::new(&header);
    let mut full_header = vec!["t".to_string()];
    for k in p.levels().iter() {
        for j in 0..p.phases() {
            full_header.push(format!("y[{k};{}]", j + 1));
        }
    }
    let mut full = Table::new(&full_header);
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![num(*t), num(y.total() - 1.0)];
        row.extend(report_cells(&performance(y, p.capacity)));
        summary.push(row);
        let mut row = vec![num(*t)];
        row.extend(y.as_slice().iter().map(|&v| num(v)));
        full.push(row);
    }
    sink.table("trajectory.csv", &summary)?;
    sink.table("trajectory_full.csv", &full)?;

    let drift = Drift::new(&p, scale, mode).norm(traj.last())?;
    let mut stats = Table::new(&[
        "t_end",
        "accepted",
        "rejected",
        "clamp_events",
        "max_mass_error",
        "drift_norm",
    ]);
    stats.push(vec![
        num(*traj.times.last().unwrap()),
        traj.accepted.to_string(),
        traj.rejected.to_string(),
        traj.clamp_events.to_string(),
        num(traj.max_mass_error()),
        num(drift),
    ]);
    sink.table("summary.csv", &stats)?;
    sink.plot(
        "trajectory.svg",
        &plot::from_table(&summary, "t", "EQ", None, "mean bikes per station")?,
    )?;
    println!(
        "integrated to t = {} in {} steps ({} rejected); final drift norm {:.3e}; max mass error {:.3e}",
        traj.times.last().unwrap(),
        traj.accepted,
        traj.rejected,
        drift,
        traj.max_mass_error()
    );
    Ok(())
}

fn replication_seed(master: u64, r: usize, reps: usize) -> u64 {
    if reps == 1 {
        master
    } else {
        split_seed(master, r as u64)
    }
}

fn simulate(cfg: &Config) -> Result<(), CliError> {
    let p = cfg.model()?;
    let base = cfg.sim_config()?;
    let reps = cfg.simulation.replications.max(1);
    let sink = Sink::new(cfg, Command::Simulate)?;
    let chaos = cfg.simulation.chaos_group;

    let runs: Vec<Result<SimOutput, Error>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut c = base.clone();
            c.seed = replication_seed(base.seed, r, reps);
            c.chaos_group = chaos;
            simulator::run(&p, &c)
        })
        .collect();

    let mut header: Vec<String> = [
        "replication",
        "seed",
        "status",
        "stations",
        "events",
        "end_time",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(report_header());
    header.extend(
        ["chaos_tv", "chaos_lo", "chaos_hi"]
            .iter()
            .map(|s| s.to_string()),
    );
    header.push("error".into());
    let mut summary = Table::new(&header);
    let mut traj = Table::new(&{
        let mut h = vec!["replication".to_string(), "t".to_string()];
        h.extend(report_header());
        h
    });
    let mut avg_header = vec!["level".to_string(), "phase".to_string()];
    avg_header.extend((0..reps).map(|r| format!("rep{r}")));
    let mut avg = Table::new(&avg_header);
    let mut failures = 0;
    let mut averages: Vec<Option<&MeanFieldVector>> = Vec::new();

    for (r, out) in runs.iter().enumerate() {
        let seed = replication_seed(base.seed, r, reps);
        let mut row = vec![r.to_string(), seed.to_string()];
        match out {
            Ok(o) => {
                let status = if o.end_time < base.horizon {
                    "event-cap"
                } else {
                    "ok"
                };
                row.extend([
                    status.to_string(),
                    o.stations.to_string(),
                    o.events.to_string(),
                    num(o.end_time),
                ]);
                row.extend(report_cells(&performance(&o.time_average, p.capacity)));
                match &o.groups {
                    Some(h) => {
                        let c = chaos_report(
                            h,
                            split_seed(seed, u64::MAX - 1),
                            cfg.simulation.bootstrap,
                        );
                        row.extend([num(c.distance), num(c.ci.0), num(c.ci.1)]);
                        println!(
                            "replication {r}: {}-station independence TV {:.4} (bootstrap 95% [{:.4}, {:.4}])",
                            c.group_size, c.distance, c.ci.0, c.ci.1
                        );
                    }
                    None => row.extend(na(3)),
                }
                row.push(String::new());
                for (t, y) in o.sample_times.iter().zip(&o.samples) {
                    let mut s = vec![r.to_string(), num(*t)];
                    s.extend(report_cells(&performance(y, p.capacity)));
                    traj.push(s);
                }
                averages.push(Some(&o.time_average));
                println!("replication {r}: {} events to t = {}", o.events, o.end_time);
            }
            Err(e) => {
                failures += 1;
                row.push("error".into());
                row.extend(na(3 + PerformanceReport::HEADER.len() + 3));
                row.push(e.to_string());
                averages.push(None);
                eprintln!("replication {r} failed: {e}");
            }
        }
        summary.push(row);
    }
    for k in p.levels().iter() {
        for j in 0..p.phases() {
            let mut row = vec![k.to_string(), (j + 1).to_string()];
            row.extend(
                averages
                    .iter()
                    .map(|a| a.map_or("NA".into(), |y| num(y[(k, j)]))),
            );
            avg.push(row);
        }
    }
    sink.table("summary.csv", &summary)?;
    sink.table("time_average.csv", &avg)?;
    if !traj.rows.is_empty() {
        sink.table("trajectory.csv", &traj)?;
        sink.plot(
            "trajectory.svg",
            &plot::from_table(
                &traj,
                "t",
                "EQ",
                Some("replication"),
                "mean bikes per station",
            )?,
        )?;
    }
    if failures > 0 {
        return Err(CliError::Incomplete(format!(
            "{failures} of {reps} replications failed"
        )));
    }
    Ok(())
}

/// One sweep grid point in Cartesian order, first axis slowest.
fn grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for values in axes {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut q = prefix.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

enum Upsilon {
    Off,
    NotApplicable,
    Value(f64),
    Failed,
}

struct PointOutcome {
    status: &'static str,
    iterations: Option<usize>,
    residual: Option<f64>,
    report: Option<PerformanceReport>,
    upsilon: Upsilon,
    error: String,
}

fn solve_point(
    base: &ModelParams,
    names: &[String],
    values: &[f64],
    cfg: &Config,
    efficiency: bool,
) -> PointOutcome {
    let failed = |status, error: String| PointOutcome {
        status,
        iterations: None,
        residual: None,
        report: None,
        upsilon: if efficiency {
            Upsilon::Failed
        } else {
            Upsilon::Off
        },
        error,
    };
    let mut p = base.clone();
    for (n, &v) in names.iter().zip(values) {
        match set_param(&p, n, v) {
            Ok(q) => p = q,
            Err(e) => return failed("error", e.to_string()),
        }
    }
    if let Err(e) = p.validate() {
        return failed("error", e.to_string());
    }
    let (mode, opts) = match (cfg.assembly_mode(), cfg.fixed_point_options()) {
        (Ok(m), Ok(o)) => (m, o),
        (Err(e), _) | (_, Err(e)) => return failed("error", e.to_string()),
    };
    let fp = match solve_fixed_point(&p, cfg.scale(), mode, &opts) {
        Ok(fp) => fp,
        Err(Error::NotConverged { best }) => {
            let mut o = failed(
                "not-converged",
                format!("best residual {:.3e}", best.residual),
            );
            o.iterations = Some(best.iterations);
            o.residual = Some(best.residual);
            return o;
        }
        Err(e) => return failed("error", e.to_string()),
    };
    let report = performance(&fp.pi, p.capacity);
    let mut status = "ok";
    let mut error = String::new();
    let upsilon = if !efficiency {
        Upsilon::Off
    } else if p.waiting_room == 0 {
        Upsilon::NotApplicable
    } else {
        match solve_fixed_point(&p.with_waiting_room(0), cfg.scale(), mode, &opts) {
            Ok(b) => {
                Upsilon::Value(report.prob_strong / performance(&b.pi, p.capacity).prob_strong)
            }
            Err(e) => {
                status = "baseline-failed";
                error = e.to_string();
                Upsilon::Failed
            }
        }
    };
    PointOutcome {
        status,
        iterations: Some(fp.iterations),
        residual: Some(fp.residual),
        report: Some(report),
        upsilon,
        error,
    }
}

/// Evaluate a sweep and return its table together with the failure count.
pub fn sweep_table(cfg: &Config) -> Result<(Table, usize), CliError> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("`sweep` needs a [sweep] section".into()))?;
    if sw.axis.is_empty() {
        return Err(CliError::Config("sweep needs at least one axis".into()));
    }
    for a in &sw.axis {
        if a.values.is_empty() {
            return Err(CliError::Config(format!(
                "sweep axis `{}` has no values",
                a.param
            )));
        }
    }
    let base = cfg.model()?;
    let names: Vec<String> = sw.axis.iter().map(|a| a.param.clone()).collect();
    for n in &names {
        set_param(&base, n, probe_value(n, &base))?;
    }
    let points = grid(&sw.axis.iter().map(|a| a.values.clone()).collect::<Vec<_>>());
    let outcomes: Vec<PointOutcome> = points
        .par_iter()
        .map(|v| solve_point(&base, &names, v, cfg, sw.efficiency))
        .collect();

    let mut header = names.clone();
    header.extend(
        ["status", "iterations", "residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    header.extend(report_header());
    if sw.efficiency {
        header.push("upsilon".into());
    }
    header.push("error".into());
    let mut t = Table::new(&header);
    let mut failures = 0;
    for (v, o) in points.iter().zip(&outcomes) {
        if o.status != "ok" {
            failures += 1;
        }
        let mut row: Vec<String> = v.iter().map(|&x| num(x)).collect();
        row.push(o.status.into());
        row.push(o.iterations.map_or("NA".into(), |i| i.to_string()));
        row.push(o.residual.map_or("NA".into(), num));
        match &o.report {
            Some(r) => row.extend(report_cells(r)),
            None => row.extend(na(PerformanceReport::HEADER.len())),
        }
        match o.upsilon {
            Upsilon::Off => {}
            Upsilon::NotApplicable | Upsilon::Failed => row.push("NA".into()),
            Upsilon::Value(u) => row.push(num(u)),
        }
        row.push(o.error.clone());
        t.push(row);
    }
    Ok((t, failures))
}

/// A value accepted by `set_param` for `name`, used to reject unknown axis
/// names before any solving starts.
fn probe_value(name: &str, p: &ModelParams) -> f64 {
    match name {
        "capacity" => f64::from(p.capacity),
        "initial_bikes" => f64::from(p.initial_bikes),
        "waiting_room" => f64::from(p.waiting_room),
        _ => 0.5,
    }
}

fn sweep(cfg: &Config) -> Result<(), CliError> {
    let sink = Sink::new(cfg, Command::Sweep)?;
    let (t, failures) = sweep_table(cfg)?;
    sink.table("sweep.csv", &t)?;
    let sw = cfg.sweep.as_ref().expect("checked by sweep_table");
    for spec in &sw.plot {
        let title = spec
            .title
            .clone()
            .unwrap_or_else(|| format!("{} vs {}", spec.y, spec.x));
        let p = plot::from_table(&t, &spec.x, &spec.y, spec.series.as_deref(), &title)?;
        sink.plot(&spec.file, &p)?;
    }
    println!(
        "{} points, {failures} failed or not converged",
        t.rows.len()
    );
    if failures > 0 {
        return Err(CliError::Incomplete(format!(
            "{failures} of {} sweep points failed or did not converge",
            t.rows.len()
        )));
    }
    Ok(())
}

fn other_mode(mode: AssemblyMode) -> AssemblyMode {
    match mode {
        AssemblyMode::Standard => AssemblyMode::PaperLiteral,
        AssemblyMode::PaperLiteral => AssemblyMode::Standard,
    }
}

fn compare(cfg: &Config) -> Result<(), CliError> {
    let p = cfg.model()?;
    let mode = cfg.assembly_mode()?;
    let scale = cfg.scale();
    let opts = cfg.fixed_point_options()?;
    let sink = Sink::new(cfg, Command::Compare)?;
    let sim_cfg = cfg.sim_config()?;
    let start = opts.init.vector(&p)?;

    let (fp, ode, sim, alt) = {
        let ((fp, ode), (sim, alt)) = rayon::join(
            || {
                rayon::join(
                    || solve_fixed_point(&p, scale, mode, &opts),
                    || {
                        steady_state_by_integration(
                            &p,
                            scale,
                            mode,
                            &start,
                            cfg.integrator.steady_tol,
                            cfg.integrator.t_max,
                            &cfg.steady_control(),
                        )
                    },
                )
            },
            || {
                rayon::join(
                    || simulator::run(&p, &sim_cfg),
                    || solve_fixed_point(&p, scale, other_mode(mode), &opts),
                )
            },
        );
        (fp, ode, sim, alt)
    };

    let mut problems = Vec::new();
    let fp = fp
        .map(|f| f.pi)
        .map_err(|e| problems.push(format!("fixed point: {e}")))
        .ok();
    let ode = ode
        .map(|s| s.y)
        .map_err(|e| problems.push(format!("ODE steady state: {e}")))
        .ok();
    let sim = sim
        .map(|o| o.time_average)
        .map_err(|e| problems.push(format!("simulation: {e}")))
        .ok();
    // the other assembly mode is a diagnostic; its failure is reported but
    // does not fail the command
    let alt_label = format!(
        "fixed_point_{}",
        other_mode(mode).as_str().replace('-', "_")
    );
    let alt = match alt {
        Ok(f) => Some(f.pi),
        Err(e) => {
            println!("{} assembly: {e}", other_mode(mode));
            None
        }
    };

    let sources: Vec<(&str, Option<&MeanFieldVector>)> = vec![
        ("fixed_point", fp.as_ref()),
        ("ode", ode.as_ref()),
        ("simulation", sim.as_ref()),
        (alt_label.as_str(), alt.as_ref()),
    ];

    let mut header = vec!["level".to_string(), "phase".to_string()];
    header.extend(sources.iter().map(|(n, _)| n.to_string()));
    let mut side = Table::new(&header);
    for k in p.levels().iter() {
        for j in 0..p.phases() {
            let mut row = vec![k.to_string(), (j + 1).to_string()];
            row.extend(
                sources
                    .iter()
                    .map(|(_, y)| y.map_or("NA".into(), |y| num(y[(k, j)]))),
            );
            side.push(row);
        }
    }
    sink.table("compare.csv", &side)?;

    let mut dist = Table::new(&["a", "b", "sup", "tv_levels"]);
    for i in 0..sources.len() {
        for k in i + 1..sources.len() {
            let (a, ya) = sources[i];
            let (b, yb) = sources[k];
            let (sup, tv) = match (ya, yb) {
                (Some(x), Some(y)) => (
                    num(sup_distance(x.as_slice(), y.as_slice())),
                    num(total_variation(&x.level_marginal(), &y.level_marginal())),
                ),
                _ => ("NA".into(), "NA".into()),
            };
            println!("{a} vs {b}: sup {sup}, level TV {tv}");
            dist.push(vec![a.into(), b.into(), sup, tv]);
        }
    }
    sink.table("distances.csv", &dist)?;

    let mut header = vec!["source".to_string()];
    header.extend(report_header());
    let mut measures = Table::new(&header);
    for (n, y) in &sources {
        let mut row = vec![n.to_string()];
        match y {
            Some(y) => row.extend(report_cells(&performance(y, p.capacity))),
            None => row.extend(na(PerformanceReport::HEADER.len())),
        }
        measures.push(row);
    }
    sink.table("measures.csv", &measures)?;
    sink.plot(
        "compare.svg",
        &level_plot(
            "level distributions",
            sources
                .iter()
                .filter_map(|(n, y)| y.map(|y| (*n, y)))
                .collect(),
        ),
    )?;
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Incomplete(problems.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian_first_axis_slowest() {
        let g = grid(&[vec![1.0, 2.0], vec![10.0, 20.0, 30.0]]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![1.0, 10.0]);
        assert_eq!(g[1], vec![1.0, 20.0]);
        assert_eq!(g[3], vec![2.0, 10.0]);
    }

    #[test]
    fn replication_seeds() {
        assert_eq!(replication_seed(9, 0, 1), 9);
        assert_ne!(replication_seed(9, 0, 2), replication_seed(9, 1, 2));
    }
}
