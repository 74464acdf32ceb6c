//! Experiment dispatch: runs one config and writes its outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use ndarray::Array1;
use rayon::prelude::*;
use svb_core::control::{
    project_solution, solve_control, ControlOptions, ControlProblem, ControlSolution, ProjectedControl,
};
use svb_core::mixture::{
    run_channel_mixture, run_em, run_enm, ChannelMixtureOptions, MixtureRun, StopRule, TruthModel,
};
use svb_core::rate::{mmi_iterate, r_theta_iterate, rg_curve, MmiOptions, RgPoint};
use svb_core::{Distribution, Grid, InfoReport, SemanticChannel};

use crate::config::{
    mixture_state, observed_mixture, AlgorithmConfig, ControlConfig, EmVsEnmConfig, Experiment, ExperimentConfig,
    MixtureConfig, RgConfig, Variant,
};
use crate::output::{json_matrix, json_numbers, sha256_hex, Cell, Manifest, RunDir, Table};
use crate::plot::render_plots;
use crate::{deterministic_env, ExitKind};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads for independent cells; forced to 1 by `SVB_DETERMINISTIC=1`.
    pub jobs: usize,
    pub plots: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.manifest.converged
    }
}

/// Runs a validated config, writes every output file and the manifest last.
pub fn run_experiment(cfg: &ExperimentConfig, config_bytes: &[u8], opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate().context(ExitKind::Config)?;
    let deterministic = deterministic_env();
    let jobs = if deterministic { 1 } else { opts.jobs.max(1) };
    let started = now();
    let mut dir = RunDir::create(&opts.out)?;
    let converged = match &cfg.experiment {
        Experiment::Mixture(m) => run_mixture(m, cfg.seed, &mut dir)?,
        Experiment::EmVsEnm(m) => run_em_vs_enm(m, cfg.seed, jobs, &mut dir)?,
        Experiment::RgCompress(r) => run_rg(r, &mut dir)?,
        Experiment::Control(c) => run_control(c, jobs, &mut dir)?,
    };
    if opts.plots {
        let names: Vec<String> = dir.files().keys().cloned().collect();
        for (name, svg) in render_plots(dir.root(), &names)? {
            dir.write(&name, &svg)?;
        }
    }
    let config = serde_json::to_value(cfg)?;
    let manifest = Manifest {
        tool: "svb".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.experiment.kind().into(),
        name: cfg.name(),
        config_sha256: sha256_hex(config_bytes),
        instance_sha256: instance_hash(&config),
        started,
        finished: now(),
        deterministic,
        jobs,
        converged,
        files: dir.files().clone(),
        config,
    };
    manifest.write(dir.root())?;
    Ok(RunOutcome { dir: dir.root().to_path_buf(), manifest })
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Hash of the problem definition: grid, data source and constraints, not solver settings.
fn instance_hash(config: &serde_json::Value) -> String {
    const KEYS: [&str; 8] = ["kind", "grid", "true", "px", "semantics", "objectives", "vary", "sampling"];
    let mut inst = serde_json::Map::new();
    for k in KEYS {
        if let Some(v) = config.get(k) {
            inst.insert(k.into(), v.clone());
        }
    }
    if config.get("sampling").is_some_and(|s| !s.is_null()) {
        inst.insert("seed".into(), config["seed"].clone());
    }
    sha256_hex(serde_json::Value::Object(inst).to_string().as_bytes())
}

fn px_table(grid: &Grid<f64>, px: &Distribution<f64>) -> Table {
    let mut t = Table::new(["x", "P_x"]);
    for (x, p) in grid.values().iter().zip(px.probs().iter()) {
        t.push(vec![(*x).into(), (*p).into()]);
    }
    t
}

fn component_header(k: usize) -> Vec<String> {
    (1..=k).flat_map(|j| [format!("mu_{j}"), format!("sigma_{j}"), format!("w_{j}")]).collect()
}

fn info_cells(r: &InfoReport<f64>) -> Vec<Cell> {
    [r.g, r.r, r.r_dprime, r.q, r.f, r.kl_x, r.kl_y].into_iter().map(Cell::from).collect()
}

fn mixture_trace(run: &MixtureRun<f64>) -> Table {
    let k = run.state.n_components();
    let mut header: Vec<String> = InfoReport::<f64>::CSV_HEADER.split(',').map(str::to_string).collect();
    header.extend(["estep_residual".to_string(), "inner_steps".to_string()]);
    header.extend(component_header(k));
    let mut t = Table::new(header);
    for row in &run.trace {
        let mut cells = vec![Cell::from(row.step)];
        cells.extend(info_cells(&row.report));
        cells.push(row.first_estep_residual.into());
        cells.push(row.inner_steps.into());
        for c in &row.components {
            cells.extend([c.mu.into(), c.sigma.into(), c.weight.into()]);
        }
        t.push(cells);
    }
    t
}

fn summary_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["variant", "n", "iterations", "converged", "sigma_clamped", "kl_x"].into_iter().map(String::from).collect();
    h.extend(component_header(k));
    h
}

fn summary_row(variant: Variant, n: usize, run: &MixtureRun<f64>, converged: bool) -> Vec<Cell> {
    let mut cells = vec![
        variant.as_str().into(),
        n.into(),
        run.iterations.into(),
        converged.into(),
        run.sigma_clamped.into(),
        run.final_kl_x.into(),
    ];
    for c in run.state.components() {
        cells.extend([c.mu.into(), c.sigma.into(), c.weight.into()]);
    }
    cells
}

/// Runs EM or EnM; a fixed iteration budget counts as converged.
fn mixture_run(
    px: &Distribution<f64>,
    init: &svb_core::MixtureState64,
    variant: Variant,
    a: &AlgorithmConfig,
) -> Result<(MixtureRun<f64>, bool)> {
    let stop = match a.iterations {
        Some(k) => StopRule::fixed(k),
        None => StopRule { kl_bits: a.stop_kl_bits, max_outer: a.max_outer },
    };
    let run = match variant {
        Variant::Em => run_em(px, init, &stop)?,
        _ => run_enm(px, init, a.n, &stop)?,
    };
    let converged = a.iterations.is_some() || run.converged;
    Ok((run, converged))
}

fn run_mixture(m: &MixtureConfig, seed: u64, dir: &mut RunDir) -> Result<bool> {
    let grid = m.grid.build()?;
    let px = observed_mixture(&grid, &m.truth, m.sampling, seed)?;
    dir.write_table("px.csv", &px_table(&grid, &px))?;
    let init = mixture_state(&grid, &m.init)?;
    let a = &m.algorithm;
    if a.variant == Variant::Channel {
        return run_channel(&grid, &px, m, dir);
    }
    let (run, converged) = mixture_run(&px, &init, a.variant, a)?;
    dir.write_table("trace.csv", &mixture_trace(&run))?;
    let mut summary = Table::new(summary_header(init.n_components()));
    summary.push(summary_row(a.variant, a.n, &run, converged));
    dir.write_table("summary.csv", &summary)?;
    Ok(converged)
}

fn run_channel(grid: &Grid<f64>, px: &Distribution<f64>, m: &MixtureConfig, dir: &mut RunDir) -> Result<bool> {
    let a = &m.algorithm;
    let params: Vec<(f64, f64)> = m.init.iter().map(|c| (c.mu, c.sigma)).collect();
    let py0 = Distribution::from_weights(m.init.iter().map(|c| c.weight).collect())?;
    let opts =
        ChannelMixtureOptions { s: a.s, max_iter: a.iterations.unwrap_or(a.max_outer).max(1), ..Default::default() };
    let run = run_channel_mixture(px, grid, &TruthModel::Gaussian(params), &py0, &opts)?;
    let mut trace = Table::new(["step", "G", "R"]);
    for (k, (g, r)) in run.trace.iter().enumerate() {
        trace.push(vec![k.into(), (*g).into(), (*r).into()]);
    }
    dir.write_table("trace.csv", &trace)?;
    let converged = a.iterations.is_some() || run.converged;
    let mut summary = Table::new(summary_header(m.init.len()));
    let mut cells = vec![
        Variant::Channel.as_str().into(),
        1usize.into(),
        run.iterations.into(),
        converged.into(),
        false.into(),
        run.kl_x.into(),
    ];
    for (&(mu, sigma), &w) in run.truth_params.iter().flatten().zip(run.py.probs().iter()) {
        cells.extend([mu.into(), sigma.into(), w.into()]);
    }
    summary.push(cells);
    dir.write_table("summary.csv", &summary)?;
    let mut pred = px_table(grid, &run.predictive);
    pred.header[1] = "P_theta_x".into();
    dir.write_table("predictive.csv", &pred)?;
    Ok(converged)
}

fn run_em_vs_enm(m: &EmVsEnmConfig, seed: u64, jobs: usize, dir: &mut RunDir) -> Result<bool> {
    let grid = m.grid.build()?;
    let px = observed_mixture(&grid, &m.truth, m.sampling, seed)?;
    dir.write_table("px.csv", &px_table(&grid, &px))?;
    let init = mixture_state(&grid, &m.init)?;
    let algo = |variant, n| AlgorithmConfig {
        variant,
        n,
        stop_kl_bits: m.stop_kl_bits,
        max_outer: m.max_outer,
        iterations: None,
        s: 1.0,
    };
    let (a_em, a_enm) = (algo(Variant::Em, 1), algo(Variant::Enm, m.n));
    let (em, enm) = if jobs > 1 {
        rayon::join(|| mixture_run(&px, &init, Variant::Em, &a_em), || mixture_run(&px, &init, Variant::Enm, &a_enm))
    } else {
        (mixture_run(&px, &init, Variant::Em, &a_em), mixture_run(&px, &init, Variant::Enm, &a_enm))
    };
    let ((em, em_ok), (enm, enm_ok)) = (em?, enm?);
    dir.write_table("trace_em.csv", &mixture_trace(&em))?;
    dir.write_table("trace_enm.csv", &mixture_trace(&enm))?;
    let mut summary = Table::new(summary_header(init.n_components()));
    summary.push(summary_row(Variant::Em, 1, &em, em_ok));
    summary.push(summary_row(Variant::Enm, m.n, &enm, enm_ok));
    dir.write_table("summary.csv", &summary)?;
    Ok(em_ok && enm_ok)
}

fn label_table(grid: &Grid<f64>, labels: &[String], value: impl Fn(usize, usize) -> f64) -> Table {
    let mut t = Table::new(std::iter::once("x".to_string()).chain(labels.iter().cloned()));
    for (i, x) in grid.values().iter().enumerate() {
        let mut row = vec![Cell::from(*x)];
        row.extend((0..labels.len()).map(|j| Cell::from(value(i, j))));
        t.push(row);
    }
    t
}

fn run_rg(r: &RgConfig, dir: &mut RunDir) -> Result<bool> {
    let grid = r.grid.build()?;
    let px = r.px.build(&grid)?;
    let sem: SemanticChannel<f64> = r.semantics.build(&grid, &px)?;
    let labels = sem.labels().to_vec();
    let opts = MmiOptions::default().with_eps(r.eps).with_max_iter(r.max_iter);
    let py0 = Distribution::uniform(sem.n_labels());
    dir.write_table("px.csv", &px_table(&grid, &px))?;
    dir.write_table("truth.csv", &label_table(&grid, &labels, |i, j| sem.truth()[[j, i]]))?;

    let point = mmi_iterate(&px, &sem, r.s, &py0, &opts)?;
    let mut trace = Table::new(["sweep", "G", "R", "objective"]);
    for (k, rec) in point.trace.iter().enumerate() {
        trace.push(vec![(k + 1).into(), rec.g.into(), rec.r.into(), rec.objective.into()]);
    }
    dir.write_table("trace.csv", &trace)?;
    dir.write_table("channel.csv", &label_table(&grid, &labels, |i, j| point.channel.matrix()[[i, j]]))?;

    let mut header: Vec<String> = ["criterion", "s", "G", "R", "R_shannon", "efficiency", "iterations", "converged"]
        .into_iter()
        .map(String::from)
        .collect();
    header.extend(labels.iter().map(|l| format!("P_{l}")));
    let mut summary = Table::new(header);
    let row = |p: &RgPoint<f64>| {
        let mut cells = vec![
            p.criterion.as_str().into(),
            p.s.into(),
            p.g.into(),
            p.r.into(),
            p.r_shannon.into(),
            p.efficiency().into(),
            p.iterations.into(),
            p.converged.into(),
        ];
        cells.extend(p.py.probs().iter().map(|&v| Cell::from(v)));
        cells
    };
    summary.push(row(&point));
    let mut converged = point.converged;
    if r.compare_theta {
        let theta = r_theta_iterate(&px, &sem, r.s, &py0, &opts)?;
        converged &= theta.converged;
        summary.push(row(&theta));
    }
    dir.write_table("summary.csv", &summary)?;

    if let Some(s_grid) = &r.s_grid {
        let curve = rg_curve(&px, &sem, s_grid, &opts)?;
        let mut t = Table::new(["s", "G", "R", "R_shannon", "iterations", "converged"]);
        for p in &curve.points {
            t.push(vec![
                p.s.into(),
                p.g.into(),
                p.r.into(),
                p.r_shannon.into(),
                p.iterations.into(),
                p.converged.into(),
            ]);
        }
        dir.write_table("curve.csv", &t)?;
        converged &= curve.all_converged();
    }
    Ok(converged)
}

struct CellResult {
    s: f64,
    value: Option<f64>,
    labels: Vec<String>,
    sol: ControlSolution<f64>,
    projected: Option<ProjectedControl<f64>>,
}

fn solve_cell(
    grid: &Grid<f64>,
    px: &Distribution<f64>,
    c: &ControlConfig,
    cell: &crate::config::ControlCell,
) -> Result<CellResult> {
    let rows: Vec<Array1<f64>> =
        cell.objectives.iter().map(|o| o.spec.truth_row(grid, px)).collect::<svb_core::Result<_>>()?;
    let labels: Vec<String> = cell.objectives.iter().map(|o| o.name.clone()).collect();
    let sem = SemanticChannel::from_rows(&rows)?.with_labels(labels.clone())?;
    let problem = ControlProblem::new(px.clone(), sem, cell.s)?;
    let pa0 = match &c.initial_pa {
        Some(p) => Distribution::from_vec(p.clone())?,
        None => Distribution::uniform(labels.len()),
    };
    let sol = solve_control(&problem, &pa0, &ControlOptions { eps: c.eps, max_iter: c.max_iter })?;
    // Degenerate (zero-variance) outcomes have no Gaussian stand-in.
    let projected = project_solution(grid, &problem, &sol).ok();
    Ok(CellResult { s: cell.s, value: cell.value, labels, sol, projected })
}

fn cell_json(r: &CellResult, vary: Option<&str>) -> String {
    let sol = &r.sol;
    let labels: Vec<String> = r.labels.iter().map(|l| format!("\"{l}\"")).collect();
    let mut fields = vec![format!("  \"s\": {}", svb_core::scalar::fmt17(r.s))];
    if let (Some(name), Some(v)) = (vary, r.value) {
        fields.push(format!("  \"{name}\": {}", svb_core::scalar::fmt17(v)));
    }
    fields.extend([
        format!("  \"labels\": [{}]", labels.join(",")),
        format!("  \"P_a\": {}", json_numbers(sol.pa.probs().iter().copied())),
        format!("  \"G_bits\": {}", svb_core::scalar::fmt17(sol.g)),
        format!("  \"R_bits\": {}", svb_core::scalar::fmt17(sol.r)),
        format!("  \"efficiency\": {}", svb_core::scalar::fmt17(sol.efficiency())),
        format!("  \"iterations\": {}", sol.iterations),
        format!("  \"converged\": {}", sol.converged),
        format!("  \"outcomes\": {}", json_matrix(sol.outcomes.matrix().outer_iter())),
        format!("  \"induced_outcomes\": {}", json_matrix(sol.induced_outcomes.matrix().outer_iter())),
    ]);
    if let Some(p) = &r.projected {
        fields.push(format!(
            "  \"projection\": {{\"mu\": {}, \"sigma\": {}, \"divergence_bits\": {}, \"G_bits\": {}, \"R_bits\": {}, \"g_shift\": {}, \"efficiency_shift\": {}}}",
            json_numbers(p.projections.iter().map(|q| q.mu)),
            json_numbers(p.projections.iter().map(|q| q.sigma)),
            json_numbers(p.projections.iter().map(|q| q.divergence)),
            svb_core::scalar::fmt17(p.g),
            svb_core::scalar::fmt17(p.r),
            svb_core::scalar::fmt17(p.g_shift),
            svb_core::scalar::fmt17(p.efficiency_shift),
        ));
    }
    format!("{{\n{}\n}}\n", fields.join(",\n"))
}

fn run_control(c: &ControlConfig, jobs: usize, dir: &mut RunDir) -> Result<bool> {
    let grid = c.grid.build()?;
    let px = c.px.build(&grid)?;
    dir.write_table("px.csv", &px_table(&grid, &px))?;
    let cells = c.cells()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let results: Vec<CellResult> =
        pool.install(|| cells.par_iter().map(|cell| solve_cell(&grid, &px, c, cell)).collect::<Result<_>>())?;
    let vary = c.vary_label();
    let mut header = vec!["s".to_string()];
    header.extend(vary.clone());
    header.extend((0..c.objectives.len()).map(|j| format!("P_a{j}")));
    header.extend(["G_bits", "R_bits", "efficiency", "iterations", "converged"].map(String::from));
    let mut table = Table::new(header);
    let mut converged = true;
    for (k, r) in results.iter().enumerate() {
        let mut row = vec![Cell::from(r.s)];
        if vary.is_some() {
            row.push(r.value.unwrap_or(f64::NAN).into());
        }
        row.extend(r.sol.pa.probs().iter().map(|&p| Cell::from(p)));
        row.extend([
            r.sol.g.into(),
            r.sol.r.into(),
            r.sol.efficiency().into(),
            r.sol.iterations.into(),
            r.sol.converged.into(),
        ]);
        table.push(row);
        converged &= r.sol.converged;
        dir.write(&format!("cells/cell_{k:03}.json"), &cell_json(r, vary.as_deref()))?;
    }
    dir.write_table("table.csv", &table)?;
    Ok(converged)
}

/// Output directory: the `--out` flag, else the config's `out` field.
pub fn resolve_out(flag: Option<&Path>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| anyhow::anyhow!("no output directory: pass --out or set \"out\" in the config"))
        .context(ExitKind::Config)
}
