//! The runs behind each CLI subcommand. Every runner writes its CSV files,
//! an aligned-text summary and a manifest into the output directory and
//! returns the numbers it wrote.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::bp::{gaussian_bp, train_bp};
use super::config::{ClassificationConfig, ExperimentConfig, GaussianConfig, TaskConfig};
use super::field::{field_flow, gradient_field, FieldGrid, FieldSource, FlowOutcome};
use super::flops::{count_flops, FlopMethod, FlopReport};
use super::landscape::{auto_grid, landscape_eval, line_angle_degrees, pca_plane, principal_direction, project, TrajectoryLog};
use super::report::{mean_std, num, write_file, Manifest, Table};
use crate::error::{Result, TdcaError};
use crate::nn::{init_mlp, parse_specs, LayerSpec};
use crate::pgpe::{write_history_csv, EvolveResult};
use crate::tasks::{load_dataset, subsample, Dataset, DatasetId, MixedGaussian, Split};
use crate::tdca::evolve::evolve_tdca_with;
use crate::tdca::inner::RunOptions;
use crate::tdca::{load_tdca, save_tdca, BottomUp, ClassificationProblem, GaussianProblem, TaskSpec, TdcaNetwork, TdcaSettings};

/// Where a run reads data from and writes results to.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub data_dir: PathBuf,
    pub out: PathBuf,
    /// Config file, hashed into the manifest.
    pub config_path: Option<PathBuf>,
    /// Print per-generation progress to stderr.
    pub verbose: bool,
}

impl RunContext {
    fn manifest(&self, command: &str, cfg: &ExperimentConfig) -> Manifest {
        let mut m = Manifest::new(command, cfg.to_toml());
        if let Some(p) = &self.config_path {
            m.input(p);
        }
        m
    }
}

fn classification(cfg: &ExperimentConfig) -> Result<&ClassificationConfig> {
    match &cfg.task {
        TaskConfig::Classification(c) => Ok(c),
        TaskConfig::Gaussian(_) => Err(TdcaError::Config("this command needs a classification task".into())),
    }
}

fn gaussian(cfg: &ExperimentConfig) -> Result<&GaussianConfig> {
    match &cfg.task {
        TaskConfig::Gaussian(g) => Ok(g),
        TaskConfig::Classification(_) => Err(TdcaError::Config("this command needs a gaussian task".into())),
    }
}

/// Training subsample and test set of one dataset.
#[derive(Debug, Clone)]
pub struct DataPair {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_pair(ctx: &RunContext, task: &ClassificationConfig, id: DatasetId, manifest: &mut Manifest) -> Result<DataPair> {
    for split in [Split::Train, Split::Test] {
        for f in id.files(split) {
            manifest.input(&ctx.data_dir.join(f));
        }
    }
    let train = load_dataset(&ctx.data_dir, id, Split::Train)?;
    if task.train_size > train.len() {
        return Err(TdcaError::Config(format!(
            "train_size {} exceeds the {} training examples of {}",
            task.train_size,
            train.len(),
            id.name()
        )));
    }
    let train = if task.train_size == train.len() {
        train
    } else {
        subsample(&train, task.train_size, task.subsample_seed)?
    };
    let test = load_dataset(&ctx.data_dir, id, Split::Test)?;
    let test = match task.test_size {
        Some(n) if n < test.len() => subsample(&test, n, task.subsample_seed)?,
        _ => test,
    };
    Ok(DataPair { train, test })
}

fn problem(task: &ClassificationConfig, data: &DataPair) -> Result<ClassificationProblem> {
    ClassificationProblem::with_hidden(data.train.clone(), &task.hidden_layers()?, task.steps)
}

fn load_checkpoint(path: Option<&PathBuf>, manifest: &mut Manifest) -> Result<TdcaNetwork> {
    let path = path.ok_or_else(|| {
        TdcaError::Missing("no credit-net checkpoint configured (set tdca.checkpoint; `evolve` writes one)".into())
    })?;
    manifest.input(path);
    load_tdca(path)
}

/// Accuracies of one trained bottom-up network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_loss: f64,
}

pub fn tdca_on(tdca: &TdcaNetwork, problem: &ClassificationProblem, test: &Dataset, seeds: &[u64]) -> Result<Vec<SeedResult>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let options = RunOptions {
                materialize: true,
                ..RunOptions::default()
            };
            let out = problem.run(tdca, seed, options)?;
            let mlp = out.mlp.expect("materialized");
            Ok(SeedResult {
                seed,
                train_accuracy: out.trace.final_accuracy,
                test_accuracy: mlp.accuracy(test.inputs(), &test.labels)?,
                train_loss: out.trace.final_loss,
            })
        })
        .collect()
}

pub fn bp_on(specs: &[LayerSpec], data: &DataPair, steps: usize, lr: f64, seeds: &[u64]) -> Result<Vec<SeedResult>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let (mlp, trace) = train_bp(specs, &data.train, seed, steps, lr, false)?;
            Ok(SeedResult {
                seed,
                train_accuracy: trace.final_accuracy,
                test_accuracy: mlp.accuracy(data.test.inputs(), &data.test.labels)?,
                train_loss: trace.final_loss,
            })
        })
        .collect()
}

/// Accuracy of freshly initialized networks.
pub fn untrained_on(specs: &[LayerSpec], data: &DataPair, seeds: &[u64]) -> Result<Vec<SeedResult>> {
    seeds
        .iter()
        .map(|&seed| {
            let mlp = init_mlp(specs, seed)?;
            let out = mlp.evaluate(data.train.inputs())?;
            Ok(SeedResult {
                seed,
                train_accuracy: mlp.accuracy(data.train.inputs(), &data.train.labels)?,
                test_accuracy: mlp.accuracy(data.test.inputs(), &data.test.labels)?,
                train_loss: crate::nn::cross_entropy(out.output(), &data.train.targets())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

pub fn summarize(rows: &[SeedResult]) -> Summary {
    let (train_mean, train_std) = mean_std(&rows.iter().map(|r| r.train_accuracy).collect::<Vec<_>>());
    let (test_mean, test_std) = mean_std(&rows.iter().map(|r| r.test_accuracy).collect::<Vec<_>>());
    Summary {
        train_mean,
        train_std,
        test_mean,
        test_std,
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn pct_pm(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Evolves a credit net on the mean fitness over `datasets`.
pub fn evolve_classification(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    settings: &TdcaSettings,
    datasets: &[DatasetId],
    manifest: &mut Manifest,
) -> Result<(TdcaNetwork, EvolveResult)> {
    let task = classification(cfg)?;
    let mut problems = Vec::with_capacity(datasets.len());
    for &id in datasets {
        let data = load_pair(ctx, task, id, manifest)?;
        problems.push(problem(task, &data)?);
    }
    let bottom = BottomUp::Classifier(problems[0].specs().to_vec());
    let template = TdcaNetwork::new(settings.clone(), bottom, cfg.tdca.init_seed)?;
    let spec = TaskSpec::Classification(problems.iter().collect());
    let verbose = ctx.verbose;
    evolve_tdca_with(&spec, &template, &cfg.pgpe, |_, r| {
        if verbose {
            eprintln!(
                "generation {:>4}  best {:.4}  mean {:.4}  sigma {:.4}",
                r.generation, r.best_fitness, r.mean_fitness, r.sigma_mean
            );
        }
    })
}

fn gaussian_problem(g: &GaussianConfig) -> Result<GaussianProblem> {
    GaussianProblem::new(g.function()?, g.steps, vec![g.trap_start], g.random_starts, g.domain)
}

pub fn evolve_gaussian(cfg: &ExperimentConfig, verbose: bool) -> Result<(TdcaNetwork, EvolveResult)> {
    let g = gaussian(cfg)?;
    let problem = gaussian_problem(g)?;
    let template = TdcaNetwork::new(cfg.tdca.settings()?, BottomUp::Point(2), cfg.tdca.init_seed)?;
    evolve_tdca_with(&TaskSpec::Gaussian(&problem), &template, &cfg.pgpe, |_, r| {
        if verbose {
            eprintln!(
                "generation {:>4}  best {:.4}  mean {:.4}  sigma {:.4}",
                r.generation, r.best_fitness, r.mean_fitness, r.sigma_mean
            );
        }
    })
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub tdca: TdcaNetwork,
    pub result: EvolveResult,
    pub checkpoint: PathBuf,
}

/// `evolve`: writes `credit_net.bin` and `history.csv`.
pub fn run_evolve(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<EvolveOutcome> {
    let mut manifest = ctx.manifest("evolve", cfg);
    let (tdca, result) = match &cfg.task {
        TaskConfig::Classification(c) => {
            evolve_classification(cfg, ctx, &cfg.tdca.settings()?, &[c.dataset], &mut manifest)?
        }
        TaskConfig::Gaussian(_) => evolve_gaussian(cfg, ctx.verbose)?,
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| TdcaError::io(&ctx.out, e))?;
    let checkpoint = ctx.out.join("credit_net.bin");
    save_tdca(&tdca, &checkpoint)?;
    write_history_csv(&ctx.out.join("history.csv"), &result.history)?;
    manifest.output("credit_net.bin");
    manifest.output("history.csv");
    manifest.write(&ctx.out)?;
    Ok(EvolveOutcome {
        tdca,
        result,
        checkpoint,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub bp: Vec<SeedResult>,
    pub tdca: Vec<SeedResult>,
    pub bp_summary: Summary,
    pub tdca_summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCompare {
    pub bp_path: Vec<[f64; 2]>,
    pub tdca_path: Vec<[f64; 2]>,
    pub bp_final: f64,
    pub tdca_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompareOutcome {
    Classification(CompareReport),
    Gaussian(GaussianCompare),
}

/// `compare`: BP over every seed against the configured evolved credit net.
pub fn run_compare(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<CompareOutcome> {
    let mut manifest = ctx.manifest("compare", cfg);
    match &cfg.task {
        TaskConfig::Classification(task) => {
            let tdca = load_checkpoint(cfg.tdca.checkpoint.as_ref(), &mut manifest)?;
            let data = load_pair(ctx, task, task.dataset, &mut manifest)?;
            let problem = problem(task, &data)?;
            let bp = bp_on(problem.specs(), &data, task.steps, cfg.bp.lr, &cfg.seeds)?;
            let td = tdca_on(&tdca, &problem, &data.test, &cfg.seeds)?;
            let report = CompareReport {
                bp_summary: summarize(&bp),
                tdca_summary: summarize(&td),
                bp,
                tdca: td,
            };
            write_compare(&report, &ctx.out)?;
            manifest.output("compare_seeds.csv");
            manifest.output("compare.csv");
            manifest.output("compare.txt");
            manifest.write(&ctx.out)?;
            Ok(CompareOutcome::Classification(report))
        }
        TaskConfig::Gaussian(g) => {
            let tdca = load_checkpoint(cfg.tdca.checkpoint.as_ref(), &mut manifest)?;
            let problem = gaussian_problem(g)?;
            let f = &problem.function;
            let bp_path = gaussian_bp(f, g.trap_start, g.bp_lr, g.steps);
            let tdca_path = problem.trajectory(&tdca, g.trap_start)?;
            let out = GaussianCompare {
                bp_final: f.value(*bp_path.last().expect("path")),
                tdca_final: f.value(*tdca_path.last().expect("path")),
                bp_path,
                tdca_path,
            };
            write_gaussian_compare(&out, f, &ctx.out)?;
            manifest.output("trajectories.csv");
            manifest.output("compare.csv");
            manifest.output("compare.txt");
            manifest.write(&ctx.out)?;
            Ok(CompareOutcome::Gaussian(out))
        }
    }
}

fn seed_table(rows: &[(&str, &[SeedResult])]) -> Table {
    let mut t = Table::new(&["method", "seed", "train_accuracy", "test_accuracy", "train_loss"]);
    for (method, results) in rows {
        for r in *results {
            t.push(vec![
                method.to_string(),
                r.seed.to_string(),
                num(r.train_accuracy),
                num(r.test_accuracy),
                num(r.train_loss),
            ]);
        }
    }
    t
}

fn write_compare(r: &CompareReport, out: &Path) -> Result<()> {
    seed_table(&[("bp", &r.bp), ("tdca", &r.tdca)]).write_csv(&out.join("compare_seeds.csv"))?;
    let mut csv = Table::new(&["method", "train_mean", "train_std", "test_mean", "test_std"]);
    let mut text = Table::new(&["method", "train acc (%)", "test acc (%)"]);
    for (name, s) in [("bp", &r.bp_summary), ("tdca", &r.tdca_summary)] {
        csv.push(vec![name.into(), num(s.train_mean), num(s.train_std), num(s.test_mean), num(s.test_std)]);
        text.push(vec![name.into(), pct_pm(s.train_mean, s.train_std), pct_pm(s.test_mean, s.test_std)]);
    }
    csv.write_csv(&out.join("compare.csv"))?;
    write_file(&out.join("compare.txt"), &text.to_text())
}

fn write_gaussian_compare(r: &GaussianCompare, f: &MixedGaussian, out: &Path) -> Result<()> {
    let mut paths = Table::new(&["method", "step", "x", "y", "f"]);
    for (name, path) in [("bp", &r.bp_path), ("tdca", &r.tdca_path)] {
        for (i, p) in path.iter().enumerate() {
            paths.push(vec![name.into(), i.to_string(), num(p[0]), num(p[1]), num(f.value(*p))]);
        }
    }
    paths.write_csv(&out.join("trajectories.csv"))?;
    let mut csv = Table::new(&["method", "final_x", "final_y", "final_f"]);
    for (name, path, value) in [("bp", &r.bp_path, r.bp_final), ("tdca", &r.tdca_path, r.tdca_final)] {
        let p = path.last().expect("path");
        csv.push(vec![name.into(), num(p[0]), num(p[1]), num(value)]);
    }
    csv.write_csv(&out.join("compare.csv"))?;
    write_file(&out.join("compare.txt"), &csv.to_text())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub row: String,
    pub target: DatasetId,
    pub summary: Summary,
}

/// `transfer`: every credit net (loaded or evolved per row) applied to every
/// target dataset, plus BP and untrained reference rows.
pub fn run_transfer(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<TransferCell>> {
    let task = classification(cfg)?;
    let transfer = cfg
        .transfer
        .as_ref()
        .ok_or_else(|| TdcaError::Config("missing [transfer] section".into()))?;
    let mut manifest = ctx.manifest("transfer", cfg);
    let settings = cfg.tdca.settings()?;
    let mut targets = Vec::with_capacity(transfer.apply_to.len());
    for &id in &transfer.apply_to {
        let data = load_pair(ctx, task, id, &mut manifest)?;
        let problem = problem(task, &data)?;
        targets.push((id, data, problem));
    }
    let mut cells = Vec::new();
    for row in &transfer.rows {
        let tdca = match &row.checkpoint {
            Some(path) => load_checkpoint(Some(path), &mut manifest)?,
            None => {
                let (tdca, result) = evolve_classification(cfg, ctx, &settings, &row.evolve_on, &mut manifest)?;
                let name = format!("credit_net_{}.bin", row.label);
                save_tdca(&tdca, &ctx.out.join(&name))?;
                write_history_csv(&ctx.out.join(format!("history_{}.csv", row.label)), &result.history)?;
                manifest.output(&name);
                tdca
            }
        };
        for (id, data, problem) in &targets {
            let results = tdca_on(&tdca, problem, &data.test, &cfg.seeds)?;
            cells.push(TransferCell {
                row: row.label.clone(),
                target: *id,
                summary: summarize(&results),
            });
        }
    }
    for (id, data, problem) in &targets {
        let bp = bp_on(problem.specs(), data, task.steps, cfg.bp.lr, &cfg.seeds)?;
        cells.push(TransferCell {
            row: "bp".into(),
            target: *id,
            summary: summarize(&bp),
        });
        let init = untrained_on(problem.specs(), data, &cfg.seeds)?;
        cells.push(TransferCell {
            row: "untrained".into(),
            target: *id,
            summary: summarize(&init),
        });
    }
    let mut csv = Table::new(&["row", "target", "train_mean", "train_std", "test_mean", "test_std"]);
    let mut header = vec!["row".to_string()];
    header.extend(transfer.apply_to.iter().map(|d| format!("{} train/test (%)", d.name())));
    let mut text = Table {
        header,
        rows: Vec::new(),
    };
    let mut labels: Vec<&str> = Vec::new();
    for c in &cells {
        csv.push(vec![
            c.row.clone(),
            c.target.name().into(),
            num(c.summary.train_mean),
            num(c.summary.train_std),
            num(c.summary.test_mean),
            num(c.summary.test_std),
        ]);
        if !labels.contains(&c.row.as_str()) {
            labels.push(&c.row);
        }
    }
    for label in labels {
        let mut line = vec![label.to_string()];
        for id in &transfer.apply_to {
            let c = cells.iter().find(|c| c.row == label && c.target == *id).expect("cell");
            line.push(format!("{} / {}", pct(c.summary.train_mean), pct(c.summary.test_mean)));
        }
        text.push(line);
    }
    csv.write_csv(&ctx.out.join("transfer.csv"))?;
    write_file(&ctx.out.join("transfer.txt"), &text.to_text())?;
    manifest.output("transfer.csv");
    manifest.output("transfer.txt");
    manifest.write(&ctx.out)?;
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub granularity: String,
    pub credit_dim: usize,
    pub param_count: usize,
    pub summary: Summary,
}

/// `diffuse`: one evolution per credit setting on the task dataset.
pub fn run_diffusion_sweep(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<SweepRow>> {
    let task = classification(cfg)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| TdcaError::Config("missing [sweep] section".into()))?;
    let mut manifest = ctx.manifest("diffuse", cfg);
    let data = load_pair(ctx, task, task.dataset, &mut manifest)?;
    let problem = problem(task, &data)?;
    let mut rows = Vec::with_capacity(sweep.settings.len());
    for entry in &sweep.settings {
        let settings = cfg.tdca.settings_with(&entry.granularity)?;
        let (tdca, result) = evolve_classification(cfg, ctx, &settings, &[task.dataset], &mut manifest)?;
        let name = format!("credit_net_{}.bin", entry.label);
        save_tdca(&tdca, &ctx.out.join(&name))?;
        write_history_csv(&ctx.out.join(format!("history_{}.csv", entry.label)), &result.history)?;
        manifest.output(&name);
        let results = tdca_on(&tdca, &problem, &data.test, &cfg.seeds)?;
        rows.push(SweepRow {
            label: entry.label.clone(),
            granularity: entry.granularity.clone(),
            credit_dim: tdca.credit_dim(),
            param_count: tdca.param_count(),
            summary: summarize(&results),
        });
    }
    let mut csv = Table::new(&["label", "granularity", "credit_dim", "credit_net_params", "train_mean", "test_mean"]);
    let mut text = Table::new(&["setting", "credits", "train acc (%)", "test acc (%)"]);
    for r in &rows {
        csv.push(vec![
            r.label.clone(),
            r.granularity.clone(),
            r.credit_dim.to_string(),
            r.param_count.to_string(),
            num(r.summary.train_mean),
            num(r.summary.test_mean),
        ]);
        text.push(vec![
            r.label.clone(),
            r.credit_dim.to_string(),
            pct(r.summary.train_mean),
            pct(r.summary.test_mean),
        ]);
    }
    csv.write_csv(&ctx.out.join("sweep.csv"))?;
    write_file(&ctx.out.join("sweep.txt"), &text.to_text())?;
    manifest.output("sweep.csv");
    manifest.output("sweep.txt");
    manifest.write(&ctx.out)?;
    Ok(rows)
}

/// `flops`: analytic costs for BP and every configured credit granularity.
pub fn run_flops(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<FlopReport> {
    let flops = cfg
        .flops
        .as_ref()
        .ok_or_else(|| TdcaError::Config("missing [flops] section".into()))?;
    let mut report = FlopReport {
        batch_size: flops.batch_size,
        rows: Vec::new(),
    };
    for net in &flops.networks {
        let specs = parse_specs(&net.architecture)?;
        report.rows.push(count_flops(&net.name, &specs, &FlopMethod::Bp, flops.batch_size)?);
        let modes = if flops.modes.is_empty() {
            vec![cfg.tdca.mode]
        } else {
            flops.modes.clone()
        };
        for &mode in &modes {
            for g in &net.granularities {
                let settings = TdcaSettings {
                    mode,
                    ..cfg.tdca.settings_with(g)?
                };
                report
                    .rows
                    .push(count_flops(&net.name, &specs, &FlopMethod::Tdca(settings), flops.batch_size)?);
            }
        }
    }
    let mut csv = Table::new(&[
        "network",
        "method",
        "params",
        "forward_mflops",
        "credit_mflops",
        "update_mflops",
        "total_mflops",
    ]);
    for r in &report.rows {
        csv.push(vec![
            r.network.clone(),
            r.method.clone(),
            r.params.to_string(),
            num(r.forward),
            num(r.credit),
            num(r.update),
            num(r.total()),
        ]);
    }
    csv.write_csv(&ctx.out.join("flops.csv"))?;
    write_file(&ctx.out.join("flops.txt"), &csv.to_text())?;
    let mut manifest = ctx.manifest("flops", cfg);
    manifest.output("flops.csv");
    manifest.output("flops.txt");
    manifest.write(&ctx.out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSummary {
    pub explained: Vec<f64>,
    pub angle_degrees: f64,
    pub max_residual: [f64; 2],
}

/// `landscape`: BP and TDCA trajectories from the same initialization, the
/// PCA plane through both and the loss over that plane.
pub fn run_landscape(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<LandscapeSummary> {
    let task = classification(cfg)?;
    let settings = cfg.landscape.clone().unwrap_or_default();
    let mut manifest = ctx.manifest("landscape", cfg);
    let tdca = load_checkpoint(cfg.tdca.checkpoint.as_ref(), &mut manifest)?;
    let data = load_pair(ctx, task, task.dataset, &mut manifest)?;
    let problem = problem(task, &data)?;
    let seed = cfg.seeds[0];
    let (_, bp_trace) = train_bp(problem.specs(), &data.train, seed, task.steps, cfg.bp.lr, true)?;
    let options = RunOptions {
        snapshots: true,
        ..RunOptions::default()
    };
    let td_trace = problem.run(&tdca, seed, options)?.trace;
    let bp = TrajectoryLog::from_trace("bp", &bp_trace)?;
    let td = TrajectoryLog::from_trace("tdca", &td_trace)?;
    let plane = pca_plane(&bp, &td)?;
    let grid = auto_grid(&plane, &[&bp, &td], settings.rows, settings.cols, settings.margin);
    let landscape = landscape_eval(problem.specs(), &data.train, &plane, &grid)?;

    let mut grid_csv = Table::new(&["u", "v", "loss"]);
    for (i, v) in landscape.v_values.iter().enumerate() {
        for (j, u) in landscape.u_values.iter().enumerate() {
            grid_csv.push(vec![num(*u), num(*v), num(landscape.loss[[i, j]])]);
        }
    }
    grid_csv.write_csv(&ctx.out.join("landscape_grid.csv"))?;
    let mut paths = Table::new(&["method", "step", "u", "v", "residual", "accuracy", "loss"]);
    let mut max_residual = [0.0f64; 2];
    for (k, traj) in [&bp, &td].into_iter().enumerate() {
        for (i, s) in traj.snapshots.iter().enumerate() {
            let p = project(&plane, s.values());
            max_residual[k] = max_residual[k].max(p.residual);
            let (acc, loss) = match traj.metrics.get(i) {
                Some(m) => (num(m.accuracy), num(m.loss)),
                None => {
                    let t = if k == 0 { &bp_trace } else { &td_trace };
                    (num(t.final_accuracy), num(t.final_loss))
                }
            };
            paths.push(vec![traj.method.clone(), i.to_string(), num(p.u), num(p.v), num(p.residual), acc, loss]);
        }
    }
    paths.write_csv(&ctx.out.join("landscape_paths.csv"))?;
    let angle = line_angle_degrees(&principal_direction(&bp)?, &principal_direction(&td)?);
    let summary = LandscapeSummary {
        explained: plane.explained.clone(),
        angle_degrees: angle,
        max_residual,
    };
    let mut s = Table::new(&["quantity", "value"]);
    s.push(vec!["explained_variance_pc1".into(), num(summary.explained[0])]);
    s.push(vec!["explained_variance_pc2".into(), num(summary.explained[1])]);
    s.push(vec!["principal_direction_angle_degrees".into(), num(angle)]);
    s.push(vec!["max_residual_bp".into(), num(max_residual[0])]);
    s.push(vec!["max_residual_tdca".into(), num(max_residual[1])]);
    s.write_csv(&ctx.out.join("landscape_summary.csv"))?;
    write_file(&ctx.out.join("landscape_summary.txt"), &s.to_text())?;
    for name in ["landscape_grid.csv", "landscape_paths.csv", "landscape_summary.csv", "landscape_summary.txt"] {
        manifest.output(name);
    }
    manifest.write(&ctx.out)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSelection {
    Bp,
    Tdca,
    Both,
}

impl std::str::FromStr for FieldSelection {
    type Err = TdcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bp" => Ok(FieldSelection::Bp),
            "tdca" => Ok(FieldSelection::Tdca),
            "both" => Ok(FieldSelection::Both),
            other => Err(TdcaError::Config(format!("unknown field method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    pub method: String,
    pub flows: Vec<FlowOutcome>,
}

impl FieldReport {
    /// Grid starts whose flow ended near component `idx`.
    pub fn count_in(&self, idx: usize) -> usize {
        self.flows.iter().filter(|f| f.basin == Some(idx)).count()
    }
}

/// `field`: update vectors over a grid of the domain and where repeated
/// application from every grid point ends up.
pub fn run_field(cfg: &ExperimentConfig, ctx: &RunContext, which: FieldSelection) -> Result<Vec<FieldReport>> {
    let g = gaussian(cfg)?;
    let f = g.function()?;
    let grid = FieldGrid {
        lo: g.domain[0],
        hi: g.domain[1],
        n: g.field_points,
    };
    let mut manifest = ctx.manifest("field", cfg);
    let tdca = match which {
        FieldSelection::Bp => None,
        _ => Some(load_checkpoint(cfg.tdca.checkpoint.as_ref(), &mut manifest)?),
    };
    let mut sources = Vec::new();
    if which != FieldSelection::Tdca {
        sources.push(FieldSource::Bp);
    }
    if let Some(t) = &tdca {
        sources.push(FieldSource::Tdca(t));
    }
    let mut flow_csv = Table::new(&["method", "x0", "y0", "x1", "y1", "basin"]);
    let mut reports = Vec::new();
    for source in sources {
        let samples = gradient_field(source, &f, &grid)?;
        let mut csv = Table::new(&["x", "y", "dx", "dy"]);
        for s in &samples {
            csv.push(vec![num(s.x), num(s.y), num(s.dx), num(s.dy)]);
        }
        let name = format!("field_{}.csv", source.name());
        csv.write_csv(&ctx.out.join(&name))?;
        manifest.output(&name);
        let flows = field_flow(source, &f, &grid)?;
        for o in &flows {
            flow_csv.push(vec![
                source.name().into(),
                num(o.start[0]),
                num(o.start[1]),
                num(o.end[0]),
                num(o.end[1]),
                o.basin.map_or_else(|| "none".to_string(), |b| b.to_string()),
            ]);
        }
        reports.push(FieldReport {
            method: source.name().into(),
            flows,
        });
    }
    flow_csv.write_csv(&ctx.out.join("flow.csv"))?;
    let mut text = Table::new(&["method", "starts", "per-component endpoints", "elsewhere"]);
    for r in &reports {
        let counts: Vec<String> = (0..f.components().len()).map(|i| r.count_in(i).to_string()).collect();
        let none = r.flows.iter().filter(|o| o.basin.is_none()).count();
        text.push(vec![r.method.clone(), r.flows.len().to_string(), counts.join("/"), none.to_string()]);
    }
    write_file(&ctx.out.join("field.txt"), &text.to_text())?;
    manifest.output("flow.csv");
    manifest.output("field.txt");
    manifest.write(&ctx.out)?;
    Ok(reports)
}
