use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{compute_metrics, MetricRecord, METRICS_HEADER};
use crate::env::{
    bezier_pilot, samples_to_matrix, sense, track_and_sample, Extent, EnvironmentGrid, RobotState, Sample,
};
use crate::error::{Error, Result};
use crate::gp::{GprModel, NormStats};
use crate::kernels::KernelRegistry;
use crate::linalg::DenseMatrix;
use crate::planning::StrategyRegistry;
use crate::rng::SeededRng;

/// Final-epoch maps on the evaluation grid, row-major with rows along y.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMaps {
    pub extent: Extent,
    pub resolution: usize,
    pub prediction: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub error: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    pub samples: Vec<Sample>,
    pub maps: GridMaps,
    pub model: GprModel,
}

struct Evaluator {
    points: DenseMatrix,
    truth: Vec<f64>,
    extent: Extent,
    resolution: usize,
}

impl Evaluator {
    fn new(grid: &EnvironmentGrid, resolution: usize) -> Result<Self> {
        let extent = grid.extent();
        let points = extent.grid_points(resolution);
        let truth = grid.elevations_at(&points)?;
        Ok(Evaluator {
            points,
            truth,
            extent,
            resolution,
        })
    }

    fn record(&self, model: &GprModel, seed: u64, epoch: usize, train_y: &[f64]) -> Result<MetricRecord> {
        let pred = model.predict(&self.points)?;
        let metrics = compute_metrics(&pred.mean_raw, &pred.var_raw, &self.truth, train_y)?;
        Ok(MetricRecord {
            seed,
            epoch,
            n_samples: train_y.len(),
            metrics,
        })
    }

    fn maps(&self, model: &GprModel) -> Result<GridMaps> {
        let pred = model.predict(&self.points)?;
        Ok(GridMaps {
            extent: self.extent,
            resolution: self.resolution,
            uncertainty: pred.var_raw.iter().map(|v| v.sqrt()).collect(),
            error: pred
                .mean_raw
                .iter()
                .zip(&self.truth)
                .map(|(m, t)| (m - t).abs())
                .collect(),
            prediction: pred.mean_raw,
        })
    }
}

fn build_model(cfg: &ExperimentConfig, stats: NormStats, rng: &SeededRng) -> Result<GprModel> {
    let kernel = KernelRegistry::default().build(&cfg.kernel, 2, &mut rng.substream("kernel", 0))?;
    let e = &cfg.experiment;
    Ok(GprModel::new(kernel, e.noise, stats).with_learning_rates(e.lr_hyper, e.lr_net))
}

/// One active-mapping run: pilot survey, burn-in training, then repeated
/// propose → drive and sense → update → train until `n_max` samples.
pub fn run_mapping(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = cfg.env.load()?;
    let extent = grid.extent();
    let strategy = StrategyRegistry::default().build(&cfg.strategy)?;
    let e = &cfg.experiment;
    let root = SeededRng::new(seed);
    let mut sensor = root.substream("sensor", 0);
    let eval = Evaluator::new(&grid, e.resolution)?;

    let waypoints = bezier_pilot(&extent, e.pilot, &cfg.env.pilot_template)?;
    let mut samples = waypoints
        .iter()
        .map(|&p| sense(&grid, p, 0, &mut sensor))
        .collect::<Result<Vec<_>>>()?;
    let (x, y) = samples_to_matrix(&samples);
    let mut model = build_model(cfg, NormStats::from_extent(&extent, &y)?, &root)?;
    model.add_data(&x, &y)?;
    model.optimize(e.burn_in)?;

    let mut train_y = y;
    let mut records = vec![eval.record(&model, seed, 0, &train_y)?];
    let last = *waypoints.last().expect("pilot has points");
    let mut robot = RobotState::at_rest(last, 0.0);
    let mut epoch = 0;
    while train_y.len() < e.n_max {
        epoch += 1;
        let mut cand_rng = root.substream("candidates", epoch as u64);
        let goal = strategy.propose(&model, robot.position, &extent, &mut cand_rng)?;
        let mut new = if strategy.travels() {
            let (state, new) = match track_and_sample(&robot, goal, &grid, epoch, &mut sensor) {
                Ok(r) => r,
                Err(Error::StepCapExceeded { steps, partial }) => {
                    warn!("seed {seed} epoch {epoch}: gave up on waypoint after {steps} steps");
                    (robot, partial)
                }
                Err(err) => return Err(err),
            };
            robot = state;
            new
        } else {
            robot = RobotState::at_rest(goal, robot.heading);
            vec![sense(&grid, goal, epoch, &mut sensor)?]
        };
        if new.is_empty() {
            new.push(sense(&grid, robot.position, epoch, &mut sensor)?);
        }
        let (x, y) = samples_to_matrix(&new);
        model.add_data(&x, &y)?;
        model.optimize(new.len())?;
        train_y.extend_from_slice(&y);
        samples.extend(new);
        records.push(eval.record(&model, seed, epoch, &train_y)?);
    }
    info!(
        "{} / {} / {} seed {seed}: {} samples in {epoch} epochs",
        cfg.env.kind,
        cfg.kernel.name,
        cfg.strategy.name,
        train_y.len()
    );
    Ok(RunOutput {
        seed,
        records,
        samples,
        maps: eval.maps(&model)?,
        model,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverfitRecord {
    pub iter: usize,
    pub train_msll: f64,
    pub test_msll: f64,
}

pub const OVERFIT_HEADER: &str = "iter,train_msll,test_msll";

/// Trains on uniformly scattered noisy samples and traces train/test MSLL.
pub fn run_overfit(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<OverfitRecord>> {
    cfg.validate()?;
    let grid = cfg.env.load()?;
    let extent = grid.extent();
    let o = &cfg.overfit;
    let root = SeededRng::new(seed);
    let mut place = root.substream("overfit", 0);
    let mut sensor = root.substream("sensor", 0);
    let samples = (0..o.n_train)
        .map(|_| sense(&grid, extent.sample_uniform(&mut place), 0, &mut sensor))
        .collect::<Result<Vec<_>>>()?;
    let (x, y) = samples_to_matrix(&samples);
    let mut model = build_model(cfg, NormStats::from_extent(&extent, &y)?, &root)?;
    model.add_data(&x, &y)?;
    let test = Evaluator::new(&grid, o.resolution)?;

    let record = |model: &GprModel, iter: usize| -> Result<OverfitRecord> {
        // Training targets carry sensor noise, so score them under ν + σ².
        let train = model.predict(&x)?;
        let train_m = compute_metrics(&train.mean_raw, &train.observed_var_raw(), &y, &y)?;
        let test_m = test.record(model, seed, iter, &y)?;
        Ok(OverfitRecord {
            iter,
            train_msll: train_m.msll,
            test_msll: test_m.metrics.msll,
        })
    };
    let mut out = vec![record(&model, 0)?];
    let mut done = 0;
    while done < o.iters {
        let chunk = o.record_every.min(o.iters - done);
        model.optimize(chunk)?;
        done += chunk;
        out.push(record(&model, done)?);
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in records {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

pub fn samples_csv(seed: u64, samples: &[Sample]) -> String {
    let mut s = String::from("seed,epoch,x,y,value\n");
    for p in samples {
        let _ = writeln!(s, "{seed},{},{},{},{}", p.epoch, p.location[0], p.location[1], p.value);
    }
    s
}

pub fn grid_csv(quantity: &str, maps: &GridMaps, values: &[f64]) -> String {
    let e = maps.extent;
    let n = maps.resolution;
    let mut s = format!(
        "# {quantity} rows={n} cols={n} x_min={} x_max={} y_min={} y_max={}\n",
        e.x_min, e.x_max, e.y_min, e.y_max
    );
    for row in values.chunks(n) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn overfit_csv(records: &[OverfitRecord]) -> String {
    let mut s = format!("{OVERFIT_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.iter, r.train_msll, r.test_msll);
    }
    s
}

/// Writes a run's CSVs and its resolved config into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    let mut resolved = cfg.clone();
    resolved.experiment.seed = out.seed;
    resolved.experiment.seeds = 1;
    write_file(&dir.join("config.toml"), &resolved.to_toml())?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(&out.records))?;
    write_file(&dir.join("samples.csv"), &samples_csv(out.seed, &out.samples))?;
    let m = &out.maps;
    write_file(&dir.join("prediction.csv"), &grid_csv("prediction", m, &m.prediction))?;
    write_file(&dir.join("uncertainty.csv"), &grid_csv("uncertainty", m, &m.uncertainty))?;
    write_file(&dir.join("error.csv"), &grid_csv("error", m, &m.error))?;
    Ok(())
}

pub fn write_overfit(dir: &Path, records: &[OverfitRecord]) -> Result<()> {
    write_file(&dir.join("overfit.csv"), &overfit_csv(records))
}

/// A labelled configuration to run under one seed.
#[derive(Clone, Debug)]
pub struct RunJob {
    pub label: String,
    pub config: ExperimentConfig,
    pub seed: u64,
}

impl RunJob {
    pub fn dir_name(&self) -> PathBuf {
        PathBuf::from(&self.label).join(format!("seed-{}", self.seed))
    }
}

/// Runs jobs in parallel. With an output directory, each job writes into
/// `<out>/<label>/seed-<seed>/` and an `index.csv` lists all runs.
pub fn run_jobs(jobs: &[RunJob], out_dir: Option<&Path>) -> Result<Vec<RunOutput>> {
    let outputs = jobs
        .par_iter()
        .map(|job| {
            let out = run_mapping(&job.config, job.seed).map_err(|e| {
                warn!("run {} seed {} failed: {e}", job.label, job.seed);
                e
            })?;
            if let Some(dir) = out_dir {
                write_run(&dir.join(job.dir_name()), &job.config, &out)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out_dir {
        let mut rows: Vec<String> = jobs
            .iter()
            .map(|j| format!("{},{},{}", j.label, j.seed, j.dir_name().join("metrics.csv").display()))
            .collect();
        rows.sort();
        write_file(&dir.join("index.csv"), &format!("label,seed,metrics\n{}\n", rows.join("\n")))?;
    }
    Ok(outputs)
}
