//! Epoch loading and the batch pipeline behind the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use maxcon::icp::{grid_convergence_study, ConvergenceStudy, IcpMap};
use maxcon::io::{export_grid_csv, export_heatmap, load_cloud, save_cloud, write_atomic, CloudFile};
use maxcon::metrics::epoch_metrics;
use maxcon::synth::synthesize_epoch;
use maxcon::{maximum_consensus, MapCloud, Objective, Pose2, ScanCloud};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{FileEpoch, Mode, RunConfig};
use crate::report::{aggregate_csv, BestCell, EpochReport, IcpSummary, ObjectiveReport};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: maxcon::Error },

    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),

    #[error("{0}")]
    Unsupported(String),
}

fn write_err(path: &Path) -> impl FnOnce(maxcon::Error) -> BatchError + '_ {
    move |source| BatchError::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything one epoch needs: clouds, the search center, and the truth if known.
pub struct EpochInput {
    pub scan: ScanCloud,
    pub map: MapCloud,
    pub initial: Pose2,
    pub truth: Option<Pose2>,
}

pub fn load_epoch(config: &RunConfig, epoch: u64) -> maxcon::Result<EpochInput> {
    match config.mode {
        Mode::Synthetic => {
            let ep = synthesize_epoch(&config.seeded_scene(), &config.sensor, epoch)?;
            Ok(EpochInput {
                scan: ep.scan,
                map: ep.map,
                initial: ep.truth,
                truth: Some(ep.truth),
            })
        }
        Mode::FromFiles => {
            let input: &FileEpoch = &config.inputs[epoch as usize];
            Ok(EpochInput {
                scan: load_cloud(&input.scan)?.into_scan()?,
                map: load_cloud(&input.map)?.into_map()?,
                initial: input.initial(),
                truth: input.truth_pose(),
            })
        }
    }
}

fn epoch_stem(epoch: u64) -> String {
    format!("epoch-{epoch:04}")
}

fn run_objective(
    config: &RunConfig,
    input: &EpochInput,
    objective: Objective,
    epoch: u64,
    grid_dir: Option<&Path>,
) -> Result<ObjectiveReport, BatchError> {
    let start = Instant::now();
    let mut report = ObjectiveReport {
        objective,
        best: None,
        metrics: None,
        metrics_undefined: None,
        error: None,
        elapsed_secs: None,
    };
    match maximum_consensus(&input.scan, &input.map, &input.initial, &config.search, objective) {
        Ok(result) => {
            report.best = Some(BestCell::new(&result, &config.search, input.truth.as_ref()));
            let grids = result.score_grids();
            match epoch_metrics(&grids) {
                Ok(m) => report.metrics = Some(m),
                Err(e) => report.metrics_undefined = Some(e.to_string()),
            }
            let stem = format!("{}-{}", epoch_stem(epoch), objective.name());
            let Some(out_dir) = grid_dir else {
                return Ok(report);
            };
            if config.heatmaps {
                let path = out_dir.join(format!("{stem}.pgm"));
                export_heatmap(&grids[result.best_index.h], &path).map_err(write_err(&path))?;
            }
            if config.grid_csv {
                for (h, grid) in grids.iter().enumerate() {
                    let path = out_dir.join(format!("{stem}-h{h}.csv"));
                    export_grid_csv(grid, &path).map_err(write_err(&path))?;
                }
            }
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    if config.timings {
        report.elapsed_secs = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

/// Runs one epoch without writing its report. Heatmaps and grid CSVs go to
/// `grid_dir` when given.
pub fn evaluate_epoch(config: &RunConfig, epoch: u64, grid_dir: Option<&Path>) -> Result<EpochReport, BatchError> {
    let start = Instant::now();
    let mut report = match load_epoch(config, epoch) {
        Err(e) => EpochReport::failed(epoch, e.to_string()),
        Ok(input) => {
            let objectives = config
                .objectives
                .iter()
                .map(|&o| run_objective(config, &input, o, epoch, grid_dir))
                .collect::<Result<Vec<_>, _>>()?;
            let (icp, icp_error) = if config.icp_study {
                match run_study(config, &input) {
                    Ok(study) => (Some(summarize(&study)), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            } else {
                (None, None)
            };
            EpochReport {
                epoch,
                initial_pose: Some(input.initial),
                truth: input.truth,
                scan_points: input.scan.len(),
                map_points: input.map.len(),
                objectives,
                icp,
                icp_error,
                error: None,
                elapsed_secs: None,
            }
        }
    };
    if config.timings {
        report.elapsed_secs = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

fn run_study(config: &RunConfig, input: &EpochInput) -> maxcon::Result<ConvergenceStudy> {
    let truth = input.truth.ok_or_else(|| {
        maxcon::Error::InvalidSpec("the ICP study needs the true pose of every epoch".into())
    })?;
    let index = IcpMap::new(&input.map)?;
    grid_convergence_study(&input.scan, &index, &truth, &config.icp)
}

/// Runs one epoch and writes its JSON report plus any requested grids.
pub fn process_epoch(config: &RunConfig, epoch: u64, out_dir: &Path) -> Result<EpochReport, BatchError> {
    let report = evaluate_epoch(config, epoch, Some(out_dir))?;
    let path = out_dir.join(format!("{}.json", epoch_stem(epoch)));
    write_json(&path, &report)?;
    Ok(report)
}

fn summarize(study: &ConvergenceStudy) -> IcpSummary {
    IcpSummary {
        failed_runs: study.failed_runs(),
        total_runs: study.runs.len(),
        epoch_failed: study.epoch_failed,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BatchError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(write_err(path))
}

fn prepare_out_dir(out_dir: &Path) -> Result<(), BatchError> {
    fs::create_dir_all(out_dir).map_err(|e| BatchError::Write {
        path: out_dir.to_path_buf(),
        source: e.into(),
    })
}

/// Runs `f` for every epoch on a pool of `workers` threads (0 = one per core),
/// returning results in epoch order.
fn for_each_epoch<T: Send>(
    config: &RunConfig,
    workers: usize,
    f: impl Fn(u64) -> Result<T, BatchError> + Sync,
) -> Result<Vec<T>, BatchError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| (0..config.epoch_count()).into_par_iter().map(&f).collect())
}

pub struct BatchOutcome {
    pub reports: Vec<EpochReport>,
    pub csv_path: PathBuf,
}

impl BatchOutcome {
    pub fn any_errored(&self) -> bool {
        self.reports.iter().any(EpochReport::errored)
    }
}

pub const AGGREGATE_CSV: &str = "aggregate.csv";

/// Processes every epoch and writes per-epoch JSON plus `aggregate.csv`.
pub fn run_batch(config: &RunConfig, out_dir: &Path, workers: usize) -> Result<BatchOutcome, BatchError> {
    prepare_out_dir(out_dir)?;
    let reports = for_each_epoch(config, workers, |e| process_epoch(config, e, out_dir))?;
    let csv_path = out_dir.join(AGGREGATE_CSV);
    write_atomic(&csv_path, &aggregate_csv(&reports, &config.objectives)).map_err(write_err(&csv_path))?;
    Ok(BatchOutcome { reports, csv_path })
}

#[derive(Debug, Serialize)]
struct GeneratedInputs {
    mode: Mode,
    inputs: Vec<FileEpoch>,
}

/// Writes each synthetic epoch's scan and map as XYZ files plus an
/// `inputs.toml` that replays them in file mode. Returns the epochs that
/// could not be generated, with reasons.
pub fn generate(config: &RunConfig, out_dir: &Path, workers: usize) -> Result<Vec<(u64, String)>, BatchError> {
    if config.mode != Mode::Synthetic {
        return Err(BatchError::Unsupported("gen needs mode = \"synthetic\"".into()));
    }
    prepare_out_dir(out_dir)?;
    let outcomes = for_each_epoch(config, workers, |e| {
        let input = match load_epoch(config, e) {
            Ok(input) => input,
            Err(err) => return Ok(Err((e, err.to_string()))),
        };
        let stem = epoch_stem(e);
        let (scan_name, map_name) = (format!("{stem}-scan.xyz"), format!("{stem}-map.xyz"));
        for (name, cloud) in [
            (&scan_name, CloudFile::from(&input.scan)),
            (&map_name, CloudFile::from(&input.map)),
        ] {
            let path = out_dir.join(name);
            save_cloud(&path, &cloud).map_err(write_err(&path))?;
        }
        let pose = |p: Pose2| [p.tx, p.ty, p.theta];
        Ok(Ok(FileEpoch {
            scan: scan_name.into(),
            map: map_name.into(),
            initial_pose: pose(input.initial),
            truth: input.truth.map(pose),
        }))
    })?;
    let mut inputs = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(f) => inputs.push(f),
            Err(f) => failed.push(f),
        }
    }
    let text = toml::to_string(&GeneratedInputs {
        mode: Mode::FromFiles,
        inputs,
    })
    .expect("inputs serialize");
    let path = out_dir.join("inputs.toml");
    write_atomic(&path, text.as_bytes()).map_err(write_err(&path))?;
    Ok(failed)
}

/// Result of the ICP study for one epoch, as written to disk.
#[derive(Debug, Serialize)]
pub struct StudyReport {
    pub epoch: u64,
    pub study: Option<ConvergenceStudy>,
    pub error: Option<String>,
}

/// Runs only the ICP convergence study for every epoch.
pub fn icp_batch(config: &RunConfig, out_dir: &Path, workers: usize) -> Result<Vec<StudyReport>, BatchError> {
    prepare_out_dir(out_dir)?;
    let reports = for_each_epoch(config, workers, |e| {
        let outcome = load_epoch(config, e).and_then(|input| run_study(config, &input));
        let report = match outcome {
            Ok(study) => StudyReport {
                epoch: e,
                study: Some(study),
                error: None,
            },
            Err(err) => StudyReport {
                epoch: e,
                study: None,
                error: Some(err.to_string()),
            },
        };
        let path = out_dir.join(format!("icp-{}.json", epoch_stem(e)));
        write_json(&path, &report)?;
        Ok(report)
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "status", "failed_runs", "epoch_failed"]).expect("writing to memory");
    for r in &reports {
        let row = match &r.study {
            Some(s) => [r.epoch.to_string(), "ok".into(), s.failed_runs().to_string(), s.epoch_failed.to_string()],
            None => [r.epoch.to_string(), "error".into(), "ERR".into(), "ERR".into()],
        };
        w.write_record(&row).expect("writing to memory");
    }
    let path = out_dir.join("icp-study.csv");
    write_atomic(&path, &w.into_inner().expect("writing to memory")).map_err(write_err(&path))?;
    Ok(reports)
}
