//! Per-epoch reports and the aggregate CSV.

use maxcon::metrics::EpochMetrics;
use maxcon::{GridIndex, LocalizationResult, Objective, Pose2, SearchSpec};
use serde::{Deserialize, Serialize};

/// Argmax of one search, relative to the grid center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub index: GridIndex,
    /// `(i, j)` minus the center index.
    pub offset_cells: [i64; 2],
    /// `offset_cells` times the cell size.
    pub offset_m: [f64; 2],
    pub heading_offset_deg: f64,
    pub value: f64,
    /// Chebyshev cell distance from the cell containing the true pose, when known.
    pub truth_distance_cells: Option<usize>,
}

impl BestCell {
    pub fn new(result: &LocalizationResult, spec: &SearchSpec, truth: Option<&Pose2>) -> Self {
        let center = spec.center_index() as i64;
        let index = result.best_index;
        let offset_cells = [index.i as i64 - center, index.j as i64 - center];
        let truth_distance_cells = truth.and_then(|t| {
            let init = &result.initial_pose;
            let (ti, tj) = spec.cell_of(t.tx - init.tx, t.ty - init.ty)?;
            Some(index.cell_distance(&GridIndex::new(ti, tj, index.h)))
        });
        Self {
            index,
            offset_cells,
            offset_m: offset_cells.map(|c| c as f64 * spec.cell_size),
            heading_offset_deg: result.best_pose.theta.to_degrees(),
            value: result.best_value,
            truth_distance_cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub objective: Objective,
    pub best: Option<BestCell>,
    pub metrics: Option<EpochMetrics>,
    /// Why `metrics` is missing although the search succeeded.
    pub metrics_undefined: Option<String>,
    pub error: Option<String>,
    pub elapsed_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcpSummary {
    pub failed_runs: usize,
    pub total_runs: usize,
    pub epoch_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub initial_pose: Option<Pose2>,
    pub truth: Option<Pose2>,
    pub scan_points: usize,
    pub map_points: usize,
    pub objectives: Vec<ObjectiveReport>,
    pub icp: Option<IcpSummary>,
    pub icp_error: Option<String>,
    /// Scene generation or file loading failed.
    pub error: Option<String>,
    pub elapsed_secs: Option<f64>,
}

impl EpochReport {
    pub fn failed(epoch: u64, message: String) -> Self {
        Self {
            epoch,
            initial_pose: None,
            truth: None,
            scan_points: 0,
            map_points: 0,
            objectives: Vec::new(),
            icp: None,
            icp_error: None,
            error: Some(message),
            elapsed_secs: None,
        }
    }

    /// True if loading, any search, or the ICP study failed.
    pub fn errored(&self) -> bool {
        self.error.is_some() || self.icp_error.is_some() || self.objectives.iter().any(|o| o.error.is_some())
    }
}

/// Column names of the aggregate CSV, one row per epoch and objective.
///
/// `status` is `ok` or `error`; `message` holds the error text. Metric
/// cells read `NA` when the metric is undefined for that grid and `ERR`
/// when the row errored. `icp_failed_runs` is empty without an ICP study.
pub const CSV_HEADER: [&str; 17] = [
    "epoch",
    "objective",
    "status",
    "message",
    "best_i",
    "best_j",
    "best_h",
    "offset_x_m",
    "offset_y_m",
    "heading_offset_deg",
    "best_value",
    "truth_distance_cells",
    "peak_ratio",
    "kurtosis",
    "kl_divergence",
    "plateau_distance",
    "icp_failed_runs",
];

const NA: &str = "NA";
const ERR: &str = "ERR";

fn num(v: f64) -> String {
    v.to_string()
}

fn csv_rows(report: &EpochReport, objectives: &[Objective]) -> Vec<Vec<String>> {
    let icp = match (&report.icp, &report.icp_error) {
        (Some(s), _) => s.failed_runs.to_string(),
        (None, Some(_)) => ERR.to_string(),
        (None, None) => String::new(),
    };
    objectives
        .iter()
        .map(|&objective| {
            let mut row = vec![report.epoch.to_string(), objective.name().to_string()];
            let found = report.objectives.iter().find(|o| o.objective == objective);
            let error = report
                .error
                .clone()
                .or_else(|| found.and_then(|o| o.error.clone()))
                .or_else(|| found.is_none().then(|| "objective not run".to_string()));
            match (error, found) {
                (None, Some(o)) => {
                    row.extend(["ok".to_string(), String::new()]);
                    let b = o.best.as_ref().expect("successful search has a best cell");
                    row.extend([
                        b.index.i.to_string(),
                        b.index.j.to_string(),
                        b.index.h.to_string(),
                        num(b.offset_m[0]),
                        num(b.offset_m[1]),
                        num(b.heading_offset_deg),
                        num(b.value),
                        b.truth_distance_cells.map_or(NA.to_string(), |d| d.to_string()),
                    ]);
                    match &o.metrics {
                        Some(m) => row.extend([
                            num(m.peak_ratio),
                            m.kurtosis.map_or(NA.to_string(), num),
                            num(m.kl_divergence),
                            m.plateau_distance.to_string(),
                        ]),
                        None => row.extend([NA; 4].map(String::from)),
                    }
                }
                (error, _) => {
                    row.extend(["error".to_string(), error.unwrap_or_default()]);
                    row.extend([ERR; 12].map(String::from));
                }
            }
            row.push(icp.clone());
            row
        })
        .collect()
}

/// Aggregate CSV bytes for reports sorted by epoch.
pub fn aggregate_csv(reports: &[EpochReport], objectives: &[Objective]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for r in reports {
        for row in csv_rows(r, objectives) {
            w.write_record(&row).expect("writing to memory");
        }
    }
    w.into_inner().expect("writing to memory")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EpochReport {
        EpochReport {
            epoch: 3,
            initial_pose: Some(Pose2::new(0.1, -0.2, 1.0)),
            truth: Some(Pose2::new(0.1, -0.2, 1.0)),
            scan_points: 10,
            map_points: 20,
            objectives: vec![
                ObjectiveReport {
                    objective: Objective::Count,
                    best: Some(BestCell {
                        index: GridIndex::new(50, 51, 4),
                        offset_cells: [0, 1],
                        offset_m: [0.0, 0.06],
                        heading_offset_deg: 0.0,
                        value: 12.0,
                        truth_distance_cells: Some(1),
                    }),
                    metrics: Some(EpochMetrics {
                        peak_ratio: 0.1 + 0.2,
                        kurtosis: None,
                        kl_divergence: 1.0 / 3.0,
                        plateau_distance: 2,
                        ray_direction: [0.6, 0.8],
                    }),
                    metrics_undefined: None,
                    error: None,
                    elapsed_secs: None,
                },
                ObjectiveReport {
                    objective: Objective::Helmert,
                    best: None,
                    metrics: None,
                    metrics_undefined: None,
                    error: Some("no consensus anywhere in the search space".into()),
                    elapsed_secs: None,
                },
            ],
            icp: Some(IcpSummary {
                failed_runs: 4,
                total_runs: 25,
                epoch_failed: true,
            }),
            icp_error: None,
            error: None,
            elapsed_secs: None,
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = sample();
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back: EpochReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(r.errored());
    }

    #[test]
    fn csv_has_header_and_markers() {
        let text = String::from_utf8(aggregate_csv(&[sample()], &[Objective::Count, Objective::Helmert])).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert!(lines[1].starts_with("3,count,ok,,50,51,4,0,0.06,0,12,1,"), "{}", lines[1]);
        assert!(lines[1].contains(",NA,"));
        assert!(lines[2].starts_with("3,helmert,error,no consensus"), "{}", lines[2]);
        assert!(lines[2].ends_with("ERR,ERR,4"));
        for line in &lines {
            assert_eq!(line.split(',').count(), CSV_HEADER.len());
        }
    }

    #[test]
    fn failed_epoch_marks_every_objective() {
        let r = EpochReport::failed(7, "sensor position lies inside scene geometry".into());
        let text = String::from_utf8(aggregate_csv(&[r], &[Objective::Count])).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("7,count,error,sensor position"));
        assert_eq!(row.matches("ERR").count(), 12);
    }
}
