//! Batch configuration read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use maxcon::icp::IcpParams;
use maxcon::synth::{SceneSpec, SensorSpec};
use maxcon::{Objective, Pose2, SearchSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },

    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Synthetic,
    FromFiles,
}

/// One epoch read from disk. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEpoch {
    pub scan: PathBuf,
    pub map: PathBuf,
    /// `[tx, ty, theta]`, theta in radians.
    pub initial_pose: [f64; 3],
    #[serde(default)]
    pub truth: Option<[f64; 3]>,
}

impl FileEpoch {
    pub fn initial(&self) -> Pose2 {
        let [x, y, t] = self.initial_pose;
        Pose2::new(x, y, t)
    }

    pub fn truth_pose(&self) -> Option<Pose2> {
        self.truth.map(|[x, y, t]| Pose2::new(x, y, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Number of synthetic epochs; in file mode it must match `inputs` if given.
    pub epochs: Option<u64>,
    /// Master seed; replaces `scene.seed`.
    pub seed: u64,
    pub objectives: Vec<Objective>,
    pub icp_study: bool,
    pub output_dir: PathBuf,
    /// Write a PGM of the best heading layer per objective.
    pub heatmaps: bool,
    /// Write every heading layer as CSV.
    pub grid_csv: bool,
    /// Record wall times in the epoch reports (makes output non-reproducible).
    pub timings: bool,
    pub search: SearchSpec,
    pub scene: SceneSpec,
    pub sensor: SensorSpec,
    pub icp: IcpParams,
    pub inputs: Vec<FileEpoch>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            epochs: None,
            seed: 0,
            objectives: vec![Objective::Count, Objective::Helmert],
            icp_study: false,
            output_dir: PathBuf::from("maxcon-out"),
            heatmaps: false,
            grid_csv: false,
            timings: false,
            search: SearchSpec::default(),
            scene: SceneSpec::default(),
            sensor: SensorSpec::default(),
            icp: IcpParams::default(),
            inputs: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for input in &mut config.inputs {
            input.scan = base.join(&input.scan);
            input.map = base.join(&input.map);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn epoch_count(&self) -> u64 {
        match self.mode {
            Mode::Synthetic => self.epochs.unwrap_or(1),
            Mode::FromFiles => self.inputs.len() as u64,
        }
    }

    /// Scene spec with the master seed applied.
    pub fn seeded_scene(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            ..self.scene.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.objectives.is_empty() {
            return Err(invalid("objectives", "select at least one of \"count\", \"helmert\""));
        }
        let mut seen = self.objectives.clone();
        seen.sort_by_key(|o| o.name());
        seen.dedup();
        if seen.len() != self.objectives.len() {
            return Err(invalid("objectives", "each objective may appear once"));
        }
        if self.epochs == Some(0) {
            return Err(invalid("epochs", "must be at least 1"));
        }
        self.search.validate().map_err(|e| invalid("search", e.to_string()))?;
        self.icp_params_valid()?;
        match self.mode {
            Mode::Synthetic => {
                if !self.inputs.is_empty() {
                    return Err(invalid("inputs", "only used with mode = \"from-files\""));
                }
                self.scene.validate().map_err(|e| invalid("scene", e.to_string()))?;
                self.sensor.validate().map_err(|e| invalid("sensor", e.to_string()))?;
            }
            Mode::FromFiles => {
                if self.inputs.is_empty() {
                    return Err(invalid("inputs", "file mode needs at least one [[inputs]] entry"));
                }
                if let Some(n) = self.epochs {
                    if n != self.inputs.len() as u64 {
                        return Err(invalid(
                            "epochs",
                            format!("is {n} but {} inputs are listed", self.inputs.len()),
                        ));
                    }
                }
                let finite = self
                    .inputs
                    .iter()
                    .all(|i| i.initial_pose.iter().chain(i.truth.iter().flatten()).all(|v| v.is_finite()));
                if !finite {
                    return Err(invalid("inputs", "poses must be finite"));
                }
            }
        }
        Ok(())
    }

    fn icp_params_valid(&self) -> Result<(), ConfigError> {
        let p = &self.icp;
        if !(p.max_correspondence_distance > 0.0) {
            return Err(invalid("icp", "max_correspondence_distance must be positive"));
        }
        if !(p.scan_voxel >= 0.0) {
            return Err(invalid("icp", "scan_voxel must not be negative"));
        }
        if p.max_iterations == 0 {
            return Err(invalid("icp", "max_iterations must be at least 1"));
        }
        Ok(())
    }
}
