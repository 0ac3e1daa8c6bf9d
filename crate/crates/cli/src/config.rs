use std::path::{Path, PathBuf};

use bodymesh::nn::CnnConfig;
use bodymesh::train::{AdamCfg, ShrinkageCfg, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gnn,
    Cnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gnn => "gnn",
            ModelKind::Cnn => "cnn",
        }
    }
}

/// The single JSON document driving every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub cohort_size: usize,
    pub spacing_mm: f64,
    #[serde(default = "default_close_radius")]
    pub close_radius: usize,
    /// Face budgets, ascending.
    pub levels: Vec<usize>,
    pub model: ModelKind,
    /// Face budget the GNN is trained on.
    pub train_level: usize,
    #[serde(default = "default_hidden")]
    pub gnn_hidden: usize,
    #[serde(default)]
    pub cnn: CnnSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub icp: IcpSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub stats: StatsSettings,
    /// Device power for energy estimates, watts.
    #[serde(default)]
    pub device_watts: Option<f64>,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Output root; relative paths resolve against the config file's directory.
    pub root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnSettings {
    pub input: [usize; 2],
    pub channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub hidden: [usize; 2],
}

impl Default for CnnSettings {
    fn default() -> Self {
        let c = CnnConfig::default();
        CnnSettings {
            input: c.input,
            channels: c.channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
            hidden: c.hidden,
        }
    }
}

impl CnnSettings {
    pub fn model(&self) -> CnnConfig {
        CnnConfig {
            input: self.input,
            in_channels: 2,
            channels: self.channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            hidden: self.hidden,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub gnn_epochs: usize,
    pub cnn_epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub adam: AdamCfg,
    pub shrinkage: ShrinkageCfg,
    pub max_folds: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            gnn_epochs: 150,
            cnn_epochs: 20,
            batch_size: 16,
            k: 5,
            adam: AdamCfg::default(),
            shrinkage: ShrinkageCfg::default(),
            max_folds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IcpSettings {
    fn default() -> Self {
        IcpSettings { max_iters: 50, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    /// Levels to sweep; all configured levels when absent.
    pub levels: Option<Vec<usize>>,
    /// Only the first `subjects` subjects take part.
    pub subjects: Option<usize>,
    pub epochs: Option<usize>,
    pub max_folds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSettings {
    pub bins: usize,
}

impl Default for StatsSettings {
    fn default() -> Self {
        StatsSettings { bins: 20 }
    }
}

fn default_close_radius() -> usize {
    2
}

fn default_hidden() -> usize {
    64
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl PipelineConfig {
    /// Parse and validate; relative `paths.root` is resolved against the
    /// directory of `path`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if cfg.paths.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.root = base.join(&cfg.paths.root);
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Parse and validate a JSON document. Errors carry the line and column
    /// or the offending field.
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if self.cohort_size == 0 {
            return Err(bad("cohort_size", "must be at least 1"));
        }
        if !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return Err(bad("spacing_mm", "must be positive"));
        }
        if self.levels.is_empty() {
            return Err(bad("levels", "at least one level is required"));
        }
        if !self.levels.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("levels", "must be sorted ascending without duplicates"));
        }
        if self.levels[0] < bodymesh::surface::MIN_TARGET_FACES {
            return Err(bad("levels", format!("face budgets must be at least {}", bodymesh::surface::MIN_TARGET_FACES)));
        }
        if !self.levels.contains(&self.train_level) {
            return Err(bad("train_level", format!("{} is not one of levels", self.train_level)));
        }
        if self.gnn_hidden < 2 {
            return Err(bad("gnn_hidden", "must be at least 2"));
        }
        bodymesh::nn::CnnModel::new(self.cnn.model()).map_err(|e| bad("cnn", e))?;
        self.train_config(ModelKind::Gnn).validate().map_err(|e| bad("train", e))?;
        self.train_config(ModelKind::Cnn).validate().map_err(|e| bad("train", e))?;
        if self.train.k < 3 {
            return Err(bad("train.k", "must be at least 3"));
        }
        if self.cohort_size < 2 * self.train.k {
            return Err(bad("cohort_size", format!("{} subjects are too few for {} folds", self.cohort_size, self.train.k)));
        }
        if !(self.icp.tol >= 0.0) || self.icp.max_iters == 0 {
            return Err(bad("icp", "max_iters must be ≥ 1 and tol ≥ 0"));
        }
        if let Some(levels) = &self.sweep.levels {
            if let Some(l) = levels.iter().find(|l| !self.levels.contains(l)) {
                return Err(bad("sweep.levels", format!("{l} is not one of levels")));
            }
        }
        if let Some(n) = self.sweep.subjects {
            if n < 2 * self.train.k || n > self.cohort_size {
                return Err(bad("sweep.subjects", format!("must lie in {}..={}", 2 * self.train.k, self.cohort_size)));
            }
        }
        if self.stats.bins == 0 {
            return Err(bad("stats.bins", "must be at least 1"));
        }
        if let Some(w) = self.device_watts {
            if !(w > 0.0) {
                return Err(bad("device_watts", "must be positive"));
            }
        }
        Ok(())
    }

    fn check_paths(&self) -> CliResult<()> {
        let root = &self.paths.root;
        let parent = root.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(bad("paths.root", format!("parent directory {} does not exist", parent.display())));
        }
        if root.exists() && !root.is_dir() {
            return Err(bad("paths.root", format!("{} is not a directory", root.display())));
        }
        Ok(())
    }

    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: match kind {
                ModelKind::Gnn => t.gnn_epochs,
                ModelKind::Cnn => t.cnn_epochs,
            },
            batch_size: t.batch_size,
            k: t.k,
            seed: self.seed,
            adam: t.adam,
            shrinkage: t.shrinkage,
            max_folds: t.max_folds,
        }
    }

    pub fn sweep_levels(&self) -> Vec<usize> {
        self.sweep.levels.clone().unwrap_or_else(|| self.levels.clone())
    }

    pub fn sweep_train_config(&self) -> TrainConfig {
        let base = self.train_config(ModelKind::Gnn);
        TrainConfig {
            epochs: self.sweep.epochs.unwrap_or(base.epochs),
            max_folds: self.sweep.max_folds.or(base.max_folds),
            ..base
        }
    }

    /// A small configuration suitable as a template.
    pub fn example(root: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 7,
            cohort_size: 20,
            spacing_mm: 6.0,
            close_radius: default_close_radius(),
            levels: vec![100, 500],
            model: ModelKind::Gnn,
            train_level: 500,
            gnn_hidden: 16,
            cnn: CnnSettings::default(),
            train: TrainSettings {
                gnn_epochs: 3,
                cnn_epochs: 2,
                batch_size: 4,
                ..TrainSettings::default()
            },
            icp: IcpSettings::default(),
            sweep: SweepSettings::default(),
            stats: StatsSettings::default(),
            device_watts: Some(65.0),
            paths: Paths { root: root.into() },
        }
    }
}
