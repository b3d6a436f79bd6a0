//! Declarative run configuration, read from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file, so a config and its data can travel together.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RuleColumns, Schema, SensitiveSpec, TargetRule};
use crate::fairness::{AuditOptions, Thresholds};
use crate::model::{DtGrid, Grid, MlpGrid, ModelFamily, RfGrid, SvmGrid};
use crate::reweight::ReweightOptions;
use crate::smoten::ResamplePlan;
use crate::svm::SmoOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMethod {
    #[default]
    Smoten,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub method: BalanceMethod,
    pub k_neighbors: usize,
    pub k_exponent: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        let plan = ResamplePlan::default();
        Self {
            method: BalanceMethod::Smoten,
            k_neighbors: plan.k_neighbors,
            k_exponent: plan.k_exponent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReweightMode {
    #[default]
    Intersectional,
    None,
}

/// Row filter: keep rows whose `column` label is in `allowed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    pub allowed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub rule: TargetRule,
    #[serde(default, flatten)]
    pub columns: RuleColumns,
}

/// Model family plus the grid for that family. Only the table matching
/// `family` is read; the others may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svm: Option<SvmGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<DtGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf: Option<RfGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpGrid>,
}

impl ModelConfig {
    pub fn grid(&self) -> Grid {
        match self.family {
            ModelFamily::Svm => Grid::Svm(self.svm.clone().unwrap_or_default()),
            ModelFamily::Dt => Grid::Dt(self.dt.clone().unwrap_or_default()),
            ModelFamily::Rf => Grid::Rf(self.rf.clone().unwrap_or_default()),
            ModelFamily::Mlp => Grid::Mlp(self.mlp.clone().unwrap_or_default()),
        }
    }

    /// Installs `grid` as the table for its family and selects that family.
    pub fn set_grid(&mut self, grid: Grid) {
        self.family = grid.family();
        match grid {
            Grid::Svm(g) => self.svm = Some(g),
            Grid::Dt(g) => self.dt = Some(g),
            Grid::Rf(g) => self.rf = Some(g),
            Grid::Mlp(g) => self.mlp = Some(g),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Dt,
            svm: None,
            dt: None,
            rf: None,
            mlp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Label of the favorable class for binary metrics. Defaults to the
    /// second class (`COMPLETE` under the COMPLETED rule).
    pub favorable: Option<String>,
    pub min_cell_rows: u64,
    pub thresholds: Thresholds,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            favorable: None,
            min_cell_rows: AuditOptions::default().min_cell_rows,
            thresholds: Thresholds::default(),
        }
    }
}

impl AuditConfig {
    /// Resolves the favorable label against the class labels.
    pub fn options(&self, class_labels: &[String]) -> Result<AuditOptions, ConfigError> {
        let positive_class = match &self.favorable {
            Some(l) => class_labels
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| invalid(format!("favorable class `{l}` is not one of {class_labels:?}")))?,
            None => 1,
        };
        Ok(AuditOptions {
            thresholds: self.thresholds.clone(),
            positive_class,
            min_cell_rows: self.min_cell_rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV path; relative paths are taken from the config file's directory.
    pub input: PathBuf,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub schema: Schema,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
    pub target: TargetConfig,
    #[serde(default)]
    pub id_columns: Vec<String>,
    #[serde(default)]
    pub sensitive: SensitiveSpec,
    #[serde(default)]
    pub balance: BalanceConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub reweight: ReweightMode,
    #[serde(default)]
    pub reweight_options: ReweightOptions,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub smo: SmoOptions,
    /// Directory of the config file; not part of the file itself.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn input_path(&self) -> PathBuf {
        self.base_dir.join(&self.input)
    }

    /// Output directory from the config, relative to the config file.
    pub fn out_dir(&self) -> Option<PathBuf> {
        self.out.as_ref().map(|o| self.base_dir.join(o))
    }

    pub fn resample_plan(&self) -> ResamplePlan {
        ResamplePlan {
            k_neighbors: self.balance.k_neighbors,
            k_exponent: self.balance.k_exponent,
            seed: self.seed,
        }
    }

    /// Checks every referenced column against the schema and the numeric
    /// settings against their ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let cols: BTreeSet<&str> = self.schema.columns.iter().map(String::as_str).collect();
        if cols.len() != self.schema.columns.len() {
            return Err(invalid("schema lists a column twice"));
        }
        let need = |c: &str, what: &str| {
            if cols.contains(c) {
                Ok(())
            } else {
                Err(invalid(format!("{what} column `{c}` is not in the schema")))
            }
        };
        for f in &self.filters {
            need(&f.column, "filter")?;
        }
        match self.target.rule {
            TargetRule::Completed => need(&self.target.columns.reason, "target")?,
            TargetRule::Noprior => need(&self.target.columns.noprior, "target")?,
            TargetRule::Concat => {
                need(&self.target.columns.reason, "target")?;
                need(&self.target.columns.noprior, "target")?;
            }
        }
        let mut seen = BTreeSet::new();
        for a in &self.sensitive.attributes {
            need(&a.name, "sensitive")?;
            if !seen.insert(a.name.as_str()) {
                return Err(invalid(format!("sensitive attribute `{}` listed twice", a.name)));
            }
            if a.privileged > 1 {
                return Err(invalid(format!("`{}`: privileged must be 0 or 1", a.name)));
            }
            if a.buckets.values().chain(a.otherwise.iter()).any(|&b| b > 1) {
                return Err(invalid(format!("`{}`: buckets must be 0 or 1", a.name)));
            }
        }
        if let Some(l) = &self.sensitive.legitimate {
            need(&l.column, "legitimate")?;
        }
        if self.balance.k_neighbors == 0 {
            return Err(invalid("balance.k_neighbors must be positive"));
        }
        if !(self.balance.k_exponent.is_finite() && self.balance.k_exponent > 0.0) {
            return Err(invalid("balance.k_exponent must be positive"));
        }
        let r = &self.reweight_options;
        if !(r.alpha > 0.0 && r.alpha < 1.0) {
            return Err(invalid("reweight_options.alpha must lie in (0, 1)"));
        }
        if !(r.min_expected >= 0.0) {
            return Err(invalid("reweight_options.min_expected must be non-negative"));
        }
        let th = &self.audit.thresholds;
        if th.grid.is_empty() || th.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("audit.thresholds.grid must be non-empty and strictly ascending"));
        }
        if !(self.smo.tol > 0.0) {
            return Err(invalid("smo.tol must be positive"));
        }
        self.validate_grid()
    }

    fn validate_grid(&self) -> Result<(), ConfigError> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(invalid(format!("grid list `{name}` is empty")))
            } else {
                Ok(())
            }
        };
        match self.model.grid() {
            Grid::Svm(g) => {
                empty("kernels", g.kernels.len())?;
                empty("c", g.c.len())?;
                empty("gamma", g.gamma.len())?;
                empty("degree", g.degree.len())?;
                empty("coef", g.coef.len())?;
                if g.c.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
                    return Err(invalid("every C must be positive"));
                }
            }
            Grid::Dt(g) => {
                empty("max_depth", g.max_depth.len())?;
                empty("min_samples_split", g.min_samples_split.len())?;
                empty("min_samples_leaf", g.min_samples_leaf.len())?;
            }
            Grid::Rf(g) => {
                empty("n_estimators", g.n_estimators.len())?;
                empty("max_features", g.max_features.len())?;
                empty("max_depth", g.max_depth.len())?;
                empty("min_samples_split", g.min_samples_split.len())?;
                empty("min_samples_leaf", g.min_samples_leaf.len())?;
            }
            Grid::Mlp(g) => {
                empty("units1", g.units1.len())?;
                empty("units2", g.units2.len())?;
                empty("activation", g.activation.len())?;
                empty("optimizer", g.optimizer.len())?;
                empty("loss", g.loss.len())?;
            }
        }
        Ok(())
    }
}
