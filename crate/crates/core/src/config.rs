//! Run configuration: a single TOML file holding every knob the study
//! depends on, so sensitivity checks never need a rebuild.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carbon::PowerModel;
use crate::dataset::{load_csv, DomainSpec};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::presets::{self, GreySeDims};
use crate::sweep::{Mode, NmseRegion, SweepData};
use crate::training::{
    Constraint, InitRule, InitScale, ModelTemplate, ParamSpec, TrainConfig,
};

/// Where training data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceKind {
    #[default]
    Toy,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub source: DataSourceKind,
    /// Required when `source = "csv"`.
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    /// Reference period for the grey presets. Defaults to the synthetic
    /// surface's period on the toy pathway; required for grey presets on
    /// external data.
    #[serde(default)]
    pub period: Option<f64>,
}

/// Constraint applied to the periods of a custom preset's kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodPolicy {
    /// Optimised freely (positive).
    Free,
    /// Fixed at the value serialized in the kernel spec.
    Fixed,
    /// Bounded within the given percentage of the serialized value.
    BoundedPct(f64),
}

impl Default for PeriodPolicy {
    fn default() -> Self {
        PeriodPolicy::Free
    }
}

/// A user-defined model: a kernel spec plus a period policy. Lengthscales,
/// variance, mean and noise follow the standard constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomPreset {
    pub name: String,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub period_policy: PeriodPolicy,
}

fn default_threshold() -> f64 {
    10.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_presets() -> Vec<String> {
    presets::PRESET_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Everything a run needs. CLI flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub nmse_threshold: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub nmse_region: NmseRegion,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub power: Option<PowerModel>,
    #[serde(default = "default_presets")]
    pub presets: Vec<String>,
    #[serde(default)]
    pub custom_presets: Vec<CustomPreset>,
    #[serde(default)]
    pub grey_se_dims: GreySeDims,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            nmse_threshold: default_threshold(),
            mode: Mode::default(),
            nmse_region: NmseRegion::default(),
            output_dir: default_output_dir(),
            domain: DomainSpec::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            power: None,
            presets: default_presets(),
            custom_presets: Vec::new(),
            grey_se_dims: GreySeDims::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.train.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.train.validate()?;
        if !(self.nmse_threshold.is_finite() && self.nmse_threshold > 0.0) {
            return Err(Error::Config("nmse_threshold must be positive".to_string()));
        }
        if let Some(p) = &self.power {
            p.validate()?;
        }
        if self.presets.is_empty() {
            return Err(Error::Config("at least one preset is required".to_string()));
        }
        if self.data.source == DataSourceKind::Csv && self.data.csv_path.is_none() {
            return Err(Error::Config(
                "data.csv_path is required when data.source = \"csv\"".to_string(),
            ));
        }
        if let Some(p) = self.data.period {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config("data.period must be positive".to_string()));
            }
        }
        // every referenced preset must resolve
        self.resolve_presets()?;
        Ok(())
    }

    /// Apply a command-line seed override (also reseeds training).
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    /// Hash of the semantic configuration: everything that can change
    /// results. Output location is deliberately excluded.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            seed: u64,
            nmse_threshold: f64,
            mode: &'a Mode,
            nmse_region: &'a NmseRegion,
            domain: &'a DomainSpec,
            data: &'a DataConfig,
            train: &'a TrainConfig,
            power: &'a Option<PowerModel>,
            presets: &'a Vec<String>,
            custom_presets: &'a Vec<CustomPreset>,
            grey_se_dims: &'a GreySeDims,
        }
        let semantic = Semantic {
            seed: self.seed,
            nmse_threshold: self.nmse_threshold,
            mode: &self.mode,
            nmse_region: &self.nmse_region,
            domain: &self.domain,
            data: &self.data,
            train: &self.train,
            power: &self.power,
            presets: &self.presets,
            custom_presets: &self.custom_presets,
            grey_se_dims: &self.grey_se_dims,
        };
        let json = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Reference period used by grey presets.
    fn reference_period(&self) -> Result<Option<f64>> {
        match (self.data.source, self.data.period) {
            (_, Some(p)) => Ok(Some(p)),
            (DataSourceKind::Toy, None) => Ok(None), // presets default to the surface period
            (DataSourceKind::Csv, None) => Err(Error::Config(
                "data.period is required for grey presets on external data".to_string(),
            )),
        }
    }

    /// Resolve one preset by name (built-in or custom).
    pub fn resolve_preset(&self, name: &str) -> Result<ModelTemplate> {
        if let Some(custom) = self
            .custom_presets
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
        {
            return custom_template(custom);
        }
        let needs_period = !name.to_ascii_lowercase().starts_with("black");
        let period = if needs_period { self.reference_period()? } else { None };
        presets::by_name(name, period, self.grey_se_dims).map_err(|e| match e {
            Error::Config(msg) if !self.custom_presets.is_empty() => {
                let customs: Vec<&str> =
                    self.custom_presets.iter().map(|c| c.name.as_str()).collect();
                Error::Config(format!("{msg}; custom presets: {}", customs.join(", ")))
            }
            other => other,
        })
    }

    /// Resolve every configured preset, in order (first is the baseline).
    pub fn resolve_presets(&self) -> Result<Vec<ModelTemplate>> {
        self.presets.iter().map(|n| self.resolve_preset(n)).collect()
    }

    /// Build the sweep data source (toy grid or external CSV).
    pub fn sweep_data(&self) -> Result<SweepData> {
        match self.data.source {
            DataSourceKind::Toy => SweepData::toy(&self.domain),
            DataSourceKind::Csv => {
                let path = self.data.csv_path.as_ref().expect("validated");
                SweepData::external(load_csv(path)?)
            }
        }
    }
}

/// Derive a full template from a custom kernel spec.
fn custom_template(custom: &CustomPreset) -> Result<ModelTemplate> {
    custom.kernel.validate(2)?;
    let names = custom.kernel.param_names();
    let values = custom.kernel.params();
    let mut params: Vec<ParamSpec> = Vec::with_capacity(names.len() + 2);
    for (name, value) in names.iter().zip(values.iter()) {
        let spec = if name == "variance" {
            ParamSpec {
                name: name.clone(),
                constraint: Constraint::FreePositive,
                init: InitRule::LogUniform {
                    lo: 0.1,
                    hi: 10.0,
                    scale: InitScale::TargetVariance,
                },
            }
        } else if name.ends_with("period") {
            match custom.period_policy {
                PeriodPolicy::Free => ParamSpec {
                    name: name.clone(),
                    constraint: Constraint::FreePositive,
                    init: InitRule::LogUniform {
                        lo: 0.5 * value,
                        hi: 2.0 * value,
                        scale: InitScale::Unit,
                    },
                },
                PeriodPolicy::Fixed => ParamSpec {
                    name: name.clone(),
                    constraint: Constraint::Fixed { value: *value },
                    init: InitRule::AtFixed,
                },
                PeriodPolicy::BoundedPct(pct) => {
                    if !(pct.is_finite() && pct > 0.0 && pct < 100.0) {
                        return Err(Error::Config(format!(
                            "bounded_pct must lie in (0, 100), got {pct}"
                        )));
                    }
                    ParamSpec {
                        name: name.clone(),
                        constraint: Constraint::Bounded {
                            lo: (1.0 - pct / 100.0) * value,
                            hi: (1.0 + pct / 100.0) * value,
                        },
                        init: InitRule::WithinBounds,
                    }
                }
            }
        } else {
            // lengthscales: SE scales with its inputs, periodic is unitless
            let is_periodic = name.contains("periodic");
            let dims = active_dims_for(&custom.kernel, name);
            ParamSpec {
                name: name.clone(),
                constraint: Constraint::FreePositive,
                init: if is_periodic {
                    InitRule::LogUniform {
                        lo: 0.1,
                        hi: 10.0,
                        scale: InitScale::Unit,
                    }
                } else {
                    InitRule::LogUniform {
                        lo: 0.1,
                        hi: 10.0,
                        scale: InitScale::InputStd { dims },
                    }
                },
            }
        };
        params.push(spec);
    }
    params.push(ParamSpec {
        name: "mean".to_string(),
        constraint: Constraint::FreeReal,
        init: InitRule::TargetMeanBand,
    });
    params.push(ParamSpec {
        name: "noise_variance".to_string(),
        constraint: Constraint::FreePositive,
        init: InitRule::LogUniform {
            lo: 1e-4,
            hi: 1e-1,
            scale: InitScale::TargetVariance,
        },
    });
    Ok(ModelTemplate {
        name: custom.name.clone(),
        kernel: custom.kernel.clone(),
        params,
    })
}

/// Active dims of the component whose lengthscale parameter carries `name`.
fn active_dims_for(kernel: &KernelSpec, param_name: &str) -> Vec<usize> {
    let names = kernel.param_names();
    let position = names.iter().position(|n| n == param_name);
    let comp_index = position.map(|p| p.saturating_sub(1)).unwrap_or(0);
    match kernel {
        KernelSpec::SquaredExponential { active_dims, .. }
        | KernelSpec::Periodic { active_dims, .. } => active_dims.clone(),
        KernelSpec::Product { children, .. } => children
            .get(comp_index)
            .map(|c| match c {
                KernelSpec::SquaredExponential { active_dims, .. }
                | KernelSpec::Periodic { active_dims, .. } => active_dims.clone(),
                KernelSpec::Product { .. } => vec![0],
            })
            .unwrap_or_else(|| vec![0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 42

[power]
cpu_tdp_w = 65.0
ram_gb = 32.0
carbon_intensity_g_per_kwh = 475.0
"#;

    #[test]
    fn minimal_config_loads_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.train.seed, 42);
        assert_eq!(config.nmse_threshold, 10.0);
        assert_eq!(config.mode, Mode::Measured);
        assert_eq!(config.presets.len(), 3);
        assert_eq!(config.train.iterations, 1000);
        let templates = config.resolve_presets().unwrap();
        let h: Vec<usize> = templates.iter().map(|t| t.free_param_count()).collect();
        assert_eq!(h, vec![4, 6, 5]);
    }

    #[test]
    fn hash_changes_only_with_semantic_fields() {
        let base = RunConfig::default();
        let h0 = base.config_hash();
        assert_eq!(h0.len(), 16);

        let mut moved = base.clone();
        moved.output_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.config_hash(), h0);

        let mut reseeded = base.clone();
        reseeded.override_seed(77);
        assert_ne!(reseeded.config_hash(), h0);

        let mut retuned = base.clone();
        retuned.nmse_threshold = 5.0;
        assert_ne!(retuned.config_hash(), h0);

        let mut rescaled = base.clone();
        rescaled.domain.points_per_decile = 200;
        assert_ne!(rescaled.config_hash(), h0);
    }

    #[test]
    fn csv_source_requires_path_and_period_for_grey() {
        let mut config = RunConfig {
            data: DataConfig {
                source: DataSourceKind::Csv,
                csv_path: None,
                period: None,
            },
            ..RunConfig::default()
        };
        assert!(config.validate().is_err());
        config.data.csv_path = Some(PathBuf::from("data.csv"));
        // grey presets need a period on external data
        assert!(config.validate().is_err());
        config.data.period = Some(1.25);
        config.validate().unwrap();
        // black-1 alone never needs one
        config.data.period = None;
        config.presets = vec!["black-1".to_string()];
        config.validate().unwrap();
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        let config = RunConfig {
            presets: vec!["white-9".to_string()],
            ..RunConfig::default()
        };
        match config.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("black-1, grey-1, grey-2")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn custom_preset_kernel_roundtrip() {
        let text = r#"
[[custom_presets]]
name = "iso-grey"
period_policy = "fixed"

[custom_presets.kernel]
kind = "product"
variance = 1.0

[[custom_presets.kernel.children]]
kind = "squared_exponential"
lengthscale = 1.0
active_dims = [0, 1]

[[custom_presets.kernel.children]]
kind = "periodic"
lengthscale = 1.0
period = 1.5707963267948966
active_dims = [0]
"#;
        let mut config: RunConfig = toml::from_str(text).unwrap();
        config.train.seed = config.seed;
        config.presets = vec!["iso-grey".to_string()];
        config.validate().unwrap();
        let t = config.resolve_preset("iso-grey").unwrap();
        assert_eq!(t.free_param_count(), 5);
        assert_eq!(t.name, "iso-grey");

        let bounded: RunConfig = toml::from_str(
            &text.replace("period_policy = \"fixed\"", "period_policy = { bounded_pct = 10.0 }"),
        )
        .unwrap();
        let t = bounded.resolve_preset("iso-grey").unwrap();
        assert_eq!(t.free_param_count(), 6);
    }

    #[test]
    fn deny_unknown_fields() {
        let err = toml::from_str::<RunConfig>("nonsense_field = 3\n");
        assert!(err.is_err());
    }
}
