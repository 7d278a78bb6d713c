//! The three studied model presets.
//!
//! Black-1 is the data-driven baseline: constant mean plus an isotropic
//! squared exponential over both inputs, four hyperparameters. The grey
//! models multiply an SE kernel by a periodic kernel in x1 and differ only
//! in how much the period is trusted: Grey-1 bounds it within 10% of the
//! reference value (six hyperparameters), Grey-2 fixes it outright (five).
//!
//! The periodic component always reads x1. The SE component of the grey
//! models defaults to x2 only, leaving extrapolation along x1 entirely to
//! the periodic structure; [`GreySeDims::Both`] switches it to an isotropic
//! SE over both inputs for comparison.

use crate::dataset::SURFACE_PERIOD_X1;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::training::{Constraint, InitRule, InitScale, ModelTemplate, ParamSpec};

/// Which input dimensions the grey models' SE component reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreySeDims {
    /// SE over x2 only; the periodic kernel owns the x1 direction.
    #[default]
    X2Only,
    /// Isotropic SE over both inputs.
    Both,
}

impl GreySeDims {
    fn dims(self) -> Vec<usize> {
        match self {
            GreySeDims::X2Only => vec![1],
            GreySeDims::Both => vec![0, 1],
        }
    }
}

fn variance_spec() -> ParamSpec {
    ParamSpec {
        name: "variance".to_string(),
        constraint: Constraint::FreePositive,
        init: InitRule::LogUniform {
            lo: 0.1,
            hi: 10.0,
            scale: InitScale::TargetVariance,
        },
    }
}

fn lengthscale_spec(name: &str, dims: Vec<usize>) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        constraint: Constraint::FreePositive,
        init: InitRule::LogUniform {
            lo: 0.1,
            hi: 10.0,
            scale: InitScale::InputStd { dims },
        },
    }
}

/// The periodic lengthscale divides sin^2 terms in [0, 1]; its natural
/// scale is unit, not the input spread.
fn periodic_lengthscale_spec(name: &str) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        constraint: Constraint::FreePositive,
        init: InitRule::LogUniform {
            lo: 0.1,
            hi: 10.0,
            scale: InitScale::Unit,
        },
    }
}

fn mean_spec() -> ParamSpec {
    ParamSpec {
        name: "mean".to_string(),
        constraint: Constraint::FreeReal,
        init: InitRule::TargetMeanBand,
    }
}

fn noise_spec() -> ParamSpec {
    ParamSpec {
        name: "noise_variance".to_string(),
        constraint: Constraint::FreePositive,
        init: InitRule::LogUniform {
            lo: 1e-4,
            hi: 1e-1,
            scale: InitScale::TargetVariance,
        },
    }
}

/// Constant mean + SE over both inputs. Four free hyperparameters.
pub fn black1() -> ModelTemplate {
    ModelTemplate {
        name: "Black-1".to_string(),
        kernel: KernelSpec::se(1.0, 1.0, vec![0, 1]),
        params: vec![
            variance_spec(),
            lengthscale_spec("lengthscale", vec![0, 1]),
            mean_spec(),
            noise_spec(),
        ],
    }
}

/// SE x Periodic with the period bounded within 10% of `true_period`.
/// Six free hyperparameters.
pub fn grey1(true_period: f64) -> ModelTemplate {
    grey1_with_dims(true_period, GreySeDims::default())
}

pub fn grey1_with_dims(true_period: f64, se_dims: GreySeDims) -> ModelTemplate {
    ModelTemplate {
        name: "Grey-1".to_string(),
        kernel: grey_kernel(true_period, se_dims),
        params: grey_params(
            se_dims,
            ParamSpec {
                name: "periodic_period".to_string(),
                constraint: Constraint::Bounded {
                    lo: 0.9 * true_period,
                    hi: 1.1 * true_period,
                },
                init: InitRule::WithinBounds,
            },
        ),
    }
}

/// SE x Periodic with the period fixed at `true_period` and excluded from
/// optimization. Five free hyperparameters.
pub fn grey2(true_period: f64) -> ModelTemplate {
    grey2_with_dims(true_period, GreySeDims::default())
}

pub fn grey2_with_dims(true_period: f64, se_dims: GreySeDims) -> ModelTemplate {
    ModelTemplate {
        name: "Grey-2".to_string(),
        kernel: grey_kernel(true_period, se_dims),
        params: grey_params(
            se_dims,
            ParamSpec {
                name: "periodic_period".to_string(),
                constraint: Constraint::Fixed { value: true_period },
                init: InitRule::AtFixed,
            },
        ),
    }
}

fn grey_kernel(true_period: f64, se_dims: GreySeDims) -> KernelSpec {
    KernelSpec::product(
        1.0,
        vec![
            KernelSpec::se(1.0, 1.0, se_dims.dims()),
            KernelSpec::periodic(1.0, true_period, 1.0, vec![0]),
        ],
    )
}

fn grey_params(se_dims: GreySeDims, period: ParamSpec) -> Vec<ParamSpec> {
    vec![
        variance_spec(),
        lengthscale_spec("se_lengthscale", se_dims.dims()),
        periodic_lengthscale_spec("periodic_lengthscale"),
        period,
        mean_spec(),
        noise_spec(),
    ]
}

/// Resolve a preset by name. `true_period` defaults to the synthetic
/// surface's period when not supplied; external data must provide one for
/// the grey presets.
pub fn by_name(
    name: &str,
    true_period: Option<f64>,
    se_dims: GreySeDims,
) -> Result<ModelTemplate> {
    let canonical = name.to_ascii_lowercase();
    let period = true_period.unwrap_or(SURFACE_PERIOD_X1);
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::invalid(format!(
            "reference period must be positive, got {period}"
        )));
    }
    match canonical.as_str() {
        "black-1" | "black1" => Ok(black1()),
        "grey-1" | "grey1" => Ok(grey1_with_dims(period, se_dims)),
        "grey-2" | "grey2" => Ok(grey2_with_dims(period, se_dims)),
        _ => Err(Error::Config(format!(
            "unknown preset `{name}`; available presets: black-1, grey-1, grey-2"
        ))),
    }
}

pub const PRESET_NAMES: [&str; 3] = ["black-1", "grey-1", "grey-2"];
