//! Hyperparameter optimization by marginal-likelihood ascent.
//!
//! Constrained hyperparameters are mapped to an unconstrained space
//! (log for positives, scaled logistic for intervals), ADAM runs a fixed
//! number of ascent steps there, and the nine-run protocol re-runs three
//! start points over three repeats.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carbon::timed;
use crate::dataset::{Dataset, EvalGrid};
use crate::error::{Error, Result};
use crate::gp::{nmse, GpEngine, GpModel, GpPosterior};
use crate::kernels::KernelSpec;

/// Constraint attached to one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Positive real, optimized on a log scale.
    FreePositive,
    /// Interval-bounded, optimized through a scaled logistic.
    Bounded { lo: f64, hi: f64 },
    /// Held at a value and excluded from the optimization vector.
    Fixed { value: f64 },
    /// Unconstrained real (the mean).
    FreeReal,
}

impl Constraint {
    pub fn validate(&self) -> Result<()> {
        if let Constraint::Bounded { lo, hi } = self {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "bounded constraint needs lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        if let Constraint::Fixed { value } = self {
            if !value.is_finite() {
                return Err(Error::invalid("fixed value must be finite"));
            }
        }
        Ok(())
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Constraint::Fixed { .. })
    }

    /// Does `value` satisfy this constraint?
    pub fn admits(&self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            Constraint::FreePositive => value > 0.0,
            Constraint::Bounded { lo, hi } => value > *lo && value < *hi,
            Constraint::Fixed { value: v } => value == *v,
            Constraint::FreeReal => true,
        }
    }
}

/// Map a constrained value to the unconstrained optimization scale.
pub fn to_unconstrained(value: f64, constraint: &Constraint) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::invalid("value must be finite"));
    }
    match constraint {
        Constraint::FreePositive => {
            if value <= 0.0 {
                return Err(Error::invalid(format!(
                    "positivity constraint violated by {value}"
                )));
            }
            Ok(value.ln())
        }
        Constraint::Bounded { lo, hi } => {
            if value <= *lo || value >= *hi {
                return Err(Error::invalid(format!(
                    "value {value} outside open interval ({lo}, {hi})"
                )));
            }
            let t = (value - lo) / (hi - lo);
            Ok((t / (1.0 - t)).ln())
        }
        Constraint::Fixed { .. } => Err(Error::invalid(
            "fixed parameters have no unconstrained coordinate",
        )),
        Constraint::FreeReal => Ok(value),
    }
}

/// Inverse of [`to_unconstrained`].
pub fn from_unconstrained(u: f64, constraint: &Constraint) -> f64 {
    match constraint {
        Constraint::FreePositive => u.exp(),
        Constraint::Bounded { lo, hi } => lo + (hi - lo) * logistic(u),
        Constraint::Fixed { value } => *value,
        Constraint::FreeReal => u,
    }
}

/// d(from_unconstrained)/du, the chain-rule factor for gradients.
pub fn transform_jacobian(u: f64, constraint: &Constraint) -> f64 {
    match constraint {
        Constraint::FreePositive => u.exp(),
        Constraint::Bounded { lo, hi } => {
            let s = logistic(u);
            (hi - lo) * s * (1.0 - s)
        }
        Constraint::Fixed { .. } => 0.0,
        Constraint::FreeReal => 1.0,
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Data-derived scale applied to an initialization range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScale {
    /// No scaling.
    Unit,
    /// Mean standard deviation of the listed input dimensions.
    InputStd { dims: Vec<usize> },
    /// Sample variance of the targets.
    TargetVariance,
}

/// How to draw a start value for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Log-uniform over [lo, hi] times the data scale.
    LogUniform { lo: f64, hi: f64, scale: InitScale },
    /// Uniform inside the parameter's bounded interval.
    WithinBounds,
    /// Uniform in [mean(y) - std(y), mean(y) + std(y)].
    TargetMeanBand,
    /// Always the fixed value.
    AtFixed,
}

/// One hyperparameter: canonical name, constraint, and start-point rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub constraint: Constraint,
    pub init: InitRule,
}

/// Optimizer settings for the nine-run protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
}

fn default_iterations() -> usize {
    1000
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_starts() -> usize {
    3
}
fn default_repeats() -> usize {
    3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: default_iterations(),
            learning_rate: default_learning_rate(),
            starts: default_starts(),
            repeats: default_repeats(),
            seed: 0,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.starts == 0 || self.repeats == 0 {
            return Err(Error::invalid(
                "iterations, starts and repeats must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        Ok(())
    }

    pub fn runs_per_cell(&self) -> usize {
        self.starts * self.repeats
    }
}

/// First/second moment state of the ADAM recurrence.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }
}

/// One ADAM ascent step: updates the moment state and returns the parameter
/// step lr * m_hat / (sqrt(v_hat) + eps). Deterministic.
pub fn adam_step(state: &mut AdamState, grad: &[f64], config: &TrainConfig) -> Result<Vec<f64>> {
    if grad.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "gradient length {} does not match state dimension {}",
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::DivergedRun {
            iteration: state.t as usize + 1,
            detail: "non-finite gradient".to_string(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let mut step = vec![0.0; grad.len()];
    for i in 0..grad.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        step[i] = config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    Ok(step)
}

/// A named model structure plus per-parameter constraints and start rules.
/// Parameter order is canonical: kernel parameters, then mean, then noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub name: String,
    pub kernel: KernelSpec,
    pub params: Vec<ParamSpec>,
}

impl ModelTemplate {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        self.kernel.validate(input_dim)?;
        let expected = self.kernel.param_count() + 2;
        if self.params.len() != expected {
            return Err(Error::invalid(format!(
                "template {} declares {} parameter specs, kernel + mean + noise need {expected}",
                self.name,
                self.params.len()
            )));
        }
        for p in &self.params {
            p.constraint.validate()?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Number of hyperparameters actually optimised.
    pub fn free_param_count(&self) -> usize {
        self.params.iter().filter(|p| !p.constraint.is_fixed()).count()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.constraint.is_fixed())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Instantiate a concrete model from a full canonical parameter vector.
    pub fn model_from_params(&self, params: &[f64]) -> Result<GpModel> {
        let kp = self.kernel.param_count();
        if params.len() != kp + 2 {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                kp + 2,
                params.len()
            )));
        }
        Ok(GpModel {
            mean: params[kp],
            kernel: self.kernel.with_params(&params[..kp])?,
            noise_variance: params[kp + 1],
        })
    }

    /// Canonical indices of fixed period parameters (usable for the
    /// engine's fixed-period cache).
    fn fixed_kernel_indices(&self) -> Vec<usize> {
        let kp = self.kernel.param_count();
        (0..kp)
            .filter(|&i| self.params[i].constraint.is_fixed())
            .collect()
    }
}

/// Summary statistics used to scale start-point draws.
#[derive(Debug, Clone)]
pub struct DataStats {
    pub y_mean: f64,
    pub y_std: f64,
    pub y_var: f64,
    pub input_std: Vec<f64>,
}

impl DataStats {
    pub fn from_dataset(data: &Dataset) -> DataStats {
        let n = data.len() as f64;
        let y_mean = data.targets.iter().sum::<f64>() / n;
        let y_var = data
            .targets
            .iter()
            .map(|y| (y - y_mean) * (y - y_mean))
            .sum::<f64>()
            / n;
        let input_std = (0..data.dim())
            .map(|d| {
                let col = data.inputs.column(d);
                let m = col.iter().sum::<f64>() / n;
                (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
            })
            .collect();
        DataStats {
            y_mean,
            y_std: y_var.sqrt(),
            y_var,
            input_std,
        }
    }

    fn scale_value(&self, scale: &InitScale) -> f64 {
        match scale {
            InitScale::Unit => 1.0,
            InitScale::InputStd { dims } => {
                let s: f64 = dims.iter().map(|&d| self.input_std[d]).sum();
                (s / dims.len() as f64).max(1e-12)
            }
            InitScale::TargetVariance => self.y_var.max(1e-12),
        }
    }
}

/// Map uniform quantiles (one per parameter, shared across repeats) to a
/// concrete start point under the template's rules and the dataset's scale.
pub fn start_point_from_quantiles(
    template: &ModelTemplate,
    stats: &DataStats,
    quantiles: &[f64],
) -> Result<Vec<f64>> {
    if quantiles.len() != template.params.len() {
        return Err(Error::invalid("one quantile per parameter required"));
    }
    template
        .params
        .iter()
        .zip(quantiles.iter())
        .map(|(spec, &q)| {
            let q = q.clamp(1e-6, 1.0 - 1e-6);
            let v = match (&spec.init, &spec.constraint) {
                (InitRule::AtFixed, Constraint::Fixed { value }) => *value,
                (InitRule::AtFixed, _) => {
                    return Err(Error::invalid(format!(
                        "parameter {} uses AtFixed without a fixed constraint",
                        spec.name
                    )))
                }
                (InitRule::WithinBounds, Constraint::Bounded { lo, hi }) => lo + q * (hi - lo),
                (InitRule::WithinBounds, _) => {
                    return Err(Error::invalid(format!(
                        "parameter {} uses WithinBounds without bounds",
                        spec.name
                    )))
                }
                (InitRule::TargetMeanBand, _) => stats.y_mean + (2.0 * q - 1.0) * stats.y_std,
                (InitRule::LogUniform { lo, hi, scale }, _) => {
                    let s = stats.scale_value(scale);
                    s * lo * (hi / lo).powf(q)
                }
            };
            if !spec.constraint.admits(v) {
                return Err(Error::invalid(format!(
                    "sampled start {v} violates the constraint on {}",
                    spec.name
                )));
            }
            Ok(v)
        })
        .collect()
}

/// Draw the per-start quantile vector. The stream depends only on the seed
/// and the start index, so repeats re-run the same start.
pub fn start_quantiles(seed: u64, start_index: usize, n_params: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(subseed(seed, "start", &[start_index as u64]));
    (0..n_params).map(|_| rng.gen::<f64>()).collect()
}

/// Derive an independent seed stream for a purpose tag and indices.
pub fn subseed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Per-iteration record of the optimization path.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lml: f64,
    pub params: Vec<f64>,
}

/// Full optimization trace of a single fit.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub param_names: Vec<String>,
    /// Row `i` holds the state entering iteration `i + 1`.
    pub rows: Vec<TraceRow>,
    pub final_lml: f64,
    pub jittered_iterations: usize,
}

impl FitTrace {
    /// Serialize as CSV: iteration, LML, one column per parameter.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?,
        );
        let mut line = String::from("iteration,lml");
        for n in &self.param_names {
            line.push(',');
            line.push_str(n);
        }
        line.push('\n');
        out.write_all(line.as_bytes())
            .map_err(|e| Error::io(display.clone(), e))?;
        for row in &self.rows {
            let mut line = format!("{},{}", row.iteration, row.lml);
            for v in &row.params {
                line.push(',');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())
                .map_err(|e| Error::io(display.clone(), e))?;
        }
        Ok(())
    }
}

/// Result of a single fit: the trained model and its trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: GpModel,
    pub trace: FitTrace,
}

/// Run exactly `config.iterations` ADAM ascent steps from `start_point`
/// (full canonical vector satisfying every constraint) and return the
/// final-iteration model. No early stopping.
pub fn fit(
    template: &ModelTemplate,
    data: &Dataset,
    start_point: &[f64],
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    template.validate(data.dim())?;
    if start_point.len() != template.param_count() {
        return Err(Error::invalid(format!(
            "start point has {} entries, template {} needs {}",
            start_point.len(),
            template.name,
            template.param_count()
        )));
    }
    for (spec, &v) in template.params.iter().zip(start_point.iter()) {
        if !spec.constraint.admits(v) {
            return Err(Error::invalid(format!(
                "start value {v} violates the constraint on {}",
                spec.name
            )));
        }
    }

    let free = template.free_indices();
    let mut u: Vec<f64> = free
        .iter()
        .map(|&i| to_unconstrained(start_point[i], &template.params[i].constraint))
        .collect::<Result<_>>()?;

    let seed_model = template.model_from_params(start_point)?;
    let mut engine = GpEngine::new(&seed_model, data, &template.fixed_kernel_indices())?;

    let mut theta = start_point.to_vec();
    let mut adam = AdamState::new(free.len());
    let mut rows = Vec::with_capacity(config.iterations);

    for iter in 1..=config.iterations {
        for (ui, &pi) in u.iter().zip(free.iter()) {
            theta[pi] = from_unconstrained(*ui, &template.params[pi].constraint);
            debug_assert!(
                template.params[pi].constraint.admits(theta[pi]),
                "constrained parameter escaped its interval"
            );
        }
        let (lml, grad_raw) = engine.lml_with_grad(&theta).map_err(|e| match e {
            Error::NumericalFailure { attempted_jitters } => Error::DivergedRun {
                iteration: iter,
                detail: format!(
                    "factorization failed after jitters {attempted_jitters:?}"
                ),
            },
            other => other,
        })?;
        if !lml.is_finite() {
            return Err(Error::DivergedRun {
                iteration: iter,
                detail: format!("non-finite likelihood {lml}"),
            });
        }
        rows.push(TraceRow {
            iteration: iter,
            lml,
            params: theta.clone(),
        });

        let g_u: Vec<f64> = free
            .iter()
            .zip(u.iter())
            .map(|(&pi, &ui)| grad_raw[pi] * transform_jacobian(ui, &template.params[pi].constraint))
            .collect();
        let step = adam_step(&mut adam, &g_u, config).map_err(|e| match e {
            Error::DivergedRun { detail, .. } => Error::DivergedRun {
                iteration: iter,
                detail,
            },
            other => other,
        })?;
        for (ui, s) in u.iter_mut().zip(step.iter()) {
            *ui += s;
        }
    }

    for (ui, &pi) in u.iter().zip(free.iter()) {
        theta[pi] = from_unconstrained(*ui, &template.params[pi].constraint);
    }
    let final_lml = engine.lml(&theta).map_err(|e| match e {
        Error::NumericalFailure { attempted_jitters } => Error::DivergedRun {
            iteration: config.iterations,
            detail: format!("final factorization failed after jitters {attempted_jitters:?}"),
        },
        other => other,
    })?;
    let model = template.model_from_params(&theta)?;

    Ok(FitResult {
        model,
        trace: FitTrace {
            param_names: template.param_names(),
            rows,
            final_lml,
            jittered_iterations: engine.jitter_events(),
        },
    })
}

/// JSON has no infinity; failed runs serialize their NMSE as null and keep
/// the error string.
pub fn serialize_nmse<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

/// Outcome of one run of the multi-start protocol. Failed runs carry
/// `nmse = +inf` and a description.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub start_index: usize,
    pub repeat_index: usize,
    #[serde(serialize_with = "serialize_nmse")]
    pub nmse: f64,
    pub final_lml: Option<f64>,
    pub duration_s: f64,
    pub params: Option<Vec<f64>>,
    pub jittered_iterations: usize,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Run the starts x repeats protocol. `repeat_data` supplies the dataset
/// for each repeat (fresh draws capture data variability; pass the same
/// dataset several times when resampling is impossible). Start points are
/// drawn per start index and shared across repeats. All runs are retained;
/// nothing is selected out.
pub fn multi_start_fit(
    template: &ModelTemplate,
    repeat_data: &[Dataset],
    eval: &EvalGrid,
    config: &TrainConfig,
) -> Result<Vec<RunRecord>> {
    multi_start_impl(template, repeat_data, eval, config, false)
}

/// [`multi_start_fit`] with runs dispatched across threads. Timing fidelity
/// is lost; only for unmeasured sweeps.
pub fn multi_start_fit_parallel(
    template: &ModelTemplate,
    repeat_data: &[Dataset],
    eval: &EvalGrid,
    config: &TrainConfig,
) -> Result<Vec<RunRecord>> {
    multi_start_impl(template, repeat_data, eval, config, true)
}

fn multi_start_impl(
    template: &ModelTemplate,
    repeat_data: &[Dataset],
    eval: &EvalGrid,
    config: &TrainConfig,
    parallel: bool,
) -> Result<Vec<RunRecord>> {
    use rayon::prelude::*;

    config.validate()?;
    if repeat_data.len() != config.repeats {
        return Err(Error::invalid(format!(
            "expected {} repeat datasets, got {}",
            config.repeats,
            repeat_data.len()
        )));
    }
    let quantiles: Vec<Vec<f64>> = (0..config.starts)
        .map(|s| start_quantiles(config.seed, s, template.param_count()))
        .collect();
    let stats: Vec<DataStats> = repeat_data.iter().map(DataStats::from_dataset).collect();

    let tasks: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..config.starts).map(move |s| (r, s)))
        .collect();
    let run = |&(repeat_index, start_index): &(usize, usize)| {
        run_once(
            template,
            &repeat_data[repeat_index],
            eval,
            config,
            &stats[repeat_index],
            &quantiles[start_index],
            start_index,
            repeat_index,
        )
    };
    let records: Vec<RunRecord> = if parallel {
        let mut out: Vec<RunRecord> = tasks.par_iter().map(run).collect();
        out.sort_by_key(|r| (r.repeat_index, r.start_index));
        out
    } else {
        tasks.iter().map(run).collect()
    };
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn run_once(
    template: &ModelTemplate,
    data: &Dataset,
    eval: &EvalGrid,
    config: &TrainConfig,
    stats: &DataStats,
    quantiles: &[f64],
    start_index: usize,
    repeat_index: usize,
) -> RunRecord {
    let fail = |duration_s: f64, err: &Error| RunRecord {
        start_index,
        repeat_index,
        nmse: f64::INFINITY,
        final_lml: None,
        duration_s,
        params: None,
        jittered_iterations: 0,
        error: Some(err.to_string()),
    };

    let start = match start_point_from_quantiles(template, stats, quantiles) {
        Ok(s) => s,
        Err(e) => return fail(0.0, &e),
    };

    let (outcome, duration_s) = timed(|| fit(template, data, &start, config));
    match outcome {
        Ok(FitResult { model, trace }) => {
            let nmse_value = GpPosterior::new(&model, data)
                .and_then(|p| p.predict(eval.inputs.view()))
                .and_then(|(mean, _)| {
                    nmse(mean.as_slice().expect("contiguous"), eval.truths.as_slice().expect("contiguous"))
                });
            match nmse_value {
                Ok(v) => RunRecord {
                    start_index,
                    repeat_index,
                    nmse: v,
                    final_lml: Some(trace.final_lml),
                    duration_s,
                    params: Some(model.params()),
                    jittered_iterations: trace.jittered_iterations,
                    error: None,
                },
                Err(e) => {
                    let mut r = fail(duration_s, &e);
                    r.jittered_iterations = trace.jittered_iterations;
                    r
                }
            }
        }
        Err(e) => fail(duration_s, &e),
    }
}
