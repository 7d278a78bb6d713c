//! Exact Gaussian-process regression: marginal log-likelihood, its
//! gradient, posterior prediction, and the NMSE metric.
//!
//! Everything goes through a Cholesky factorization of K + noise*I; the
//! inverse is never formed for solves (it is formed once per gradient
//! evaluation, where the trace terms genuinely need it). When a
//! factorization fails, jitter escalates through [`JITTER_LADDER`] relative
//! to the mean diagonal before the operation reports a numerical failure.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{eval_kernel_unchecked, Component, KernelSpec};
use crate::linalg::{
    factorize_lower, gemv_transpose, invert_from_factor, log_det_from_factor, solve_with_factor,
    tri_solve_lower, SymMatrix,
};

/// Escalating jitter levels, relative to the mean diagonal of K + noise*I.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

const LN_2PI: f64 = 1.8378770664093453;

/// A GP with constant mean, a kernel, and observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub mean: f64,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
}

impl GpModel {
    pub fn new(mean: f64, kernel: KernelSpec, noise_variance: f64) -> Self {
        GpModel {
            mean,
            kernel,
            noise_variance,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        self.kernel.validate(input_dim)?;
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        if !self.mean.is_finite() {
            return Err(Error::invalid("mean must be finite"));
        }
        Ok(())
    }

    /// Full parameter vector: kernel parameters in canonical order, then
    /// mean, then noise variance.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.kernel.params();
        p.push(self.mean);
        p.push(self.noise_variance);
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.kernel.param_names();
        names.push("mean".to_string());
        names.push("noise_variance".to_string());
        names
    }

    pub fn param_count(&self) -> usize {
        self.kernel.param_count() + 2
    }

    pub fn with_params(&self, params: &[f64]) -> Result<GpModel> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let kp = self.kernel.param_count();
        Ok(GpModel {
            mean: params[kp],
            kernel: self.kernel.with_params(&params[..kp])?,
            noise_variance: params[kp + 1],
        })
    }
}

/// Factorize `a` in place, escalating jitter when needed. `rebuild` must
/// restore the original matrix plus `jitter` on the diagonal.
/// Returns the jitter that succeeded (None when none was needed).
fn factorize_with_jitter(
    a: &mut SymMatrix,
    mean_diag: f64,
    mut rebuild: impl FnMut(&mut SymMatrix, f64),
) -> Result<Option<f64>> {
    if factorize_lower(a).is_ok() {
        return Ok(None);
    }
    let mut attempted = Vec::new();
    for rel in JITTER_LADDER {
        let jitter = rel * mean_diag;
        attempted.push(jitter);
        rebuild(a, jitter);
        if factorize_lower(a).is_ok() {
            return Ok(Some(jitter));
        }
    }
    Err(Error::NumericalFailure {
        attempted_jitters: attempted,
    })
}

/// Immutable trained-state cache: Cholesky factor and alpha = K_y^-1 r.
/// Safe to share across concurrent prediction calls.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    model: GpModel,
    train_inputs: Array2<f64>,
    factor: SymMatrix,
    alpha: Vec<f64>,
    lml: f64,
    jitter: Option<f64>,
}

impl GpPosterior {
    pub fn new(model: &GpModel, train: &Dataset) -> Result<GpPosterior> {
        model.validate(train.dim())?;
        let n = train.len();
        let k = crate::kernels::covariance_matrix(
            &model.kernel,
            train.inputs.view(),
            train.inputs.view(),
        )?;
        let mut a = SymMatrix::zeros(n);
        for j in 0..n {
            for i in j..n {
                a.set_lower(i, j, k[[i, j]]);
            }
            let d = a.lower(j, j) + model.noise_variance;
            a.set_lower(j, j, d);
        }
        let mean_diag = model.kernel.variance() + model.noise_variance;
        let base = a.clone();
        let jitter = factorize_with_jitter(&mut a, mean_diag, |m, jit| {
            m.as_mut_slice().copy_from_slice(base.as_slice());
            for j in 0..n {
                let d = m.lower(j, j) + jit;
                m.set_lower(j, j, d);
            }
        })?;

        let r: Vec<f64> = train.targets.iter().map(|&y| y - model.mean).collect();
        let mut alpha = r.clone();
        solve_with_factor(&a, &mut alpha)?;

        let quad: f64 = r.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
        let lml = -0.5 * quad - 0.5 * log_det_from_factor(&a) - 0.5 * n as f64 * LN_2PI;

        Ok(GpPosterior {
            model: model.clone(),
            train_inputs: train.inputs.clone(),
            factor: a,
            alpha,
            lml,
            jitter,
        })
    }

    /// Log marginal likelihood of the conditioning data.
    pub fn lml(&self) -> f64 {
        self.lml
    }

    /// Jitter applied to factorize, if any.
    pub fn jitter(&self) -> Option<f64> {
        self.jitter
    }

    /// Posterior mean and variance at the query points.
    pub fn predict(&self, xstar: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let m = xstar.nrows();
        if m == 0 {
            return Ok((Array1::zeros(0), Array1::zeros(0)));
        }
        if xstar.ncols() != self.train_inputs.ncols() {
            return Err(Error::invalid(format!(
                "query dimensionality {} does not match training data {}",
                xstar.ncols(),
                self.train_inputs.ncols()
            )));
        }
        let n = self.train_inputs.nrows();

        // cross-covariance, column-major n x m
        let mut kstar = vec![0.0f64; n * m];
        for j in 0..m {
            let xq = xstar.row(j);
            let col = &mut kstar[j * n..(j + 1) * n];
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = eval_kernel_unchecked(&self.model.kernel, self.train_inputs.row(i), xq);
            }
        }

        let mut mean = vec![0.0f64; m];
        gemv_transpose(&kstar, n, m, &self.alpha, &mut mean);
        for v in mean.iter_mut() {
            *v += self.model.mean;
        }

        // v = L^-1 K*, then var_j = (sigma^2 + noise) - sum_i v_ij^2
        let prior = self.model.kernel.variance() + self.model.noise_variance;
        tri_solve_lower(&self.factor, &mut kstar, m);
        let mut var = vec![0.0f64; m];
        for j in 0..m {
            let col = &kstar[j * n..(j + 1) * n];
            let reduction: f64 = col.iter().map(|v| v * v).sum();
            var[j] = (prior - reduction).max(f64::MIN_POSITIVE);
        }
        Ok((Array1::from_vec(mean), Array1::from_vec(var)))
    }
}

/// Log marginal likelihood of `data` under `model`.
pub fn log_marginal_likelihood(model: &GpModel, data: &Dataset) -> Result<f64> {
    Ok(GpPosterior::new(model, data)?.lml())
}

/// Gradient of the log marginal likelihood with respect to every model
/// parameter in canonical order (kernel parameters, mean, noise variance),
/// on the raw parameter scale.
pub fn lml_gradient_full(model: &GpModel, data: &Dataset) -> Result<Vec<f64>> {
    let mut engine = GpEngine::new(model, data, &[])?;
    let (_, grad) = engine.lml_with_grad(&model.params())?;
    Ok(grad)
}

/// Gradient restricted to the requested canonical parameter indices.
pub fn lml_gradient(model: &GpModel, data: &Dataset, free_params: &[usize]) -> Result<Vec<f64>> {
    let full = lml_gradient_full(model, data)?;
    free_params
        .iter()
        .map(|&i| {
            full.get(i).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "free parameter index {i} out of range for {} parameters",
                    full.len()
                ))
            })
        })
        .collect()
}

/// Posterior mean and variance at `xstar` for a model conditioned on
/// `train`. Builds a fresh posterior; use [`GpPosterior`] to reuse one.
pub fn predict(
    model: &GpModel,
    train: &Dataset,
    xstar: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    GpPosterior::new(model, train)?.predict(xstar)
}

/// Normalised mean squared error, scaled so that predicting the target mean
/// scores 100: NMSE = 100 * sum((pred - truth)^2) / (M * var(truth)).
pub fn nmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    let m = truth.len();
    if m < 2 {
        return Err(Error::invalid("NMSE needs at least two points"));
    }
    let mean = truth.iter().sum::<f64>() / m as f64;
    let denom: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateTargets);
    }
    let num: f64 = predicted
        .iter()
        .zip(truth.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(100.0 * num / denom)
}

// ---------------------------------------------------------------------------
// Training engine
// ---------------------------------------------------------------------------

/// Pairwise quantities of one kernel component that depend only on the
/// training inputs, packed over the lower triangle (column-major order:
/// j outer, i = j..n inner).
enum CompCache {
    Se {
        sq: Vec<f64>,
    },
    Periodic {
        dist: Vec<f64>,
        /// sin^2(pi d / p) precomputed when the period never changes.
        fixed_sin2: Option<Vec<f64>>,
    },
}

/// Reusable per-dataset state for repeated likelihood/gradient evaluations
/// at different hyperparameters. This is the hot path of training: distance
/// fields are computed once, and each evaluation costs one Cholesky
/// factorization, one inverse, and a few fused passes over the packed
/// triangle.
pub struct GpEngine {
    n: usize,
    kernel_shape: KernelSpec,
    comps: Vec<CompCache>,
    /// canonical slot of each component's period parameter, if periodic
    period_slot: Vec<Option<usize>>,
    targets: Vec<f64>,
    k_unit: Vec<f64>,
    scratch_sin2: Vec<f64>,
    a: SymMatrix,
    alpha: Vec<f64>,
    jitter_events: usize,
}

impl GpEngine {
    /// Build an engine for the kernel structure of `model` over `data`.
    /// `fixed_periods` lists canonical kernel-parameter indices whose period
    /// value never changes across evaluations (enables the sin^2 cache; the
    /// gradient entry for those indices is reported as zero and must not be
    /// consumed).
    pub fn new(model: &GpModel, data: &Dataset, fixed_periods: &[usize]) -> Result<GpEngine> {
        model.validate(data.dim())?;
        let n = data.len();
        let plen = n * (n + 1) / 2;
        let x = &data.inputs;

        let comps_view: Vec<Component> = model.kernel.components().collect();
        let n_comps = comps_view.len();
        let mut period_slot = Vec::with_capacity(n_comps);
        {
            let mut next = 1 + n_comps;
            for c in &comps_view {
                if matches!(c, Component::Periodic { .. }) {
                    period_slot.push(Some(next));
                    next += 1;
                } else {
                    period_slot.push(None);
                }
            }
        }

        let mut comps = Vec::with_capacity(n_comps);
        for (ci, c) in comps_view.iter().enumerate() {
            match c {
                Component::Se { active_dims, .. } => {
                    let mut sq = vec![0.0f64; plen];
                    let mut idx = 0;
                    for j in 0..n {
                        for i in j..n {
                            let mut s = 0.0;
                            for &d in active_dims.iter() {
                                let diff = x[[i, d]] - x[[j, d]];
                                s += diff * diff;
                            }
                            sq[idx] = s;
                            idx += 1;
                        }
                    }
                    comps.push(CompCache::Se { sq });
                }
                Component::Periodic {
                    period, active_dim, ..
                } => {
                    let mut dist = vec![0.0f64; plen];
                    let mut idx = 0;
                    for j in 0..n {
                        for i in j..n {
                            dist[idx] = (x[[i, *active_dim]] - x[[j, *active_dim]]).abs();
                            idx += 1;
                        }
                    }
                    let slot = period_slot[ci].expect("periodic component has a period slot");
                    let fixed_sin2 = if fixed_periods.contains(&slot) {
                        let p = **period;
                        Some(
                            dist.iter()
                                .map(|&d| {
                                    let s = (std::f64::consts::PI * d / p).sin();
                                    s * s
                                })
                                .collect(),
                        )
                    } else {
                        None
                    };
                    comps.push(CompCache::Periodic { dist, fixed_sin2 });
                }
            }
        }

        Ok(GpEngine {
            n,
            kernel_shape: model.kernel.clone(),
            comps,
            period_slot,
            targets: data.targets.to_vec(),
            k_unit: vec![0.0; plen],
            scratch_sin2: vec![0.0; plen],
            a: SymMatrix::zeros(n),
            alpha: vec![0.0; n],
            jitter_events: 0,
        })
    }

    pub fn jitter_events(&self) -> usize {
        self.jitter_events
    }

    fn split_params<'a>(&self, params: &'a [f64]) -> Result<(f64, &'a [f64], &'a [f64], f64, f64)> {
        let n_comps = self.comps.len();
        let n_periods = self.period_slot.iter().filter(|s| s.is_some()).count();
        let expected = 1 + n_comps + n_periods + 2;
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let variance = params[0];
        let lengthscales = &params[1..1 + n_comps];
        let periods = &params[1 + n_comps..1 + n_comps + n_periods];
        let mean = params[1 + n_comps + n_periods];
        let noise = params[1 + n_comps + n_periods + 1];
        for (name, v) in [("variance", variance), ("noise variance", noise)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for &l in lengthscales {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid(format!("lengthscale must be positive, got {l}")));
            }
        }
        for &p in periods {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid(format!("period must be positive, got {p}")));
            }
        }
        Ok((variance, lengthscales, periods, mean, noise))
    }

    /// Assemble k_unit (packed) for the given kernel parameters. Also fills
    /// `scratch_sin2` for periodic components whose period varies.
    fn build_k_unit(&mut self, lengthscales: &[f64], periods: &[f64]) {
        let plen = self.k_unit.len();
        for v in self.k_unit.iter_mut() {
            *v = 0.0;
        }
        let mut period_idx = 0usize;
        for (ci, comp) in self.comps.iter().enumerate() {
            let l = lengthscales[ci];
            match comp {
                CompCache::Se { sq } => {
                    let c = 1.0 / (2.0 * l * l);
                    for (acc, &s) in self.k_unit.iter_mut().zip(sq.iter()) {
                        *acc -= s * c;
                    }
                }
                CompCache::Periodic { dist, fixed_sin2 } => {
                    let b = 2.0 / (l * l);
                    match fixed_sin2 {
                        Some(s2) => {
                            for (acc, &s) in self.k_unit.iter_mut().zip(s2.iter()) {
                                *acc -= s * b;
                            }
                        }
                        None => {
                            let p = periods[period_idx];
                            let w = std::f64::consts::PI / p;
                            for k in 0..plen {
                                let s = (dist[k] * w).sin();
                                let s2 = s * s;
                                self.scratch_sin2[k] = s2;
                                self.k_unit[k] -= s2 * b;
                            }
                        }
                    }
                    period_idx += 1;
                }
            }
        }
        for v in self.k_unit.iter_mut() {
            *v = v.exp();
        }
    }

    /// Write K = variance * k_unit + (noise + jitter) I into `self.a`.
    fn assemble(&mut self, variance: f64, noise: f64, jitter: f64) {
        let n = self.n;
        let data = self.a.as_mut_slice();
        let mut idx = 0;
        for j in 0..n {
            let col = j * n;
            data[col + j] = variance * self.k_unit[idx] + noise + jitter;
            idx += 1;
            for i in (j + 1)..n {
                data[col + i] = variance * self.k_unit[idx];
                idx += 1;
            }
        }
    }

    fn factorize(&mut self, variance: f64, noise: f64) -> Result<()> {
        self.assemble(variance, noise, 0.0);
        if factorize_lower(&mut self.a).is_ok() {
            return Ok(());
        }
        let mean_diag = variance + noise;
        let mut attempted = Vec::new();
        for rel in JITTER_LADDER {
            let jitter = rel * mean_diag;
            attempted.push(jitter);
            self.assemble(variance, noise, jitter);
            if factorize_lower(&mut self.a).is_ok() {
                self.jitter_events += 1;
                return Ok(());
            }
        }
        Err(Error::NumericalFailure {
            attempted_jitters: attempted,
        })
    }

    /// Log marginal likelihood at `params` (full canonical vector).
    pub fn lml(&mut self, params: &[f64]) -> Result<f64> {
        let (variance, lengthscales, periods, mean, noise) = self.split_params(params)?;
        self.build_k_unit(lengthscales, periods);
        self.factorize(variance, noise)?;
        Ok(self.lml_from_factor(mean))
    }

    fn lml_from_factor(&mut self, mean: f64) -> f64 {
        let n = self.n;
        for (a, y) in self.alpha.iter_mut().zip(self.targets.iter()) {
            *a = y - mean;
        }
        let quad_rhs: Vec<f64> = self.alpha.clone();
        solve_with_factor(&self.a, &mut self.alpha).expect("dimensions match");
        let quad: f64 = quad_rhs
            .iter()
            .zip(self.alpha.iter())
            .map(|(r, a)| r * a)
            .sum();
        -0.5 * quad - 0.5 * log_det_from_factor(&self.a) - 0.5 * n as f64 * LN_2PI
    }

    /// Log marginal likelihood and its gradient with respect to every
    /// canonical parameter, on the raw scale.
    pub fn lml_with_grad(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (variance, lengthscales, periods, mean, noise) = self.split_params(params)?;
        self.build_k_unit(lengthscales, periods);
        self.factorize(variance, noise)?;
        let lml = self.lml_from_factor(mean);

        // replace the factor with K^-1 (lower triangle)
        invert_from_factor(&mut self.a);

        let n = self.n;
        let n_comps = self.comps.len();
        let n_periods = self.period_slot.iter().filter(|s| s.is_some()).count();
        let mut grad = vec![0.0f64; 1 + n_comps + n_periods + 2];

        // diagonal-only terms: noise and the trace part of the variance
        let mut trace_kinv = 0.0;
        let mut alpha_sq = 0.0;
        {
            let a = self.a.as_slice();
            for i in 0..n {
                trace_kinv += a[i * n + i];
                alpha_sq += self.alpha[i] * self.alpha[i];
            }
        }

        // fused pass per component family over the packed triangle
        let mut acc_var = 0.0f64;
        let mut acc_len = vec![0.0f64; n_comps];
        let mut acc_per = vec![0.0f64; n_periods];

        {
            let a = self.a.as_slice();
            let mut idx = 0usize;
            for j in 0..n {
                let col = j * n;
                let alpha_j = self.alpha[j];
                for i in j..n {
                    let mult = if i == j { 1.0 } else { 2.0 };
                    // (alpha alpha^T - K^-1)_{ij}
                    let w = mult * (self.alpha[i] * alpha_j - a[col + i]);
                    acc_var += w * self.k_unit[idx];
                    idx += 1;
                }
            }

            let mut period_idx = 0usize;
            for (ci, comp) in self.comps.iter().enumerate() {
                let l = lengthscales[ci];
                match comp {
                    CompCache::Se { sq } => {
                        let c = variance / (l * l * l);
                        let mut idx = 0usize;
                        let mut acc = 0.0f64;
                        for j in 0..n {
                            let col = j * n;
                            let alpha_j = self.alpha[j];
                            for i in j..n {
                                let mult = if i == j { 1.0 } else { 2.0 };
                                let w = mult * (self.alpha[i] * alpha_j - a[col + i]);
                                acc += w * self.k_unit[idx] * sq[idx];
                                idx += 1;
                            }
                        }
                        acc_len[ci] = acc * c;
                    }
                    CompCache::Periodic { dist, fixed_sin2 } => {
                        let c = 4.0 * variance / (l * l * l);
                        let s2: &[f64] = match fixed_sin2 {
                            Some(s2) => s2,
                            None => &self.scratch_sin2,
                        };
                        let mut idx = 0usize;
                        let mut acc = 0.0f64;
                        for j in 0..n {
                            let col = j * n;
                            let alpha_j = self.alpha[j];
                            for i in j..n {
                                let mult = if i == j { 1.0 } else { 2.0 };
                                let w = mult * (self.alpha[i] * alpha_j - a[col + i]);
                                acc += w * self.k_unit[idx] * s2[idx];
                                idx += 1;
                            }
                        }
                        acc_len[ci] = acc * c;

                        // period gradient, skipped for cached (fixed) periods
                        if fixed_sin2.is_none() {
                            let p = periods[period_idx];
                            let w2 = 2.0 * std::f64::consts::PI / p;
                            let c_p = variance / (l * l * p);
                            let mut idx = 0usize;
                            let mut accp = 0.0f64;
                            for j in 0..n {
                                let col = j * n;
                                let alpha_j = self.alpha[j];
                                for i in j..n {
                                    let mult = if i == j { 1.0 } else { 2.0 };
                                    let w = mult * (self.alpha[i] * alpha_j - a[col + i]);
                                    accp += w * self.k_unit[idx] * dist[idx] * (dist[idx] * w2).sin();
                                    idx += 1;
                                }
                            }
                            acc_per[period_idx] = accp * c_p * w2;
                        }
                        period_idx += 1;
                    }
                }
            }
        }

        grad[0] = 0.5 * acc_var;
        for ci in 0..n_comps {
            grad[1 + ci] = 0.5 * acc_len[ci];
        }
        for pi in 0..n_periods {
            grad[1 + n_comps + pi] = 0.5 * acc_per[pi];
        }
        // mean: dL/dc = 1^T alpha
        grad[1 + n_comps + n_periods] = self.alpha.iter().sum();
        // noise: dK/d(noise) = I
        grad[1 + n_comps + n_periods + 1] = 0.5 * (alpha_sq - trace_kinv);

        Ok((lml, grad))
    }

    /// Kernel structure this engine was built for.
    pub fn kernel_shape(&self) -> &KernelSpec {
        &self.kernel_shape
    }
}
