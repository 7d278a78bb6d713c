//! The experiment harness: run the (model x coverage) grid, find threshold
//! coverages, attach emissions to measured cells, and assemble reports.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carbon::{estimate, EmissionsEstimate, PowerModel};
use crate::dataset::{
    evaluation_grid, sample_coverage, validate_coverage_pct, Dataset, DomainSpec, EvalGrid,
};
use crate::error::{Error, Result};
use crate::training::{
    multi_start_fit, multi_start_fit_parallel, start_point_from_quantiles, start_quantiles,
    subseed, DataStats, ModelTemplate, RunRecord, TrainConfig,
};

pub const COVERAGES: [u32; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// Execution mode of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Strictly sequential cells; runtimes feed emissions estimates.
    #[default]
    Measured,
    /// Cells run concurrently; emissions are omitted from the report.
    Fast,
}

/// Which part of the evaluation grid NMSE is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmseRegion {
    /// The whole surface (interpolation and extrapolation).
    #[default]
    Full,
    /// Only points outside the training coverage band. Falls back to the
    /// full grid when fewer than two points remain.
    Uncovered,
}

/// Sweep-wide knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOptions {
    pub threshold: f64,
    pub mode: Mode,
    pub nmse_region: NmseRegion,
    /// Propagated into report metadata.
    pub config_hash: Option<String>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            threshold: 10.0,
            mode: Mode::Measured,
            nmse_region: NmseRegion::Full,
            config_hash: None,
        }
    }
}

enum SourceKind {
    Toy(DomainSpec),
    External(Dataset),
}

/// Training-data source plus the evaluation set NMSE is scored on.
pub struct SweepData {
    eval: EvalGrid,
    source: SourceKind,
}

impl SweepData {
    /// Synthetic pathway: coverage bands are resampled per repeat and NMSE
    /// is scored on the noiseless evaluation grid.
    pub fn toy(domain: &DomainSpec) -> Result<SweepData> {
        domain.validate()?;
        Ok(SweepData {
            eval: evaluation_grid(domain)?,
            source: SourceKind::Toy(domain.clone()),
        })
    }

    /// External pathway: coverage bands slice the empirical x1 range and
    /// NMSE is scored on the full dataset. Repeats reuse the same band
    /// (no resampling is possible).
    pub fn external(data: Dataset) -> Result<SweepData> {
        let eval = EvalGrid {
            inputs: data.inputs.clone(),
            truths: data.targets.clone(),
        };
        Ok(SweepData {
            eval,
            source: SourceKind::External(data),
        })
    }

    fn datasets_for_cell(&self, coverage: u32, repeats: usize, seed: u64) -> Result<Vec<Dataset>> {
        validate_coverage_pct(coverage)?;
        match &self.source {
            SourceKind::Toy(domain) => (0..repeats)
                .map(|r| {
                    sample_coverage(
                        domain,
                        coverage,
                        subseed(seed, "data", &[coverage as u64, r as u64]),
                    )
                })
                .collect(),
            SourceKind::External(data) => {
                let banded = data.band_by_empirical_x1(coverage)?;
                Ok(vec![banded; repeats])
            }
        }
    }

    /// Evaluation set for a cell, respecting the NMSE region policy.
    fn eval_for(&self, coverage: u32, region: NmseRegion) -> EvalGrid {
        match region {
            NmseRegion::Full => self.eval.clone(),
            NmseRegion::Uncovered => {
                let cut = match &self.source {
                    SourceKind::Toy(domain) => domain.band_hi(coverage),
                    SourceKind::External(data) => {
                        let x1 = data.inputs.column(0);
                        let lo = x1.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = x1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        lo + (hi - lo) * coverage as f64 / 100.0
                    }
                };
                let keep: Vec<usize> = (0..self.eval.inputs.nrows())
                    .filter(|&i| self.eval.inputs[[i, 0]] > cut)
                    .collect();
                if keep.len() < 2 {
                    return self.eval.clone();
                }
                let mut inputs = Array2::zeros((keep.len(), self.eval.inputs.ncols()));
                let mut truths = Array1::zeros(keep.len());
                for (r, &i) in keep.iter().enumerate() {
                    inputs.row_mut(r).assign(&self.eval.inputs.row(i));
                    truths[r] = self.eval.truths[i];
                }
                EvalGrid { inputs, truths }
            }
        }
    }
}

/// One (model, coverage) cell: all nine runs plus derived quantities.
#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub model: String,
    pub coverage_pct: u32,
    pub n_train: usize,
    pub runs: Vec<RunRecord>,
    pub total_runtime_s: f64,
    pub emissions: Option<EmissionsEstimate>,
    #[serde(serialize_with = "crate::training::serialize_nmse")]
    pub max_nmse: f64,
    pub failed_runs: usize,
    pub passed: bool,
}

/// Run every configured run of one cell. Measured mode times runs
/// sequentially and attaches an emissions estimate when a power model is
/// supplied.
pub fn run_cell(
    template: &ModelTemplate,
    coverage: u32,
    data: &SweepData,
    config: &TrainConfig,
    opts: &SweepOptions,
    power: Option<&PowerModel>,
) -> Result<CellRecord> {
    let datasets = match data.datasets_for_cell(coverage, config.repeats, config.seed) {
        Ok(d) => d,
        Err(e) => {
            // an unusable band (possible on sparse external data) fails the
            // cell rather than aborting the sweep
            return Ok(failed_cell(template, coverage, config, &e));
        }
    };
    let eval = data.eval_for(coverage, opts.nmse_region);
    let runs = match opts.mode {
        Mode::Measured => multi_start_fit(template, &datasets, &eval, config)?,
        Mode::Fast => multi_start_fit_parallel(template, &datasets, &eval, config)?,
    };
    Ok(assemble_cell(template, coverage, datasets[0].len(), runs, opts, power))
}

fn failed_cell(
    template: &ModelTemplate,
    coverage: u32,
    config: &TrainConfig,
    err: &Error,
) -> CellRecord {
    let runs: Vec<RunRecord> = (0..config.repeats)
        .flat_map(|r| {
            (0..config.starts).map(move |s| RunRecord {
                start_index: s,
                repeat_index: r,
                nmse: f64::INFINITY,
                final_lml: None,
                duration_s: 0.0,
                params: None,
                jittered_iterations: 0,
                error: Some(err.to_string()),
            })
        })
        .collect();
    CellRecord {
        model: template.name.clone(),
        coverage_pct: coverage,
        n_train: 0,
        failed_runs: runs.len(),
        runs,
        total_runtime_s: 0.0,
        emissions: None,
        max_nmse: f64::INFINITY,
        passed: false,
    }
}

fn assemble_cell(
    template: &ModelTemplate,
    coverage: u32,
    n_train: usize,
    runs: Vec<RunRecord>,
    opts: &SweepOptions,
    power: Option<&PowerModel>,
) -> CellRecord {
    let total_runtime_s: f64 = runs.iter().map(|r| r.duration_s).sum();
    let max_nmse = runs.iter().map(|r| r.nmse).fold(f64::NEG_INFINITY, f64::max);
    let failed_runs = runs.iter().filter(|r| r.failed()).count();
    let emissions = match (opts.mode, power) {
        (Mode::Measured, Some(p)) => estimate(total_runtime_s, p).ok(),
        _ => None,
    };
    CellRecord {
        model: template.name.clone(),
        coverage_pct: coverage,
        n_train,
        runs,
        total_runtime_s,
        emissions,
        max_nmse,
        failed_runs,
        passed: max_nmse <= opts.threshold,
    }
}

/// Result of a threshold scan: the first passing coverage (if any) and
/// every cell that was computed on the way.
#[derive(Debug)]
pub struct ThresholdSearch {
    pub threshold_coverage: Option<u32>,
    pub cells: Vec<CellRecord>,
}

/// Scan coverages 10, 20, ..., 100 in order and stop at the first cell
/// whose worst NMSE meets the threshold.
pub fn find_threshold(
    template: &ModelTemplate,
    data: &SweepData,
    config: &TrainConfig,
    opts: &SweepOptions,
    power: Option<&PowerModel>,
) -> Result<ThresholdSearch> {
    let mut cells = Vec::new();
    for &coverage in COVERAGES.iter() {
        let cell = run_cell(template, coverage, data, config, opts, power)?;
        let passed = cell.passed;
        cells.push(cell);
        if passed {
            return Ok(ThresholdSearch {
                threshold_coverage: Some(coverage),
                cells,
            });
        }
    }
    Ok(ThresholdSearch {
        threshold_coverage: None,
        cells,
    })
}

/// Sweep-level metadata embedded in reports.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: Option<String>,
    pub nmse_threshold: f64,
    pub mode: Mode,
    pub nmse_region: NmseRegion,
    /// Sequencing guarantee under which runtimes were collected.
    pub execution: String,
    pub train: TrainConfig,
    pub power_model: Option<PowerModel>,
}

/// Per-model summary row (the published-table shape).
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub name: String,
    /// Number of hyperparameters optimised (H).
    pub hyperparameters: usize,
    pub threshold_coverage_pct: Option<u32>,
    pub delta_coverage_vs_baseline_pct: Option<f64>,
    pub emissions_at_threshold_gco2e: Option<f64>,
    pub delta_emissions_vs_baseline_pct: Option<f64>,
}

/// Full sweep output: metadata, per-model summaries, and every cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub meta: ReportMeta,
    pub models: Vec<ModelSummary>,
    pub cells: Vec<CellRecord>,
}

/// Run every coverage for every preset (curves stay complete), then derive
/// thresholds and deltas against the first preset.
pub fn full_sweep(
    templates: &[ModelTemplate],
    data: &SweepData,
    config: &TrainConfig,
    opts: &SweepOptions,
    power: Option<&PowerModel>,
) -> Result<SweepReport> {
    if templates.is_empty() {
        return Err(Error::invalid("at least one preset is required"));
    }
    config.validate()?;
    if !(opts.threshold.is_finite() && opts.threshold > 0.0) {
        return Err(Error::invalid("NMSE threshold must be positive"));
    }

    let cells: Vec<CellRecord> = match opts.mode {
        Mode::Measured => {
            let mut out = Vec::with_capacity(templates.len() * COVERAGES.len());
            for template in templates {
                for &coverage in COVERAGES.iter() {
                    out.push(run_cell(template, coverage, data, config, opts, power)?);
                }
            }
            out
        }
        Mode::Fast => {
            let tasks: Vec<(usize, u32)> = (0..templates.len())
                .flat_map(|t| COVERAGES.iter().map(move |&c| (t, c)))
                .collect();
            let mut computed: Vec<(usize, u32, CellRecord)> = tasks
                .par_iter()
                .map(|&(t, c)| {
                    run_cell(&templates[t], c, data, config, opts, None).map(|cell| (t, c, cell))
                })
                .collect::<Result<_>>()?;
            computed.sort_by_key(|&(t, c, _)| (t, c));
            computed.into_iter().map(|(_, _, cell)| cell).collect()
        }
    };

    let models = summarize(templates, &cells);

    Ok(SweepReport {
        meta: ReportMeta {
            seed: config.seed,
            config_hash: opts.config_hash.clone(),
            nmse_threshold: opts.threshold,
            mode: opts.mode,
            nmse_region: opts.nmse_region,
            execution: match opts.mode {
                Mode::Measured => "cells measured strictly sequentially".to_string(),
                Mode::Fast => "cells ran concurrently; runtimes are not comparable".to_string(),
            },
            train: config.clone(),
            power_model: power.cloned(),
        },
        models,
        cells,
    })
}

fn summarize(templates: &[ModelTemplate], cells: &[CellRecord]) -> Vec<ModelSummary> {
    let threshold_of = |name: &str| -> Option<u32> {
        cells
            .iter()
            .filter(|c| c.model == name && c.passed)
            .map(|c| c.coverage_pct)
            .min()
    };
    let emissions_at = |name: &str, coverage: Option<u32>| -> Option<f64> {
        let c = coverage?;
        cells
            .iter()
            .find(|cell| cell.model == name && cell.coverage_pct == c)
            .and_then(|cell| cell.emissions.as_ref())
            .map(|e| e.gco2e)
    };

    let baseline = &templates[0];
    let base_threshold = threshold_of(&baseline.name);
    let base_emissions = emissions_at(&baseline.name, base_threshold);

    templates
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let threshold_coverage_pct = threshold_of(&t.name);
            let emissions_at_threshold_gco2e = emissions_at(&t.name, threshold_coverage_pct);
            let delta_coverage_vs_baseline_pct = if i == 0 {
                base_threshold.map(|_| 0.0)
            } else {
                match (threshold_coverage_pct, base_threshold) {
                    (Some(c), Some(b)) => Some(100.0 * (c as f64 - b as f64) / b as f64),
                    _ => None,
                }
            };
            let delta_emissions_vs_baseline_pct = if i == 0 {
                base_emissions.map(|_| 0.0)
            } else {
                match (emissions_at_threshold_gco2e, base_emissions) {
                    (Some(e), Some(b)) if b > 0.0 => Some(100.0 * (e - b) / b),
                    _ => None,
                }
            };
            ModelSummary {
                name: t.name.clone(),
                hyperparameters: t.free_param_count(),
                threshold_coverage_pct,
                delta_coverage_vs_baseline_pct,
                emissions_at_threshold_gco2e,
                delta_emissions_vs_baseline_pct,
            }
        })
        .collect()
}

/// Outcome of the runtime-scaling probe.
#[derive(Debug, Clone, Serialize)]
pub struct ComplexityProbe {
    /// Least-squares slope of log(runtime) against log(N).
    pub exponent: f64,
    /// (N, measured fit runtime in seconds) per size.
    pub points: Vec<(usize, f64)>,
}

/// Time one full fit at each training size and regress log-runtime on
/// log-size. Sizes must be distinct multiples of 10, at least four of them,
/// spanning at least a 4x range.
pub fn complexity_probe(
    template: &ModelTemplate,
    domain: &DomainSpec,
    sizes: &[usize],
    config: &TrainConfig,
) -> Result<ComplexityProbe> {
    if sizes.len() < 4 {
        return Err(Error::invalid("complexity probe needs at least 4 sizes"));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != sizes.len() {
        return Err(Error::invalid("complexity probe sizes must be distinct"));
    }
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == 0 || sizes.iter().any(|n| n % 10 != 0) {
        return Err(Error::invalid("sizes must be positive multiples of 10"));
    }
    if (max as f64) < 4.0 * min as f64 {
        return Err(Error::invalid("sizes must span at least a 4x range"));
    }

    let mut points = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let probe_domain = DomainSpec {
            points_per_decile: n / 10,
            ..domain.clone()
        };
        let dataset = sample_coverage(&probe_domain, 100, subseed(config.seed, "probe", &[n as u64]))?;
        let stats = DataStats::from_dataset(&dataset);
        let quantiles = start_quantiles(config.seed, 0, template.param_count());
        let start = start_point_from_quantiles(template, &stats, &quantiles)?;
        let (outcome, duration) =
            crate::carbon::timed(|| crate::training::fit(template, &dataset, &start, config));
        outcome?;
        points.push((n, duration));
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(n, t)| ((n as f64).ln(), t.max(1e-12).ln()))
        .collect();
    Ok(ComplexityProbe {
        exponent: fit_loglog_slope(&logs)?,
        points,
    })
}

/// Least-squares slope of y on x.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("slope needs at least two points"));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope undefined for identical x values"));
    }
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn tiny_domain() -> DomainSpec {
        DomainSpec {
            points_per_decile: 4,
            grid_resolution: [10, 10],
            ..DomainSpec::default()
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            iterations: 12,
            seed: 31,
            ..TrainConfig::default()
        }
    }

    fn tiny_templates() -> Vec<ModelTemplate> {
        vec![
            presets::black1(),
            presets::grey1(crate::dataset::SURFACE_PERIOD_X1),
            presets::grey2(crate::dataset::SURFACE_PERIOD_X1),
        ]
    }

    fn fast_opts() -> SweepOptions {
        SweepOptions {
            mode: Mode::Fast,
            ..SweepOptions::default()
        }
    }

    #[test]
    fn cell_has_exactly_nine_runs_and_max_rule() {
        let data = SweepData::toy(&tiny_domain()).unwrap();
        let config = tiny_config();
        let cell = run_cell(
            &presets::black1(),
            20,
            &data,
            &config,
            &fast_opts(),
            None,
        )
        .unwrap();
        assert_eq!(cell.runs.len(), 9);
        assert_eq!(cell.n_train, 8);
        let max = cell.runs.iter().map(|r| r.nmse).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(cell.max_nmse, max);
        assert_eq!(cell.passed, max <= 10.0);
    }

    #[test]
    fn full_sweep_shape_and_baseline_delta() {
        let data = SweepData::toy(&tiny_domain()).unwrap();
        let config = tiny_config();
        let templates = tiny_templates();
        let report = full_sweep(&templates, &data, &config, &fast_opts(), None).unwrap();
        assert_eq!(report.cells.len(), templates.len() * 10);
        assert_eq!(report.models.len(), 3);
        assert_eq!(report.models[0].hyperparameters, 4);
        assert_eq!(report.models[1].hyperparameters, 6);
        assert_eq!(report.models[2].hyperparameters, 5);
        if report.models[0].threshold_coverage_pct.is_some() {
            assert_eq!(report.models[0].delta_coverage_vs_baseline_pct, Some(0.0));
        }
        // fast mode never reports emissions
        assert!(report.cells.iter().all(|c| c.emissions.is_none()));
    }

    #[test]
    fn sweep_is_deterministic_in_nmse() {
        let data = SweepData::toy(&tiny_domain()).unwrap();
        let config = tiny_config();
        let templates = tiny_templates();
        let a = full_sweep(&templates, &data, &config, &fast_opts(), None).unwrap();
        let b = full_sweep(&templates, &data, &config, &fast_opts(), None).unwrap();
        for (ca, cb) in a.cells.iter().zip(b.cells.iter()) {
            assert_eq!(ca.model, cb.model);
            assert_eq!(ca.coverage_pct, cb.coverage_pct);
            let na: Vec<f64> = ca.runs.iter().map(|r| r.nmse).collect();
            let nb: Vec<f64> = cb.runs.iter().map(|r| r.nmse).collect();
            assert_eq!(na, nb);
        }
        for (ma, mb) in a.models.iter().zip(b.models.iter()) {
            assert_eq!(ma.threshold_coverage_pct, mb.threshold_coverage_pct);
        }
    }

    #[test]
    fn threshold_search_stops_at_first_pass() {
        let data = SweepData::toy(&tiny_domain()).unwrap();
        let config = tiny_config();
        let opts = SweepOptions {
            // generous threshold: the first coverage should already pass
            threshold: 1e6,
            ..fast_opts()
        };
        let search = find_threshold(&presets::black1(), &data, &config, &opts, None).unwrap();
        assert_eq!(search.threshold_coverage, Some(10));
        assert_eq!(search.cells.len(), 1);

        // impossible threshold: the scan exhausts every coverage
        let opts = SweepOptions {
            threshold: 1e-12,
            ..fast_opts()
        };
        let search = find_threshold(&presets::black1(), &data, &config, &opts, None).unwrap();
        assert_eq!(search.threshold_coverage, None);
        assert_eq!(search.cells.len(), 10);
    }

    #[test]
    fn threshold_never_exceeds_a_passing_cell() {
        let data = SweepData::toy(&tiny_domain()).unwrap();
        let config = tiny_config();
        let opts = SweepOptions {
            threshold: 50.0,
            ..fast_opts()
        };
        let report = full_sweep(&tiny_templates(), &data, &config, &opts, None).unwrap();
        for m in &report.models {
            if let Some(t) = m.threshold_coverage_pct {
                for cell in report.cells.iter().filter(|c| c.model == m.name && c.passed) {
                    assert!(t <= cell.coverage_pct);
                }
            }
        }
    }

    #[test]
    fn measured_mode_attaches_emissions() {
        let data = SweepData::toy(&tiny_domain()).unwrap();
        let config = tiny_config();
        let power = PowerModel {
            cpu_tdp_w: 65.0,
            cpu_load_factor: 0.5,
            ram_gb: 32.0,
            ram_w_per_gb: 0.375,
            pue: 1.0,
            carbon_intensity_g_per_kwh: 475.0,
        };
        let opts = SweepOptions::default();
        let cell = run_cell(&presets::black1(), 10, &data, &config, &opts, Some(&power)).unwrap();
        let e = cell.emissions.expect("measured mode with power model");
        assert_relative_eq!(e.runtime_s, cell.total_runtime_s, max_relative = 1e-12);
        assert!(e.gco2e > 0.0);
    }

    #[test]
    fn external_data_pathway_bands_and_scores() {
        use ndarray::{Array1, Array2};
        // deterministic grid-like external data over x1 in [0, 1]
        let n = 120;
        let inputs = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                (i % 40) as f64 / 39.0
            } else {
                (i / 40) as f64 - 1.0
            }
        });
        let targets = Array1::from_shape_fn(n, |i| {
            let x1 = inputs[[i, 0]];
            let x2 = inputs[[i, 1]];
            (8.0 * x1).sin() * (1.0 + 0.3 * x2)
        });
        let data = Dataset::new(
            inputs,
            targets,
            crate::dataset::Coverage::External,
            crate::dataset::Provenance::Csv,
        )
        .unwrap();
        let sweep_data = SweepData::external(data).unwrap();
        let config = TrainConfig {
            iterations: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        let cell = run_cell(
            &presets::black1(),
            30,
            &sweep_data,
            &config,
            &fast_opts(),
            None,
        )
        .unwrap();
        assert_eq!(cell.runs.len(), 9);
        assert!(cell.n_train > 0 && cell.n_train < 120);
        // repeats share the band on external data
        assert!(cell.runs.iter().all(|r| !r.nmse.is_nan()));
    }

    #[test]
    fn uncovered_region_shrinks_eval_set() {
        let domain = tiny_domain();
        let data = SweepData::toy(&domain).unwrap();
        let full = data.eval_for(50, NmseRegion::Full);
        let uncovered = data.eval_for(50, NmseRegion::Uncovered);
        assert!(uncovered.inputs.nrows() < full.inputs.nrows());
        let cut = domain.band_hi(50);
        assert!(uncovered.inputs.column(0).iter().all(|&v| v > cut));
        // coverage 100 leaves nothing uncovered; falls back to the full grid
        let at_full = data.eval_for(100, NmseRegion::Uncovered);
        assert_eq!(at_full.inputs.nrows(), full.inputs.nrows());
    }

    #[test]
    fn slope_of_synthetic_cubic_is_three() {
        let points: Vec<(f64, f64)> = [200.0f64, 400.0, 600.0, 800.0, 1000.0]
            .iter()
            .map(|&n| (n.ln(), (1e-9 * n.powi(3)).ln()))
            .collect();
        let slope = fit_loglog_slope(&points).unwrap();
        assert!((slope - 3.0).abs() < 1e-6);
    }

    #[test]
    fn probe_input_validation() {
        let template = presets::black1();
        let domain = tiny_domain();
        let config = tiny_config();
        // identical sizes rejected
        assert!(complexity_probe(&template, &domain, &[40, 40, 80, 160], &config).is_err());
        // too few sizes
        assert!(complexity_probe(&template, &domain, &[40, 80, 160], &config).is_err());
        // insufficient span
        assert!(complexity_probe(&template, &domain, &[40, 50, 60, 70], &config).is_err());
        // slope with identical x rejected
        assert!(fit_loglog_slope(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn probe_runs_on_small_sizes() {
        let template = presets::black1();
        let domain = tiny_domain();
        let config = TrainConfig {
            iterations: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let probe = complexity_probe(&template, &domain, &[20, 40, 60, 80], &config).unwrap();
        assert_eq!(probe.points.len(), 4);
        assert!(probe.exponent.is_finite());
    }
}
