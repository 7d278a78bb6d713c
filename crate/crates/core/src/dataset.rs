//! Data generation and ingestion: the synthetic benchmark surface,
//! coverage-banded sampling, evaluation grids, and CSV files.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True period of the benchmark surface along x1: sin(4 x1) repeats every
/// pi/2. Used to bound or fix the periodic kernel's period.
pub const SURFACE_PERIOD_X1: f64 = std::f64::consts::FRAC_PI_2;

/// Benchmark surface: y = sqrt(|x2|) * sin(4 x1).
pub fn toy_surface(x1: f64, x2: f64) -> f64 {
    x2.abs().sqrt() * (4.0 * x1).sin()
}

/// Which slice of the input space a dataset was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coverage {
    /// Contiguous band covering the first `pct`% of the x1 range.
    Percent(u32),
    /// Externally supplied data; banding uses the empirical x1 range.
    External,
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::Percent(p) => write!(f, "{p}%"),
            Coverage::External => write!(f, "external"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Toy,
    Csv,
}

/// Training data: N input points with targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
    pub coverage: Coverage,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        targets: Array1<f64>,
        coverage: Coverage,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one point"));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::invalid(format!(
                "inputs have {} rows but targets have {} entries",
                inputs.nrows(),
                targets.len()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset {
            inputs,
            targets,
            coverage,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Keep only the rows whose x1 lies in the first `pct`% of the empirical
    /// x1 range. This is the banding rule for external data.
    pub fn band_by_empirical_x1(&self, pct: u32) -> Result<Dataset> {
        validate_coverage_pct(pct)?;
        let x1 = self.inputs.column(0);
        let lo = x1.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cut = lo + (hi - lo) * pct as f64 / 100.0;
        let keep: Vec<usize> = (0..self.len()).filter(|&i| x1[i] <= cut).collect();
        if keep.is_empty() {
            return Err(Error::invalid(format!(
                "no data points fall inside the {pct}% x1 band"
            )));
        }
        let mut inputs = Array2::zeros((keep.len(), self.dim()));
        let mut targets = Array1::zeros(keep.len());
        for (r, &i) in keep.iter().enumerate() {
            inputs.row_mut(r).assign(&self.inputs.row(i));
            targets[r] = self.targets[i];
        }
        Dataset::new(inputs, targets, Coverage::Percent(pct), self.provenance)
    }
}

/// Geometry and sampling density of the synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x1_range: [f64; 2],
    pub x2_range: [f64; 2],
    #[serde(default = "default_points_per_decile")]
    pub points_per_decile: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: [usize; 2],
}

fn default_points_per_decile() -> usize {
    100
}

fn default_noise_sd() -> f64 {
    0.05
}

fn default_grid_resolution() -> [usize; 2] {
    [50, 50]
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            x1_range: [0.0, 10.0],
            x2_range: [-5.0, 5.0],
            points_per_decile: default_points_per_decile(),
            noise_sd: default_noise_sd(),
            grid_resolution: default_grid_resolution(),
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x1_range", self.x1_range), ("x2_range", self.x2_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(Error::invalid(format!("{name} must satisfy lo < hi, got {r:?}")));
            }
        }
        let span = self.x1_range[1] - self.x1_range[0];
        if span < 3.0 * SURFACE_PERIOD_X1 {
            return Err(Error::invalid(format!(
                "x1 range must span at least three surface periods ({:.4}), got {span:.4}",
                3.0 * SURFACE_PERIOD_X1
            )));
        }
        if self.points_per_decile == 0 {
            return Err(Error::invalid("points_per_decile must be positive"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be non-negative"));
        }
        if self.grid_resolution.iter().any(|&r| r == 0) {
            return Err(Error::invalid("grid_resolution entries must be positive"));
        }
        Ok(())
    }

    /// Upper x1 limit of a coverage band.
    pub fn band_hi(&self, coverage_pct: u32) -> f64 {
        let span = self.x1_range[1] - self.x1_range[0];
        self.x1_range[0] + span * coverage_pct as f64 / 100.0
    }
}

pub(crate) fn validate_coverage_pct(pct: u32) -> Result<()> {
    if !(10..=100).contains(&pct) || pct % 10 != 0 {
        return Err(Error::invalid(format!(
            "coverage must be one of 10, 20, ..., 100, got {pct}"
        )));
    }
    Ok(())
}

/// Draw a training set from the first `coverage_pct`% of the x1 range.
///
/// Inputs are uniform inside the band (full x2 range); targets are the
/// surface plus Gaussian noise. Deterministic in `seed`.
pub fn sample_coverage(domain: &DomainSpec, coverage_pct: u32, seed: u64) -> Result<Dataset> {
    domain.validate()?;
    validate_coverage_pct(coverage_pct)?;
    let n = domain.points_per_decile * (coverage_pct / 10) as usize;
    let band_hi = domain.band_hi(coverage_pct);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut inputs = Array2::zeros((n, 2));
    let mut targets = Array1::zeros(n);
    for i in 0..n {
        let x1 = rng.gen_range(domain.x1_range[0]..band_hi);
        let x2 = rng.gen_range(domain.x2_range[0]..domain.x2_range[1]);
        debug_assert!(x1 >= domain.x1_range[0] && x1 <= band_hi);
        let noise: f64 = rng.sample(StandardNormal);
        inputs[[i, 0]] = x1;
        inputs[[i, 1]] = x2;
        targets[i] = toy_surface(x1, x2) + domain.noise_sd * noise;
    }
    Dataset::new(
        inputs,
        targets,
        Coverage::Percent(coverage_pct),
        Provenance::Toy,
    )
}

/// Regular evaluation grid with noiseless targets.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    pub inputs: Array2<f64>,
    pub truths: Array1<f64>,
}

/// Build the evaluation grid: `grid_resolution` points per axis including
/// the endpoints, row-major with x1 as the slow axis.
pub fn evaluation_grid(domain: &DomainSpec) -> Result<EvalGrid> {
    domain.validate()?;
    let [r1, r2] = domain.grid_resolution;
    let axis = |range: [f64; 2], r: usize, i: usize| -> f64 {
        if r == 1 {
            0.5 * (range[0] + range[1])
        } else {
            range[0] + (range[1] - range[0]) * i as f64 / (r - 1) as f64
        }
    };
    let m = r1 * r2;
    let mut inputs = Array2::zeros((m, 2));
    let mut truths = Array1::zeros(m);
    for i1 in 0..r1 {
        let x1 = axis(domain.x1_range, r1, i1);
        for i2 in 0..r2 {
            let x2 = axis(domain.x2_range, r2, i2);
            let row = i1 * r2 + i2;
            inputs[[row, 0]] = x1;
            inputs[[row, 1]] = x2;
            truths[row] = toy_surface(x1, x2);
        }
    }
    Ok(EvalGrid { inputs, truths })
}

const CSV_HEADER: &str = "x1,x2,y";

/// Load a dataset from a `x1,x2,y` CSV file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = BufReader::new(file);

    let mut inputs: Vec<[f64; 2]> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let trimmed = line.trim_end_matches('\r');
        if idx == 0 {
            if trimmed.trim() != CSV_HEADER {
                return Err(Error::Parse {
                    path: display,
                    line: line_no,
                    detail: format!("expected header `{CSV_HEADER}`, got `{trimmed}`"),
                });
            }
            continue;
        }
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                detail: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        let mut row = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                detail: format!("`{}` is not a number", f.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    detail: format!("non-finite value `{}`", f.trim()),
                });
            }
            row[k] = v;
        }
        inputs.push([row[0], row[1]]);
        targets.push(row[2]);
    }
    if inputs.len() < 2 {
        return Err(Error::Parse {
            path: display,
            line: inputs.len() + 1,
            detail: "need at least 2 data rows".to_string(),
        });
    }
    let n = inputs.len();
    let inputs = Array2::from_shape_fn((n, 2), |(i, j)| inputs[i][j]);
    Dataset::new(
        inputs,
        Array1::from_vec(targets),
        Coverage::External,
        Provenance::Csv,
    )
}

/// Write a dataset in the same `x1,x2,y` schema accepted by [`load_csv`].
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?,
    );
    let mut write = |s: String| -> Result<()> {
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io(display.clone(), e))
    };
    write(format!("{CSV_HEADER}\n"))?;
    for i in 0..data.len() {
        write(format!(
            "{},{},{}\n",
            data.inputs[[i, 0]],
            data.inputs[[i, 1]],
            data.targets[i]
        ))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn test_domain() -> DomainSpec {
        DomainSpec::default()
    }

    #[test]
    fn surface_frozen_values() {
        assert_relative_eq!(
            toy_surface(std::f64::consts::FRAC_PI_8, 4.0),
            2.0,
            max_relative = 1e-12
        );
        assert_eq!(toy_surface(0.0, 3.7), 0.0);
        assert_eq!(toy_surface(1.9, 0.0), 0.0);
    }

    #[test]
    fn surface_period_is_exact() {
        for x1 in [0.3, 1.7, 4.1] {
            assert_relative_eq!(
                toy_surface(x1 + SURFACE_PERIOD_X1, 2.0),
                toy_surface(x1, 2.0),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn sample_counts_and_band() {
        let mut d = test_domain();
        let data = sample_coverage(&d, 100, 1).unwrap();
        assert_eq!(data.len(), 1000);

        d.points_per_decile = 200;
        let data = sample_coverage(&d, 20, 2).unwrap();
        assert_eq!(data.len(), 400);
        let band_hi = d.band_hi(20);
        for i in 0..data.len() {
            let x1 = data.inputs[[i, 0]];
            assert!(x1 >= d.x1_range[0] && x1 <= band_hi, "x1 = {x1} outside band");
            let x2 = data.inputs[[i, 1]];
            assert!(x2 >= d.x2_range[0] && x2 <= d.x2_range[1]);
        }
        assert_eq!(data.coverage, Coverage::Percent(20));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let d = test_domain();
        let a = sample_coverage(&d, 10, 99).unwrap();
        let b = sample_coverage(&d, 10, 99).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.targets, b.targets);
        let c = sample_coverage(&d, 10, 100).unwrap();
        assert_ne!(a.targets, c.targets);
    }

    #[test]
    fn invalid_coverage_rejected() {
        let d = test_domain();
        for pct in [0u32, 5, 15, 110] {
            assert!(sample_coverage(&d, pct, 0).is_err());
        }
    }

    #[test]
    fn grid_corners_and_ordering() {
        let d = DomainSpec {
            x1_range: [0.0, 10.0],
            x2_range: [0.0, 1.0],
            points_per_decile: 1,
            noise_sd: 0.0,
            grid_resolution: [2, 2],
        };
        let g = evaluation_grid(&d).unwrap();
        assert_eq!(g.inputs.nrows(), 4);
        // row-major: x1 slow, x2 fast
        assert_eq!(g.inputs.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g.inputs.row(1).to_vec(), vec![0.0, 1.0]);
        assert_eq!(g.inputs.row(2).to_vec(), vec![10.0, 0.0]);
        assert_eq!(g.inputs.row(3).to_vec(), vec![10.0, 1.0]);

        let d50 = test_domain();
        let g50 = evaluation_grid(&d50).unwrap();
        assert_eq!(g50.inputs.nrows(), 2500);
        // all grid targets at x2 = 0 are 0
        for i in 0..g50.inputs.nrows() {
            if g50.inputs[[i, 1]] == 0.0 {
                assert_eq!(g50.truths[i], 0.0);
            }
        }
    }

    #[test]
    fn domain_rejects_short_x1_span() {
        let d = DomainSpec {
            x1_range: [0.0, 4.0],
            ..test_domain()
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");

        std::fs::write(&path, "x1,x2,y\n0.0,1.0,2.0\n0.5,2.0,3.0\n1.0,0.5,-1.0\n").unwrap();
        let data = load_csv(&path).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.coverage, Coverage::External);
        assert_eq!(data.provenance, Provenance::Csv);

        // roundtrip
        let out = dir.path().join("out.csv");
        write_csv(&out, &data).unwrap();
        let back = load_csv(&out).unwrap();
        assert_eq!(back.inputs, data.inputs);
        assert_eq!(back.targets, data.targets);

        // parse error names the line
        std::fs::write(&path, "x1,x2,y\n0.0,oops,2.0\n1.0,1.0,1.0\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        // missing file
        assert!(load_csv(dir.path().join("nope.csv")).is_err());

        // bad header
        std::fs::write(&path, "a,b,c\n1,2,3\n4,5,6\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_crlf_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crlf.csv");
        std::fs::write(&path, "x1,x2,y\r\n0.0,1.0,2.0\r\n1.0,2.0,3.0\r\n").unwrap();
        assert_eq!(load_csv(&path).unwrap().len(), 2);
    }

    #[test]
    fn external_banding_uses_empirical_range() {
        let inputs = Array2::from_shape_fn((11, 2), |(i, j)| if j == 0 { i as f64 / 10.0 } else { 0.0 });
        let targets = Array1::from_shape_fn(11, |i| i as f64);
        let data = Dataset::new(inputs, targets, Coverage::External, Provenance::Csv).unwrap();
        let banded = data.band_by_empirical_x1(30).unwrap();
        assert_eq!(banded.len(), 4); // x1 in {0.0, 0.1, 0.2, 0.3}
        assert!(banded.inputs.column(0).iter().all(|&v| v <= 0.3 + 1e-12));
    }

    proptest! {
        #[test]
        fn surface_is_odd_in_x1(x1 in -20.0f64..20.0, x2 in -10.0f64..10.0) {
            prop_assert_eq!(toy_surface(x1, x2), -toy_surface(-x1, x2));
        }
    }
}
