//! Report emission: `report.json`, `summary.csv`, `curves.csv`, and the
//! printed summary table.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sweep::SweepReport;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let display = path.display().to_string();
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(display, e))?,
    ))
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Full report structure as JSON.
pub fn write_report_json(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, report)
        .map_err(|e| Error::io(path.display().to_string(), e.into()))?;
    out.write_all(b"\n")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// One row per model: threshold coverage, emissions, and deltas against the
/// baseline (the published-table shape).
pub fn write_summary_csv(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = create(path)?;
    let mut text = String::from(
        "model,hyperparameters,threshold_coverage_pct,delta_coverage_vs_baseline_pct,emissions_gco2e,delta_emissions_vs_baseline_pct\n",
    );
    for m in &report.models {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            m.name,
            m.hyperparameters,
            opt(&m.threshold_coverage_pct),
            opt(&m.delta_coverage_vs_baseline_pct),
            opt(&m.emissions_at_threshold_gco2e),
            opt(&m.delta_emissions_vs_baseline_pct),
        );
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(display, e))
}

/// One row per run: the coverage-vs-runtime curve data.
pub fn write_curves_csv(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = create(path)?;
    let mut text =
        String::from("model,coverage_pct,run_index,start_index,repeat_index,nmse,runtime_s\n");
    for cell in &report.cells {
        for (run_index, run) in cell.runs.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{}",
                cell.model,
                cell.coverage_pct,
                run_index,
                run.start_index,
                run.repeat_index,
                run.nmse,
                run.duration_s,
            );
        }
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(display, e))
}

/// Human-readable summary for standard output.
pub fn summary_table(report: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>3} {:>12} {:>12} {:>16} {:>14}",
        "model", "H", "coverage(%)", "Δcov(%)", "emissions(g)", "Δemissions(%)"
    );
    for m in &report.models {
        let fmt_f = |v: &Option<f64>| -> String {
            v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".to_string())
        };
        let _ = writeln!(
            s,
            "{:<10} {:>3} {:>12} {:>12} {:>16} {:>14}",
            m.name,
            m.hyperparameters,
            m.threshold_coverage_pct
                .map(|c| c.to_string())
                .unwrap_or_else(|| "none".to_string()),
            fmt_f(&m.delta_coverage_vs_baseline_pct),
            fmt_f(&m.emissions_at_threshold_gco2e),
            fmt_f(&m.delta_emissions_vs_baseline_pct),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DomainSpec;
    use crate::presets;
    use crate::sweep::{full_sweep, Mode, SweepData, SweepOptions, COVERAGES};
    use crate::training::TrainConfig;

    fn tiny_report() -> SweepReport {
        let domain = DomainSpec {
            points_per_decile: 3,
            grid_resolution: [8, 8],
            ..DomainSpec::default()
        };
        let data = SweepData::toy(&domain).unwrap();
        let config = TrainConfig {
            iterations: 6,
            seed: 1,
            ..TrainConfig::default()
        };
        let opts = SweepOptions {
            mode: Mode::Fast,
            ..SweepOptions::default()
        };
        full_sweep(
            &[presets::black1(), presets::grey2(crate::dataset::SURFACE_PERIOD_X1)],
            &data,
            &config,
            &opts,
            None,
        )
        .unwrap()
    }

    #[test]
    fn writers_produce_expected_shapes() {
        let report = tiny_report();
        let dir = tempfile::tempdir().unwrap();

        let json_path = dir.path().join("report.json");
        write_report_json(&report, &json_path).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed["cells"].as_array().unwrap().len(), 2 * COVERAGES.len());
        assert_eq!(parsed["models"].as_array().unwrap().len(), 2);

        let summary_path = dir.path().join("summary.csv");
        write_summary_csv(&report, &summary_path).unwrap();
        let text = std::fs::read_to_string(&summary_path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("model,hyperparameters,threshold_coverage_pct"));

        let curves_path = dir.path().join("curves.csv");
        write_curves_csv(&report, &curves_path).unwrap();
        let text = std::fs::read_to_string(&curves_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * COVERAGES.len() * 9);

        let table = summary_table(&report);
        assert!(table.contains("Black-1"));
        assert!(table.contains("Grey-2"));
    }
}
