//! Aggregation of finished runs: seed-averaged learning curves,
//! steps-to-threshold tables against an expert reference, and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

/// One run directory's evaluation rows.
#[derive(Debug, Clone)]
pub struct RunCurve {
    pub label: String,
    pub env: String,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub returns: Vec<f64>,
}

/// Everything reported for one algorithm label.
#[derive(Debug, Clone)]
pub struct LabelReport {
    pub label: String,
    pub seeds: Vec<u64>,
    pub steps: Vec<usize>,
    /// Per-seed evaluation returns, indexed `[seed][row]`.
    pub per_seed_returns: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `steps_to_threshold[t][s]`: first evaluation step at which seed `s`
    /// reached threshold `t` of the expert return; none means never.
    pub steps_to_threshold: Vec<Vec<Option<usize>>>,
    pub median_steps_to_threshold: Vec<Option<usize>>,
    pub final_mean: f64,
    pub final_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub env: String,
    pub expert_return: f64,
    pub thresholds: Vec<f64>,
    pub labels: Vec<LabelReport>,
}

fn parse_resolved_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

/// Reads `metrics.csv` + `config.resolved` from one run directory.
pub fn load_run_curve(dir: &Path) -> Result<RunCurve> {
    let cfg = parse_resolved_config(&dir.join("config.resolved"))?;
    let get = |key: &str| {
        cfg.get(key).cloned().ok_or_else(|| {
            Error::Config(format!("{} lacks '{key}' in config.resolved", dir.display()))
        })
    };
    let label = get("algo")?;
    let env = get("env")?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Config(format!("bad seed in {}", dir.display())))?;

    let metrics_path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut steps = Vec::new();
    let mut returns = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        let mut cols = line.split(',');
        let (Some(step), Some(ret)) = (cols.next(), cols.next()) else {
            continue;
        };
        let step: usize = step.parse().map_err(|_| Error::Parse {
            path: metrics_path.clone(),
            line: no + 1,
            msg: format!("bad step '{step}'"),
        })?;
        let ret: f64 = ret.parse().map_err(|_| Error::Parse {
            path: metrics_path.clone(),
            line: no + 1,
            msg: format!("bad return '{ret}'"),
        })?;
        steps.push(step);
        returns.push(ret);
    }
    if steps.is_empty() {
        return Err(Error::Config(format!(
            "{} has no evaluation rows",
            metrics_path.display()
        )));
    }
    Ok(RunCurve {
        label,
        env,
        seed,
        steps,
        returns,
    })
}

fn median_option(values: &[Option<usize>]) -> Option<usize> {
    // Never-reached counts as beyond any finite step count.
    let mut keyed: Vec<u64> = values
        .iter()
        .map(|v| v.map(|s| s as u64).unwrap_or(u64::MAX))
        .collect();
    keyed.sort_unstable();
    let mid = keyed[keyed.len() / 2];
    (mid != u64::MAX).then_some(mid as usize)
}

/// Builds the report from run curves. All runs must share one environment;
/// runs under the same label must share their evaluation grid.
pub fn build_report(
    curves: Vec<RunCurve>,
    expert_return: f64,
    thresholds: &[f64],
) -> Result<ExperimentReport> {
    if curves.is_empty() {
        return Err(Error::Usage("no runs to compare".into()));
    }
    let env = curves[0].env.clone();
    if let Some(other) = curves.iter().find(|c| c.env != env) {
        return Err(Error::Config(format!(
            "mixed environments: '{}' vs '{}'",
            env, other.env
        )));
    }

    let mut grouped: BTreeMap<String, Vec<RunCurve>> = BTreeMap::new();
    for c in curves {
        grouped.entry(c.label.clone()).or_default().push(c);
    }

    let mut labels = Vec::new();
    for (label, mut runs) in grouped {
        runs.sort_by_key(|r| r.seed);
        let steps = runs[0].steps.clone();
        for r in &runs {
            if r.steps != steps {
                return Err(Error::Config(format!(
                    "runs under '{label}' have mismatched evaluation grids"
                )));
            }
        }
        let n = runs.len();
        let rows = steps.len();
        let per_seed_returns: Vec<Vec<f64>> = runs.iter().map(|r| r.returns.clone()).collect();
        let mut mean = vec![0.0; rows];
        let mut stderr = vec![0.0; rows];
        for row in 0..rows {
            let vals: Vec<f64> = per_seed_returns.iter().map(|r| r[row]).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            mean[row] = m;
            if n > 1 {
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
                stderr[row] = (var / n as f64).sqrt();
            }
        }

        let mut steps_to_threshold = Vec::with_capacity(thresholds.len());
        for &t in thresholds {
            let target = t * expert_return;
            let per_seed: Vec<Option<usize>> = per_seed_returns
                .iter()
                .map(|returns| {
                    returns
                        .iter()
                        .position(|&r| r >= target)
                        .map(|idx| steps[idx])
                })
                .collect();
            steps_to_threshold.push(per_seed);
        }
        let median_steps_to_threshold = steps_to_threshold
            .iter()
            .map(|per_seed| median_option(per_seed))
            .collect();

        labels.push(LabelReport {
            label,
            seeds: runs.iter().map(|r| r.seed).collect(),
            steps,
            final_mean: mean[rows - 1],
            final_stderr: stderr[rows - 1],
            per_seed_returns,
            mean,
            stderr,
            steps_to_threshold,
            median_steps_to_threshold,
        });
    }

    Ok(ExperimentReport {
        env,
        expert_return,
        thresholds: thresholds.to_vec(),
        labels,
    })
}

/// Loads the run directories and builds the report in one call.
pub fn compare_runs(
    run_dirs: &[PathBuf],
    expert_return: f64,
    thresholds: &[f64],
) -> Result<ExperimentReport> {
    let curves = run_dirs
        .iter()
        .map(|d| load_run_curve(d))
        .collect::<Result<Vec<_>>>()?;
    build_report(curves, expert_return, thresholds)
}

fn fmt_steps(v: Option<usize>) -> String {
    v.map(|s| s.to_string()).unwrap_or_else(|| "NA".into())
}

/// Renders the text table.
pub fn format_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "env: {}", report.env);
    let _ = writeln!(out, "expert mean return: {}", report.expert_return);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<14} {:>10} {:>12}  {}",
        "algorithm", "final", "stderr", "steps to expert fraction (per seed; median)"
    );
    for label in &report.labels {
        let _ = writeln!(
            out,
            "{:<14} {:>10.3} {:>12.3}",
            label.label, label.final_mean, label.final_stderr
        );
        for (ti, t) in report.thresholds.iter().enumerate() {
            let per_seed: Vec<String> = label.steps_to_threshold[ti]
                .iter()
                .map(|v| fmt_steps(*v))
                .collect();
            let _ = writeln!(
                out,
                "{:<14}   {:>4.0}%: [{}]; median {}",
                "",
                t * 100.0,
                per_seed.join(", "),
                fmt_steps(label.median_steps_to_threshold[ti])
            );
        }
    }
    out
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Writes `report.txt`, `curves.csv`, and `learning_curves.svg`.
pub fn write_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let text_path = out_dir.join("report.txt");
    std::fs::write(&text_path, format_report(report)).map_err(|e| Error::io(&text_path, e))?;

    let csv_path = out_dir.join("curves.csv");
    let mut csv = String::from("label,step,mean_return,stderr\n");
    for label in &report.labels {
        for (i, &step) in label.steps.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                label.label, step, label.mean[i], label.stderr[i]
            );
        }
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let svg_path = out_dir.join("learning_curves.svg");
    plot_curves(report, &svg_path)?;
    Ok(())
}

fn plot_curves(report: &ExperimentReport, path: &Path) -> Result<()> {
    let plot_err = |e: String| Error::Usage(format!("plotting failed: {e}"));
    let max_step = report
        .labels
        .iter()
        .flat_map(|l| l.steps.last().copied())
        .max()
        .unwrap_or(1) as f64;
    let max_ret = report
        .labels
        .iter()
        .flat_map(|l| l.mean.iter().copied())
        .fold(report.expert_return, f64::max)
        * 1.05
        + 1e-9;

    let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption(format!("evaluation return, {}", report.env), ("sans-serif", 22))
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_step, 0.0..max_ret)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("environment steps")
        .y_desc("mean evaluation return")
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;

    // Expert reference line.
    chart
        .draw_series(LineSeries::new(
            [(0.0, report.expert_return), (max_step, report.expert_return)],
            BLUE.stroke_width(2),
        ))
        .map_err(|e| plot_err(e.to_string()))?
        .label("expert")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLUE.stroke_width(2)));

    for (i, label) in report.labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mean_points: Vec<(f64, f64)> = label
            .steps
            .iter()
            .zip(&label.mean)
            .map(|(&s, &m)| (s as f64, m))
            .collect();
        chart
            .draw_series(LineSeries::new(mean_points, color.stroke_width(2)))
            .map_err(|e| plot_err(e.to_string()))?
            .label(label.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        // One-stderr band, drawn as thin envelope lines.
        for sign in [-1.0, 1.0] {
            let band: Vec<(f64, f64)> = label
                .steps
                .iter()
                .zip(label.mean.iter().zip(&label.stderr))
                .map(|(&s, (&m, &se))| (s as f64, m + sign * se))
                .collect();
            chart
                .draw_series(LineSeries::new(band, color.stroke_width(1)))
                .map_err(|e| plot_err(e.to_string()))?;
        }
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(label: &str, seed: u64, returns: &[f64]) -> RunCurve {
        RunCurve {
            label: label.into(),
            env: "pendulum-swingup".into(),
            seed,
            steps: (0..returns.len()).map(|i| i * 100).collect(),
            returns: returns.to_vec(),
        }
    }

    #[test]
    fn never_crossing_yields_na() {
        let report = build_report(
            vec![curve("sac", 0, &[1.0, 2.0, 3.0])],
            100.0,
            &[0.75, 0.95],
        )
        .unwrap();
        let label = &report.labels[0];
        assert_eq!(label.steps_to_threshold[0], vec![None]);
        assert_eq!(label.median_steps_to_threshold, vec![None, None]);
        assert!(format_report(&report).contains("NA"));
    }

    #[test]
    fn constant_curve_at_expert_level_crosses_at_the_first_row() {
        let report = build_report(vec![curve("sac", 0, &[50.0, 50.0, 50.0])], 50.0, &[0.95])
            .unwrap();
        assert_eq!(report.labels[0].steps_to_threshold[0], vec![Some(0)]);
    }

    #[test]
    fn identical_runs_have_zero_standard_error() {
        let report = build_report(
            vec![
                curve("sac", 0, &[1.0, 5.0, 9.0]),
                curve("sac", 1, &[1.0, 5.0, 9.0]),
            ],
            10.0,
            &[0.75],
        )
        .unwrap();
        assert!(report.labels[0].stderr.iter().all(|&s| s == 0.0));
        assert_eq!(report.labels[0].final_stderr, 0.0);
    }

    #[test]
    fn mixed_envs_are_rejected() {
        let mut other = curve("sac", 1, &[1.0]);
        other.env = "pointmass-reach".into();
        let err = build_report(vec![curve("sac", 0, &[1.0]), other], 10.0, &[0.75]).unwrap_err();
        assert!(err.to_string().contains("mixed environments"));
    }

    #[test]
    fn median_handles_na_values() {
        assert_eq!(median_option(&[Some(100), Some(200), None]), Some(200));
        assert_eq!(median_option(&[Some(100), None, None]), None);
        assert_eq!(median_option(&[Some(300)]), Some(300));
    }

    #[test]
    fn thresholds_use_evaluation_rows_in_order() {
        let report = build_report(
            vec![curve("sac-eo", 3, &[0.0, 40.0, 80.0, 90.0])],
            100.0,
            &[0.75],
        )
        .unwrap();
        // 75% of 100 = 75, first reached at row 2 -> step 200.
        assert_eq!(report.labels[0].steps_to_threshold[0], vec![Some(200)]);
    }
}
