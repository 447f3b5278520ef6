//! Cross-split summaries computed from trace files alone.

use std::fmt::Write as _;
use std::path::Path;

use online_laplace::train::Procedure;

use crate::error::{CliError, CliResult};
use crate::manifest::run_dir;
use crate::run::TRACE_FILE;
use crate::trace;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub dataset: String,
    pub procedure: Procedure,
    pub split: u32,
    pub test_rmse: f64,
    pub test_loglik: f64,
}

/// Sample mean and standard error (`s/√n`, `None` for one sample).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: Option<f64>,
}

pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stderr = (xs.len() > 1).then(|| {
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    MeanStderr { mean, stderr }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub procedure: Procedure,
    pub splits: usize,
    pub rmse: MeanStderr,
    pub loglik: MeanStderr,
}

/// Reads the eval row of every requested run; all absent runs are reported
/// together.
pub fn collect(out_dir: &Path, datasets: &[String], procedures: &[Procedure], splits: &[u32]) -> CliResult<Vec<SplitResult>> {
    let mut found = Vec::new();
    let mut absent = Vec::new();
    for ds in datasets {
        for &p in procedures {
            for &k in splits {
                let path = run_dir(out_dir, ds, p, k).join(TRACE_FILE);
                if !path.exists() {
                    absent.push(format!("{ds}/{}/split{k}", p.as_str()));
                    continue;
                }
                match trace::read(&path)?.eval {
                    Some(e) => found.push(SplitResult {
                        dataset: ds.clone(),
                        procedure: p,
                        split: k,
                        test_rmse: e.test_rmse,
                        test_loglik: e.test_loglik,
                    }),
                    None => absent.push(format!("{ds}/{}/split{k} (trace has no eval row)", p.as_str())),
                }
            }
        }
    }
    if !absent.is_empty() {
        return Err(CliError::missing_artifacts(&absent));
    }
    Ok(found)
}

pub fn summarise(results: &[SplitResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Procedure)> = Vec::new();
    for r in results {
        if !keys.iter().any(|(d, p)| *d == r.dataset && *p == r.procedure) {
            keys.push((r.dataset.clone(), r.procedure));
        }
    }
    keys.into_iter()
        .map(|(dataset, procedure)| {
            let sel: Vec<&SplitResult> = results.iter().filter(|r| r.dataset == dataset && r.procedure == procedure).collect();
            let rmse: Vec<f64> = sel.iter().map(|r| r.test_rmse).collect();
            let ll: Vec<f64> = sel.iter().map(|r| r.test_loglik).collect();
            SummaryRow { dataset, procedure, splits: sel.len(), rmse: mean_stderr(&rmse), loglik: mean_stderr(&ll) }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn per_split_csv(results: &[SplitResult]) -> String {
    let mut s = String::from("dataset,procedure,split,test_rmse,test_loglik\n");
    for r in results {
        let _ = writeln!(s, "{},{},{},{:e},{:e}", r.dataset, r.procedure.as_str(), r.split, r.test_rmse, r.test_loglik);
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("dataset,procedure,splits,test_rmse_mean,test_rmse_stderr,test_loglik_mean,test_loglik_stderr\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.dataset,
            r.procedure.as_str(),
            r.splits,
            cell(Some(r.rmse.mean)),
            cell(r.rmse.stderr),
            cell(Some(r.loglik.mean)),
            cell(r.loglik.stderr)
        );
    }
    s
}

fn pm(v: MeanStderr) -> String {
    match v.stderr {
        Some(se) => format!("{:.4} ± {:.4}", v.mean, se),
        None => format!("{:.4} ± -", v.mean),
    }
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let header = ["dataset", "procedure", "splits", "test RMSE", "test log-lik"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| [r.dataset.clone(), r.procedure.as_str().into(), r.splits.to_string(), pm(r.rmse), pm(r.loglik)])
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut s = fmt_row(&header.map(String::from)) + "\n";
    s += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n");
    for row in &body {
        s += &(fmt_row(row) + "\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(split: u32, rmse: f64, ll: f64) -> SplitResult {
        SplitResult { dataset: "d".into(), procedure: Procedure::Ol, split, test_rmse: rmse, test_loglik: ll }
    }

    #[test]
    fn single_split_has_no_stderr() {
        let rows = summarise(&[result(0, 2.0, -1.0)]);
        assert_eq!(rows[0].rmse, MeanStderr { mean: 2.0, stderr: None });
        let csv = summary_csv(&rows);
        assert!(csv.lines().nth(1).unwrap().ends_with(",2e0,,-1e0,"), "{csv}");
        assert!(summary_text(&rows).contains("2.0000 ± -"));
    }

    #[test]
    fn identical_runs_have_zero_stderr() {
        let rs: Vec<_> = (0..10).map(|k| result(k, 3.5, -2.0)).collect();
        let row = &summarise(&rs)[0];
        assert_eq!(row.rmse.stderr, Some(0.0));
        assert_eq!(row.splits, 10);
    }

    #[test]
    fn stderr_matches_hand_computation() {
        // Values 1, 2, 3, 6: mean 3, sample variance 14/3.
        let rs: Vec<_> = [1.0, 2.0, 3.0, 6.0].iter().enumerate().map(|(k, &v)| result(k as u32, v, -v)).collect();
        let row = &summarise(&rs)[0];
        assert_eq!(row.rmse.mean, 3.0);
        assert!((row.rmse.stderr.unwrap() - (14.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(row.loglik.mean, -3.0);
    }

    #[test]
    fn missing_runs_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        let err = collect(dir.path(), &["housing".into()], &[Procedure::Ol, Procedure::Offline], &[0, 1]).unwrap_err();
        assert_eq!(err.message.matches("housing/").count(), 4, "{err}");
    }
}
