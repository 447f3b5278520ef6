//! Trace files: CSV with a `#`-prefixed manifest digest line and a one-line
//! header. Rows are written and flushed one at a time, so an interrupted run
//! leaves a file that parses up to its last complete row.
//!
//! Row kinds:
//! - `step`: one recorded training step;
//! - `best`: offline only, the early-stopping snapshot (`step`, `val_rmse`);
//! - `eval`: test metrics in original target units, with the predictive
//!   hyperparameters in `alpha`/`beta`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use online_laplace::train::TraceRecord;

use crate::error::{CliError, CliResult};

pub const DIGEST_PREFIX: &str = "# manifest-digest: ";

pub const COLUMNS: [&str; 18] = [
    "kind",
    "step",
    "alpha",
    "beta",
    "gamma",
    "gamma_clamped",
    "train_loss",
    "lf",
    "lh",
    "elbo_gap",
    "map_distance",
    "rel_map_distance",
    "grad_norm",
    "fixed_point_residual",
    "train_rmse",
    "val_rmse",
    "test_rmse",
    "test_loglik",
];

/// Shortest round-tripping representation; empty for missing values.
fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path, manifest_digest: &str) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self { path: path.to_path_buf(), out: BufWriter::new(file) };
        w.line(&format!("{DIGEST_PREFIX}{manifest_digest}"))?;
        w.line(&COLUMNS.join(","))?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.out, "{s}").and_then(|_| self.out.flush()).map_err(|e| CliError::io(&self.path, e))
    }

    fn row(&mut self, fields: [String; 18]) -> CliResult<()> {
        self.line(&fields.join(","))
    }

    pub fn step(&mut self, r: &TraceRecord) -> CliResult<()> {
        self.row([
            "step".into(),
            r.step.to_string(),
            num(Some(r.alpha)),
            num(Some(r.beta)),
            num(r.gamma),
            r.gamma_clamped.map(|c| u8::from(c).to_string()).unwrap_or_default(),
            num(Some(r.train_loss)),
            num(r.lf),
            num(r.lh),
            num(r.elbo_gap),
            num(r.map_distance),
            num(r.rel_map_distance),
            num(Some(r.grad_norm)),
            num(r.fixed_point_residual),
            num(Some(r.train_rmse)),
            num(r.val_rmse),
            num(r.test_rmse),
            String::new(),
        ])
    }

    pub fn best(&mut self, step: usize, alpha: f64, beta: f64, val_rmse: f64) -> CliResult<()> {
        let mut f: [String; 18] = Default::default();
        f[0] = "best".into();
        f[1] = step.to_string();
        f[2] = num(Some(alpha));
        f[3] = num(Some(beta));
        f[15] = num(Some(val_rmse));
        self.row(f)
    }

    pub fn eval(&mut self, e: &EvalRow) -> CliResult<()> {
        let mut f: [String; 18] = Default::default();
        f[0] = "eval".into();
        f[1] = e.step.to_string();
        f[2] = num(Some(e.alpha));
        f[3] = num(Some(e.beta));
        f[14] = num(Some(e.train_rmse));
        f[16] = num(Some(e.test_rmse));
        f[17] = num(Some(e.test_loglik));
        self.row(f)
    }
}

/// Final evaluation of a run, in original target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    /// Step whose weights were evaluated.
    pub step: usize,
    pub alpha: f64,
    pub beta: f64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub test_loglik: f64,
}

/// Parsed trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub digest: Option<String>,
    pub steps: Vec<Row>,
    pub best: Option<Row>,
    pub eval: Option<EvalRow>,
}

/// One row with every column parsed; empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub kind: String,
    pub step: usize,
    pub values: Vec<Option<f64>>,
}

impl Row {
    pub fn get(&self, column: &str) -> Option<f64> {
        let i = COLUMNS.iter().position(|c| *c == column)?;
        self.values[i]
    }
}

pub fn parse(text: &str) -> Result<Trace, String> {
    let mut digest = None;
    let mut header_seen = false;
    let mut trace = Trace { digest: None, steps: Vec::new(), best: None, eval: None };
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if let Some(d) = line.strip_prefix(DIGEST_PREFIX) {
            digest = Some(d.trim().to_string());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line != COLUMNS.join(",") {
                return Err(format!("line {lineno}: unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(format!("line {lineno}: {} fields, expected {}", cells.len(), COLUMNS.len()));
        }
        let step = cells[1].parse::<usize>().map_err(|e| format!("line {lineno}: step: {e}"))?;
        let mut values = vec![None; COLUMNS.len()];
        for (i, c) in cells.iter().enumerate().skip(1) {
            if !c.is_empty() {
                values[i] = Some(c.parse::<f64>().map_err(|e| format!("line {lineno}, column {}: {e}", COLUMNS[i]))?);
            }
        }
        let row = Row { kind: cells[0].to_string(), step, values };
        match row.kind.as_str() {
            "step" => trace.steps.push(row),
            "best" => trace.best = Some(row),
            "eval" => {
                let need = |c: &str| row.get(c).ok_or_else(|| format!("line {lineno}: eval row lacks {c}"));
                trace.eval = Some(EvalRow {
                    step,
                    alpha: need("alpha")?,
                    beta: need("beta")?,
                    train_rmse: need("train_rmse")?,
                    test_rmse: need("test_rmse")?,
                    test_loglik: need("test_loglik")?,
                });
            }
            other => return Err(format!("line {lineno}: unknown row kind {other:?}")),
        }
    }
    if !header_seen {
        return Err("no header".into());
    }
    trace.digest = digest;
    Ok(trace)
}

pub fn read(path: &Path) -> CliResult<Trace> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|e| CliError::io(path, e))
}
