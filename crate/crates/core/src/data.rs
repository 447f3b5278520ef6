//! Tabular dataset ingestion, train-only standardisation and seeded
//! train/validation/test splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::MlpArchitecture;
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Raw inputs, `n × d_x`.
    pub x: DenseMatrix,
    /// Raw targets.
    pub y: Vec<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// Comma if the first content line contains one, whitespace otherwise.
    #[default]
    Auto,
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    /// Zero-based column index; negative values count from the end (`-1` is
    /// the last column).
    Index(i64),
    /// Header name.
    Name(String),
}

impl Default for TargetColumn {
    fn default() -> Self {
        TargetColumn::Index(-1)
    }
}

fn split_fields(line: &str, delim: Delimiter) -> Vec<&str> {
    match delim {
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
        _ => line.split_whitespace().collect(),
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "?" | "NA" | "na" | "NaN" | "nan")
}

/// Parses a numeric table. Blank lines and lines starting with `#` are
/// skipped; a first content line with any non-numeric field is a header.
pub fn parse_table(name: &str, text: &str, target: &TargetColumn, delimiter: Delimiter) -> Result<Dataset> {
    parse_table_dropping(name, text, target, delimiter, &[])
}

/// [`parse_table`] that also discards the given zero-based columns (e.g. a
/// second target that would otherwise leak into the features).
pub fn parse_table_dropping(
    name: &str,
    text: &str,
    target: &TargetColumn,
    delimiter: Delimiter,
    drop: &[usize],
) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let first = lines.peek().map(|(_, l)| *l).ok_or_else(|| Error::TooFewRows(format!("{name}: no data rows")))?;
    let delim = match delimiter {
        Delimiter::Auto if first.contains(',') => Delimiter::Comma,
        Delimiter::Auto => Delimiter::Whitespace,
        d => d,
    };
    let first_fields = split_fields(first, delim);
    let header = if first_fields.iter().any(|f| !is_missing(f) && f.parse::<f64>().is_err()) {
        let names = first_fields.iter().map(|s| s.trim_matches('"').to_string()).collect::<Vec<_>>();
        lines.next();
        Some(names)
    } else {
        None
    };
    let ncols = first_fields.len();
    if ncols < 2 {
        return Err(Error::Parse { row: 1, col: 1, message: "need at least one feature and one target column".into() });
    }
    let target_idx = match target {
        TargetColumn::Index(i) if *i < 0 => {
            let k = ncols as i64 + i;
            if k < 0 {
                return Err(Error::InvalidConfig(format!("target column {i} out of range for {ncols} columns")));
            }
            k as usize
        }
        TargetColumn::Index(i) => *i as usize,
        TargetColumn::Name(n) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == n))
            .ok_or_else(|| Error::InvalidConfig(format!("no column named {n:?}")))?,
    };
    if target_idx >= ncols {
        return Err(Error::InvalidConfig(format!("target column {target_idx} out of range for {ncols} columns")));
    }
    if let Some(&c) = drop.iter().find(|&&c| c >= ncols || c == target_idx) {
        return Err(Error::InvalidConfig(format!("cannot drop column {c} (target {target_idx}, {ncols} columns)")));
    }
    let keep = |c: usize| c != target_idx && !drop.contains(&c);
    let nfeat = (0..ncols).filter(|&c| keep(c)).count();
    if nfeat == 0 {
        return Err(Error::InvalidConfig("no feature columns left".into()));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, line) in lines {
        let fields = split_fields(line, delim);
        if fields.len() != ncols {
            return Err(Error::Parse {
                row,
                col: fields.len().min(ncols) + 1,
                message: format!("expected {ncols} fields, found {}", fields.len()),
            });
        }
        for (c, f) in fields.iter().enumerate() {
            if is_missing(f) {
                return Err(Error::MissingValue { row, col: c + 1 });
            }
            let v: f64 = f.parse().map_err(|_| Error::Parse { row, col: c + 1, message: format!("not a number: {f:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, col: c + 1, message: format!("non-finite value {f:?}") });
            }
            if c == target_idx {
                ys.push(v);
            } else if keep(c) {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::TooFewRows(format!("{name}: no data rows")));
    }
    let feature_names = header.map(|h| h.into_iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, s)| s).collect());
    Ok(Dataset {
        name: name.to_string(),
        x: DenseMatrix::from_row_major(n, nfeat, xs)?,
        y: ys,
        feature_names,
    })
}

pub fn load_csv(path: &Path, target: &TargetColumn) -> Result<Dataset> {
    load_with(path, target, Delimiter::Auto)
}

pub fn load_with(path: &Path, target: &TargetColumn, delimiter: Delimiter) -> Result<Dataset> {
    load_dropping(path, target, delimiter, &[])
}

fn load_dropping(path: &Path, target: &TargetColumn, delimiter: Delimiter, drop: &[usize]) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_table_dropping(&name, &text, target, delimiter, drop)
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    /// Relative paths resolve against the dataset root.
    pub path: PathBuf,
    #[serde(default)]
    pub target: TargetColumn,
    #[serde(default)]
    pub delimiter: Delimiter,
    /// Zero-based columns to discard.
    #[serde(default)]
    pub drop: Vec<usize>,
    /// Free-form provenance note (e.g. which target variant was chosen).
    #[serde(default)]
    pub note: Option<String>,
}

/// TOML manifest mapping dataset names to files:
///
/// ```toml
/// [datasets.housing]
/// path = "housing.data"
/// target = -1
/// delimiter = "whitespace"
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { row: 0, col: 0, message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn resolve(&self, name: &str, root: &Path) -> Result<(PathBuf, &DatasetEntry)> {
        let entry = self
            .datasets
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("dataset {name:?} is not in the manifest")))?;
        let path = if entry.path.is_absolute() { entry.path.clone() } else { root.join(&entry.path) };
        Ok((path, entry))
    }

    pub fn load_dataset(&self, name: &str, root: &Path) -> Result<Dataset> {
        let (path, entry) = self.resolve(name, root)?;
        let mut ds = load_dropping(&path, &entry.target, entry.delimiter, &entry.drop)?;
        ds.name = name.to_string();
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub split_index: u32,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub use_validation: bool,
}

impl SplitSpec {
    pub fn new(seed: u64, split_index: u32, use_validation: bool) -> Self {
        Self { seed, split_index, test_fraction: 0.10, val_fraction: 0.10, use_validation }
    }

    /// `(train, val, test)` sizes for `n` rows.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = (self.test_fraction * n as f64).floor() as usize;
        let val = if self.use_validation { (self.val_fraction * (n - test) as f64).floor() as usize } else { 0 };
        (n - test - val, val, test)
    }
}

/// Per-column affine maps fitted on the training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Columns whose training std was zero (their std is forced to 1).
    pub constant_columns: Vec<bool>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    pub fn fit(x: &DenseMatrix, y: &[f64]) -> Self {
        let d = x.cols();
        let mut feature_means = Vec::with_capacity(d);
        let mut feature_stds = Vec::with_capacity(d);
        let mut constant_columns = Vec::with_capacity(d);
        for c in 0..d {
            let (m, s) = mean_std((0..x.rows()).map(|r| x.get(r, c)));
            let constant = !(s > 1e-12 * m.abs().max(1.0));
            feature_means.push(m);
            feature_stds.push(if constant { 1.0 } else { s });
            constant_columns.push(constant);
        }
        let (target_mean, s) = mean_std(y.iter().copied());
        let target_std = if s > 0.0 { s } else { 1.0 };
        Self { feature_means, feature_stds, constant_columns, target_mean, target_std }
    }

    pub fn transform_x(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.feature_means[c]) / self.feature_stds[c];
            }
        }
        out
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.target_mean) / self.target_std).collect()
    }

    pub fn inverse_y(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| v * self.target_std + self.target_mean).collect()
    }
}

/// A standardised portion of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Portion {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    /// Row indices into the source dataset.
    pub indices: Vec<usize>,
}

impl Portion {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Portion,
    pub val: Option<Portion>,
    pub test: Portion,
    pub standardizer: Standardizer,
}

fn gather(ds: &Dataset, idx: &[usize]) -> (DenseMatrix, Vec<f64>) {
    let d = ds.input_dim();
    let mut x = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        x.extend_from_slice(ds.x.row(i));
    }
    let y = idx.iter().map(|&i| ds.y[i]).collect();
    (DenseMatrix::from_row_major(idx.len(), d, x).expect("finite source"), y)
}

/// Seeded split; statistics come from the training rows only.
pub fn make_split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let n = ds.len();
    let (n_train, n_val, n_test) = spec.sizes(n);
    if n_test == 0 || n_train == 0 || (spec.use_validation && n_val == 0) {
        return Err(Error::TooFewRows(format!(
            "{}: {n} rows give train/val/test sizes {n_train}/{n_val}/{n_test}",
            ds.name
        )));
    }
    let perm = CounterRng::derive(spec.seed, "split", u64::from(spec.split_index)).permutation(n);
    let test_idx = perm[..n_test].to_vec();
    let val_idx = perm[n_test..n_test + n_val].to_vec();
    let train_idx = perm[n_test + n_val..].to_vec();

    let (x_train, y_train) = gather(ds, &train_idx);
    let st = Standardizer::fit(&x_train, &y_train);
    let portion = |idx: Vec<usize>| {
        let (x, y) = gather(ds, &idx);
        Portion { x: st.transform_x(&x), y: st.transform_y(&y), indices: idx }
    };
    let train = Portion { x: st.transform_x(&x_train), y: st.transform_y(&y_train), indices: train_idx };
    let val = spec.use_validation.then(|| portion(val_idx));
    let test = portion(test_idx);
    Ok(Split { train, val, test, standardizer: st })
}

/// Teacher-student regression: inputs `N(0, I)`, targets from a random
/// tanh MLP plus Gaussian noise.
pub fn synthetic_teacher(n: usize, input_dim: usize, hidden: usize, noise_std: f64, seed: u64) -> Dataset {
    let arch = MlpArchitecture::new(input_dim, hidden).expect("hidden >= 1");
    let teacher = arch.init_params(seed ^ 0x7EAC_4E55);
    let mut r = CounterRng::derive(seed, "synthetic", 0);
    let xs: Vec<f64> = (0..n * input_dim).map(|_| r.normal()).collect();
    let x = DenseMatrix::from_row_major(n, input_dim, xs).expect("finite");
    let mut y = arch.forward(&teacher, &x).expect("shapes");
    for v in &mut y {
        *v += noise_std * r.normal();
    }
    Dataset { name: "synthetic".into(), x, y, feature_names: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_csv_roundtrip() {
        let text = "a,b,target\n1,2,3\n4.5,-6,7e-1\n0,0,0\n";
        let ds = parse_table("toy", text, &TargetColumn::Name("target".into()), Delimiter::Auto).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.x.as_slice(), &[1.0, 2.0, 4.5, -6.0, 0.0, 0.0]);
        assert_eq!(ds.y, vec![3.0, 0.7, 0.0]);
        assert_eq!(ds.feature_names.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
    }

    #[test]
    fn whitespace_without_header() {
        let text = " 1.0  2.0 3.0\n4.0\t5.0 6.0\n";
        let ds = parse_table("ws", text, &TargetColumn::Index(0), Delimiter::Auto).unwrap();
        assert_eq!(ds.y, vec![1.0, 4.0]);
        assert_eq!(ds.x.as_slice(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn bad_cell_is_located() {
        let text = "1,2,3\n4,x5,6\n";
        match parse_table("bad", text, &TargetColumn::default(), Delimiter::Auto) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        match parse_table("bad", "1,2,3\n4,,6\n", &TargetColumn::default(), Delimiter::Auto) {
            Err(Error::MissingValue { row, col }) => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_table("ragged", "1,2,3\n4,5\n", &TargetColumn::default(), Delimiter::Auto).is_err());
    }

    #[test]
    fn manifest_parses() {
        let m = DatasetManifest::parse(
            "[datasets.yacht]\npath = \"yacht.data\"\ntarget = -1\ndelimiter = \"whitespace\"\n\n[datasets.toy]\npath = \"/abs/toy.csv\"\ntarget = \"y\"\n",
        )
        .unwrap();
        assert_eq!(m.datasets["yacht"].delimiter, Delimiter::Whitespace);
        assert_eq!(m.datasets["toy"].target, TargetColumn::Name("y".into()));
        let (p, _) = m.resolve("yacht", Path::new("/data")).unwrap();
        assert_eq!(p, PathBuf::from("/data/yacht.data"));
        assert!(m.resolve("missing", Path::new("/")).is_err());
    }

    #[test]
    fn dropped_columns_leave_features() {
        let text = "a,b,y1,y2\n1,2,3,4\n5,6,7,8\n";
        let ds = parse_table_dropping("t", text, &TargetColumn::Index(2), Delimiter::Auto, &[3]).unwrap();
        assert_eq!(ds.x.as_slice(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(ds.y, vec![3.0, 7.0]);
        assert_eq!(ds.feature_names.unwrap(), vec!["a", "b"]);
        assert!(parse_table_dropping("t", text, &TargetColumn::Index(2), Delimiter::Auto, &[2]).is_err());
    }

    #[test]
    fn bundled_manifest_parses() {
        let text = include_str!("../../../data/datasets.toml");
        let m = DatasetManifest::parse(text).unwrap();
        assert_eq!(m.datasets["energy"].drop, vec![9]);
        let ds = m.load_dataset("housing", &Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")).unwrap();
        assert_eq!((ds.len(), ds.input_dim()), (506, 13));
    }

    fn toy(n: usize) -> Dataset {
        let mut r = CounterRng::new(1);
        let x: Vec<f64> = (0..n * 3).map(|i| if i % 3 == 2 { 5.0 } else { 10.0 * r.normal() + 3.0 }).collect();
        let y = (0..n).map(|_| r.normal() * 4.0 - 2.0).collect();
        Dataset { name: "toy".into(), x: DenseMatrix::from_row_major(n, 3, x).unwrap(), y, feature_names: None }
    }

    #[test]
    fn split_sizes() {
        let s = make_split(&toy(100), &SplitSpec::new(0, 0, true)).unwrap();
        assert_eq!((s.train.len(), s.val.as_ref().unwrap().len(), s.test.len()), (81, 9, 10));
        let s = make_split(&toy(100), &SplitSpec::new(0, 0, false)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (90, 10));
        assert!(s.val.is_none());
        assert!(matches!(make_split(&toy(9), &SplitSpec::new(0, 0, false)), Err(Error::TooFewRows(_))));
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_seeded() {
        let ds = toy(57);
        let a = make_split(&ds, &SplitSpec::new(3, 0, true)).unwrap();
        let b = make_split(&ds, &SplitSpec::new(3, 0, true)).unwrap();
        let c = make_split(&ds, &SplitSpec::new(3, 1, true)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test.indices, c.test.indices);
        let mut all: Vec<usize> = a.train.indices.iter().chain(&a.val.as_ref().unwrap().indices).chain(&a.test.indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn train_portion_is_standardised_and_stats_ignore_held_out_rows() {
        let ds = toy(80);
        let s = make_split(&ds, &SplitSpec::new(5, 2, true)).unwrap();
        let tr = &s.train;
        for c in 0..2 {
            let (m, sd) = mean_std((0..tr.len()).map(|r| tr.x.get(r, c)));
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        assert!(s.standardizer.constant_columns[2]);
        assert!(!s.standardizer.constant_columns[0]);
        let (m, sd) = mean_std(tr.y.iter().copied());
        assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        // Recompute statistics from the raw training rows only.
        let (raw_x, raw_y) = gather(&ds, &tr.indices);
        assert_eq!(Standardizer::fit(&raw_x, &raw_y), s.standardizer);
        let back = s.standardizer.inverse_y(&s.test.y);
        for (b, &i) in back.iter().zip(&s.test.indices) {
            assert!((b - ds.y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a = synthetic_teacher(20, 4, 5, 0.1, 9);
        assert_eq!(a, synthetic_teacher(20, 4, 5, 0.1, 9));
        assert_ne!(a.y, synthetic_teacher(20, 4, 5, 0.1, 10).y);
    }
}
