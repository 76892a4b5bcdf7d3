//! Datasets: LIBSVM ingestion and the synthetic generators used by the
//! experiments.

use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::rng::rng_stream;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid generator argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major feature storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense { d: usize, values: Vec<f64> },
    /// Compressed sparse rows; column indices are 0-based and strictly
    /// increasing within a row.
    Sparse {
        d: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense { d, .. } | Features::Sparse { d, .. } => *d,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Features::Dense { d, values } => {
                if *d == 0 {
                    0
                } else {
                    values.len() / d
                }
            }
            Features::Sparse { indptr, .. } => indptr.len() - 1,
        }
    }

    /// `⟨row_i, x⟩`
    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Features::Dense { d, values } => crate::linalg::dot(&values[i * d..(i + 1) * d], x),
            Features::Sparse { indptr, indices, values, .. } => {
                let (a, b) = (indptr[i], indptr[i + 1]);
                indices[a..b]
                    .iter()
                    .zip(&values[a..b])
                    .map(|(&j, &v)| v * x[j])
                    .sum()
            }
        }
    }

    /// `out += alpha * row_i`
    #[inline]
    pub fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        match self {
            Features::Dense { d, values } => {
                crate::linalg::axpy(alpha, &values[i * d..(i + 1) * d], out)
            }
            Features::Sparse { indptr, indices, values, .. } => {
                let (a, b) = (indptr[i], indptr[i + 1]);
                for (&j, &v) in indices[a..b].iter().zip(&values[a..b]) {
                    out[j] += alpha * v;
                }
            }
        }
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        match self {
            Features::Dense { d, values } => crate::linalg::norm_sq(&values[i * d..(i + 1) * d]),
            Features::Sparse { indptr, values, .. } => {
                crate::linalg::norm_sq(&values[indptr[i]..indptr[i + 1]])
            }
        }
    }

    /// Materializes row `i` densely.
    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.row_axpy(i, 1.0, &mut out);
        out
    }

    /// Nonzero `(index, value)` pairs of row `i`.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        match self {
            Features::Dense { d, values } => values[i * d..(i + 1) * d]
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect(),
            Features::Sparse { indptr, indices, values, .. } => {
                let (a, b) = (indptr[i], indptr[i + 1]);
                indices[a..b].iter().copied().zip(values[a..b].iter().copied()).collect()
            }
        }
    }

    fn select(&self, rows: &[usize]) -> Features {
        match self {
            Features::Dense { d, values } => {
                let mut out = Vec::with_capacity(rows.len() * d);
                for &i in rows {
                    out.extend_from_slice(&values[i * d..(i + 1) * d]);
                }
                Features::Dense { d: *d, values: out }
            }
            Features::Sparse { d, indptr, indices, values } => {
                let mut p = vec![0];
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for &i in rows {
                    idx.extend_from_slice(&indices[indptr[i]..indptr[i + 1]]);
                    val.extend_from_slice(&values[indptr[i]..indptr[i + 1]]);
                    p.push(idx.len());
                }
                Features::Sparse { d: *d, indptr: p, indices: idx, values: val }
            }
        }
    }
}

/// Which label alphabet a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LabelKind {
    /// `{−1, +1}`, classification with margins.
    Signed,
    /// `{0, 1}`, cross-entropy targets.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub labels: Vec<f64>,
    pub label_kind: LabelKind,
}

impl Dataset {
    pub fn new(features: Features, labels: Vec<f64>, label_kind: LabelKind) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if features.rows() != labels.len() {
            return Err(DataError::Argument(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let ok = match label_kind {
            LabelKind::Signed => labels.iter().all(|&l| l == 1.0 || l == -1.0),
            LabelKind::Binary => labels.iter().all(|&l| l == 1.0 || l == 0.0),
        };
        if !ok {
            return Err(DataError::Argument(format!("labels outside the {label_kind:?} alphabet")));
        }
        Ok(Dataset { features, labels, label_kind })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.dim()
    }

    /// The rows listed in `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            label_kind: self.label_kind,
        }
    }

    /// Keeps the first `n` rows (or all, when `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.n())).collect();
        self.subset(&rows)
    }
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based, strictly
/// increasing indices. Labels `0`/`-1` map to `−1` and `1`/`+1` to `+1`;
/// blank lines and `#` comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    parse_libsvm_with_dim(reader, None)
}

/// As [`parse_libsvm`], forcing the feature dimension to at least `min_dim`
/// (test splits of a9a omit the last column, for instance).
pub fn parse_libsvm_with_dim<R: BufRead>(reader: R, min_dim: Option<usize>) -> Result<Dataset, DataError> {
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let body = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = body.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let err = |msg: String| DataError::Parse { line: line_no, msg };
        let raw: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("malformed label `{label_tok}`")))?;
        let label = if raw == 1.0 {
            1.0
        } else if raw == 0.0 || raw == -1.0 {
            -1.0
        } else {
            return Err(err(format!("label `{label_tok}` is not in {{-1, 0, +1}}")));
        };
        let mut last: usize = 0;
        for tok in tokens {
            let (i_str, v_str) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed token `{tok}`")))?;
            let idx: usize = i_str
                .parse()
                .map_err(|_| err(format!("malformed index in `{tok}`")))?;
            let val: f64 = v_str
                .parse()
                .map_err(|_| err(format!("malformed value in `{tok}`")))?;
            if idx == 0 {
                return Err(err("indices are 1-based; found 0".into()));
            }
            if idx <= last {
                return Err(err(format!("index {idx} does not increase after {last}")));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite value in `{tok}`")));
            }
            last = idx;
            max_index = max_index.max(idx);
            indices.push(idx - 1);
            values.push(val);
        }
        labels.push(label);
        indptr.push(indices.len());
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let d = max_index.max(min_dim.unwrap_or(0));
    Dataset::new(
        Features::Sparse { d, indptr, indices, values },
        labels,
        LabelKind::Signed,
    )
}

/// Writes LIBSVM text; floats use the shortest round-trip representation.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut w: W) -> Result<(), DataError> {
    for i in 0..ds.n() {
        let label = ds.labels[i];
        let tag = match (ds.label_kind, label > 0.0) {
            (_, true) => "+1",
            (LabelKind::Signed, false) => "-1",
            (LabelKind::Binary, false) => "0",
        };
        write!(w, "{tag}")?;
        for (j, v) in ds.features.row_entries(i) {
            write!(w, " {}:{}", j + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Synthetic data for the poisoning experiment: `z_i ~ N(0, I_d)`,
/// `ν_i ~ N(0, noise_var)`, `t_i = 1{σ(z_iᵀθ* + ν_i) > 1/2}` with
/// `θ* ~ N(0, I_d)`. Returns the dataset and `θ*`.
pub fn gen_poison_data(seed: u64, n: usize, d: usize, noise_var: f64) -> Result<(Dataset, Vec<f64>), DataError> {
    if n == 0 || d == 0 {
        return Err(DataError::Argument("n and d must be positive".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(DataError::Argument(format!("noise variance {noise_var} is negative")));
    }
    let mut rng = rng_stream(seed, 0x0d47a);
    let theta: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let noise_sd = noise_var.sqrt();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = values.len();
        values.extend((0..d).map(|_| rng.standard_normal()));
        let logit = crate::linalg::dot(&values[start..], &theta) + noise_sd * rng.standard_normal();
        labels.push(if sigmoid(logit) > 0.5 { 1.0 } else { 0.0 });
    }
    let ds = Dataset::new(Features::Dense { d, values }, labels, LabelKind::Binary)?;
    Ok((ds, theta))
}

/// Sparse binary features with signed labels from a planted logistic model,
/// shaped like a9a (`d = 123`, about 14 active features per row). Used when
/// the real file is not available.
pub fn gen_a9a_like(seed: u64, n: usize) -> Result<Dataset, DataError> {
    const D: usize = 123;
    const ACTIVE: usize = 14;
    if n == 0 {
        return Err(DataError::Argument("n must be positive".into()));
    }
    let mut rng = rng_stream(seed, 0xa9a);
    let w: Vec<f64> = (0..D).map(|_| rng.standard_normal()).collect();
    let mut indptr = vec![0];
    let mut indices = Vec::with_capacity(n * ACTIVE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = rng.sample_without_replacement(D, ACTIVE);
        row.sort_unstable();
        let logit: f64 = row.iter().map(|&j| w[j]).sum::<f64>() * 0.5;
        let label = if rng.uniform() < sigmoid(logit) { 1.0 } else { -1.0 };
        indices.extend_from_slice(&row);
        indptr.push(indices.len());
        labels.push(label);
    }
    let values = vec![1.0; indices.len()];
    Dataset::new(
        Features::Sparse { d: D, indptr, indices, values },
        labels,
        LabelKind::Signed,
    )
}

/// Poisoned training subset, clean training subset and test set.
#[derive(Debug, Clone)]
pub struct PoisonSplit {
    pub poisoned: Dataset,
    pub clean: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle, then floor-rounded sizes: `|test| = ⌊n·test_frac⌋`,
/// `|poisoned| = ⌊|train|·poison_ratio⌋`.
pub fn split_poison(ds: &Dataset, seed: u64, test_frac: f64, poison_ratio: f64) -> Result<PoisonSplit, DataError> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(DataError::Split(format!("test fraction {test_frac} not in (0, 1)")));
    }
    if !(poison_ratio > 0.0 && poison_ratio < 1.0) {
        return Err(DataError::Split(format!("poison ratio {poison_ratio} not in (0, 1)")));
    }
    let n = ds.n();
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    let n_test = (n as f64 * test_frac + 1e-9).floor() as usize;
    let n_train = n - n_test;
    let n_poison = (n_train as f64 * poison_ratio + 1e-9).floor() as usize;
    if n_test == 0 || n_poison == 0 || n_poison == n_train {
        return Err(DataError::Split(format!(
            "degenerate split: test {n_test}, poisoned {n_poison}, clean {}",
            n_train - n_poison
        )));
    }
    let perm = rng_stream(seed, 0x5b1e).permutation(n);
    let (train, test) = perm.split_at(n_train);
    let (poisoned, clean) = train.split_at(n_poison);
    Ok(PoisonSplit {
        poisoned: ds.subset(poisoned),
        clean: ds.subset(clean),
        test: ds.subset(test),
    })
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
