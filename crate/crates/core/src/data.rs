//! Partially labeled datasets, their normalization and the empirical
//! second-moment matrices built from them.
//!
//! Labeled rows are stored first: rows `0..n` carry a label, rows `n..N` are
//! the unlabeled sample. Every empirical matrix here is an uncentered average
//! of `x xᵀ` over one of these scopes; centering is a separate, explicit step
//! ([`center_scale`]).

use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Which rows (or which distribution) a second-moment matrix averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Labeled,
    Unlabeled,
    All,
    Population,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scope::Labeled => "labeled",
            Scope::Unlabeled => "unlabeled",
            Scope::All => "all",
            Scope::Population => "population",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" | "lab" => Ok(Scope::Labeled),
            "unlabeled" | "unlab" => Ok(Scope::Unlabeled),
            "all" => Ok(Scope::All),
            "population" => Ok(Scope::Population),
            other => Err(Error::invalid(format!("unknown scope {other:?}"))),
        }
    }
}

/// Almost-sure bounds `|X_ij| <= bx` and `|Y_i| <= by`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub bx: f64,
    pub by: f64,
    /// True when the bounds are empirical maxima rather than known
    /// population bounds.
    pub inferred: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartiallyLabeledDataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    bounds: Option<Bounds>,
}

impl PartiallyLabeledDataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: DVector<f64>,
        bounds: Option<Bounds>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::NoLabeledRows);
        }
        if features.ncols() == 0 {
            return Err(Error::invalid("feature dimension p must be at least 1"));
        }
        if n > features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: n,
            });
        }
        if features.iter().chain(labels.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        if let Some(b) = bounds {
            if !(b.bx >= 0.0 && b.by >= 0.0) {
                return Err(Error::invalid("bounds must be nonnegative"));
            }
            let fx = features.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            let fy = labels.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            // Analytic bounds may sit one rounding step below a sampled value.
            let slack = 1.0 + 1e-12;
            if fx > b.bx * slack || fy > b.by * slack {
                return Err(Error::invalid(format!(
                    "data exceeds the declared bounds (max |X| = {fx}, max |Y| = {fy})"
                )));
            }
        }
        Ok(PartiallyLabeledDataset {
            features,
            labels,
            bounds,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn bounds(&self) -> Option<Bounds> {
        self.bounds
    }

    /// Number of labeled rows.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Total number of rows.
    pub fn n_total(&self) -> usize {
        self.features.nrows()
    }

    /// Number of unlabeled rows.
    pub fn m(&self) -> usize {
        self.n_total() - self.n()
    }

    /// `min(n, m)`.
    pub fn n_star(&self) -> usize {
        self.n().min(self.m())
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn labeled_features(&self) -> DMatrix<f64> {
        self.features.rows(0, self.n()).into_owned()
    }

    pub fn unlabeled_features(&self) -> DMatrix<f64> {
        self.features.rows(self.n(), self.m()).into_owned()
    }

    /// Replaces the bounds with the empirical maxima, flagged as inferred.
    pub fn with_inferred_bounds(mut self) -> Self {
        let bx = self.features.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let by = self.labels.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        self.bounds = Some(Bounds {
            bx,
            by,
            inferred: true,
        });
        self
    }

    pub fn with_bounds(self, bounds: Option<Bounds>) -> Result<Self> {
        PartiallyLabeledDataset::new(self.features, self.labels, bounds)
    }

    fn scope_rows(&self, scope: Scope) -> Result<(usize, usize)> {
        let (start, count) = match scope {
            Scope::Labeled => (0, self.n()),
            Scope::Unlabeled => (self.n(), self.m()),
            Scope::All => (0, self.n_total()),
            Scope::Population => {
                return Err(Error::invalid(
                    "population scope has no rows; use a DesignSpec",
                ))
            }
        };
        if count == 0 {
            return Err(Error::EmptyScope(scope));
        }
        Ok((start, count))
    }
}

/// A symmetric PSD second-moment matrix tagged with its scope.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    scope: Scope,
}

impl GramMatrix {
    /// Wraps a matrix after checking symmetry and positive semi-definiteness.
    pub fn new(matrix: DMatrix<f64>, scope: Scope) -> Result<Self> {
        linalg::ensure_psd(&matrix)?;
        Ok(GramMatrix { matrix, scope })
    }

    pub(crate) fn new_unchecked(matrix: DMatrix<f64>, scope: Scope) -> Self {
        GramMatrix { matrix, scope }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `(1/count) Σ x_i x_iᵀ` over the rows of `scope`.
pub fn gram(d: &PartiallyLabeledDataset, scope: Scope) -> Result<GramMatrix> {
    let (start, count) = d.scope_rows(scope)?;
    let rows = d.features.rows(start, count);
    let mut g = rows.transpose() * rows;
    g /= count as f64;
    // The product is symmetric up to rounding; make it exactly so.
    let g = (&g + g.transpose()) * 0.5;
    Ok(GramMatrix::new_unchecked(g, scope))
}

/// `b = (1/n) X_labᵀ Y`.
pub fn labeled_moment(d: &PartiallyLabeledDataset) -> DVector<f64> {
    let xl = d.features.rows(0, d.n());
    (xl.transpose() * &d.labels) / d.n() as f64
}

/// The affine map applied by [`center_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub feature_means: Vec<f64>,
    /// Root mean square of each centered column over all rows.
    pub feature_scales: Vec<f64>,
    pub label_mean: f64,
    /// Labels are centered only; they are never divided by their scale.
    pub labels_scaled: bool,
}

/// Centers every feature column and scales it to unit mean square over all
/// `N` rows, and centers the labels over the labeled rows.
///
/// Bounds are dropped from the result since they no longer apply to the
/// transformed data.
pub fn center_scale(
    d: &PartiallyLabeledDataset,
) -> Result<(PartiallyLabeledDataset, AffineTransform)> {
    let big_n = d.n_total() as f64;
    let mut x = d.features.clone();
    let mut means = Vec::with_capacity(d.p());
    let mut scales = Vec::with_capacity(d.p());
    for j in 0..d.p() {
        let mut col = x.column_mut(j);
        let mean = col.sum() / big_n;
        col.add_scalar_mut(-mean);
        let ms = col.norm_squared() / big_n;
        let scale = ms.sqrt();
        let magnitude = mean.abs().max(1.0);
        if !(scale > 1e-12 * magnitude) {
            return Err(Error::ConstantColumn { column: j + 1 });
        }
        col /= scale;
        means.push(mean);
        scales.push(scale);
    }
    let label_mean = d.labels.mean();
    let y = d.labels.add_scalar(-label_mean);
    let out = PartiallyLabeledDataset::new(x, y, None)?;
    Ok((
        out,
        AffineTransform {
            feature_means: means,
            feature_scales: scales,
            label_mean,
            labels_scaled: false,
        },
    ))
}

/// Reads the dataset CSV format: header `x1,...,xp,y`, one row per
/// observation, unlabeled rows leave `y` empty. Row numbers in errors count
/// data rows from 1 (the header is not counted); columns count from 1.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<PartiallyLabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<PartiallyLabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let width = header.len();
    if width < 2 {
        return Err(Error::Csv(
            "header must list at least one feature column and y".into(),
        ));
    }
    if &header[width - 1] != "y" {
        return Err(Error::Csv(format!(
            "last header column must be \"y\", found {:?}",
            &header[width - 1]
        )));
    }
    let p = width - 1;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    let mut seen_unlabeled = false;
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() != width {
            return Err(Error::ColumnCount {
                row,
                expected: width,
                found: record.len(),
            });
        }
        for (j, field) in record.iter().take(p).enumerate() {
            values.push(parse_real(field, row, j + 1)?);
        }
        let y = &record[p];
        if y.is_empty() {
            seen_unlabeled = true;
        } else {
            if seen_unlabeled {
                return Err(Error::LabelOrdering { row });
            }
            labels.push(parse_real(y, row, width)?);
        }
        rows += 1;
    }
    if labels.is_empty() {
        return Err(Error::NoLabeledRows);
    }
    let features = DMatrix::from_row_slice(rows, p, &values);
    PartiallyLabeledDataset::new(features, DVector::from_vec(labels), None)
}

fn parse_real(field: &str, row: usize, column: usize) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column,
            value: field.to_string(),
        }),
    }
}

/// Writes `d` in the format accepted by [`load_dataset`].
pub fn write_dataset<W: std::io::Write>(d: &PartiallyLabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)
        .map_err(|e| Error::Csv(e.to_string()))?;
    for i in 0..d.n_total() {
        let mut rec: Vec<String> = d.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(if i < d.n() {
            format!("{:?}", d.labels[i])
        } else {
            String::new()
        });
        w.write_record(&rec)
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
