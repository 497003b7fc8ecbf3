//! Outlier clipping, log transforms and assembly of the design matrix shared
//! by both models.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::ListingTable;
use crate::error::{Error, Result};
use crate::stats;

pub const DEFAULT_CLIP_PERCENTILE: f64 = 0.99;
pub const INTERCEPT: &str = "intercept";

/// Replaces every value above the `percentile` quantile (linear
/// interpolation) with that quantile. Returns the clipped column and the
/// threshold.
pub fn clip_upper(values: &[f64], percentile: f64) -> Result<(Vec<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("column to clip"));
    }
    check_percentile(percentile)?;
    let threshold = stats::percentile(values, percentile);
    Ok((values.iter().map(|&v| v.min(threshold)).collect(), threshold))
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("clip percentile must lie in (0, 1), got {p}")))
    }
}

/// Elementwise `ln(1 + x)`; negative input is an error.
pub fn log1p_column(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&v| {
            if v < 0.0 {
                Err(Error::NegativeValue {
                    column: String::new(),
                    value: v,
                })
            } else {
                Ok(v.ln_1p())
            }
        })
        .collect()
}

/// How one column is mapped into the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub name: String,
    /// Upper clip threshold, for accessibility columns only.
    pub clip_threshold: Option<f64>,
    /// `ln(1 + x)` applied after clipping.
    pub log1p: bool,
}

impl ColumnTransform {
    pub fn apply(&self, v: f64) -> f64 {
        let v = match self.clip_threshold {
            Some(t) => v.min(t),
            None => v,
        };
        if self.log1p {
            if v < 0.0 {
                f64::NAN
            } else {
                v.ln_1p()
            }
        } else {
            v
        }
    }
}

/// Frozen transform: fitted once (on the full table) and re-applied to any
/// split or new data so all rows see identical thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub clip_percentile: f64,
    /// Offset inside the log: values are mapped to `ln(offset + x)`.
    pub log_offset: f64,
    pub target: ColumnTransform,
    pub features: Vec<ColumnTransform>,
}

impl TransformRecord {
    /// Computes clip thresholds for the accessibility (feature) columns of `table`.
    pub fn fit(table: &ListingTable, target: &str, features: &[String], clip_percentile: f64) -> Result<Self> {
        check_percentile(clip_percentile)?;
        if table.is_empty() {
            return Err(Error::Empty("listing table"));
        }
        for name in std::iter::once(target).chain(features.iter().map(String::as_str)) {
            if !table.has_column(name) || name == "id" {
                return Err(Error::UnknownColumn(name.to_string()));
            }
        }
        if features.iter().any(|f| f == target) {
            return Err(Error::InvalidParameter(format!("target `{target}` is also listed as a feature")));
        }
        let mut seen = std::collections::HashSet::new();
        for f in features {
            if !seen.insert(f) || f == INTERCEPT {
                return Err(Error::ColumnCollision(f.clone()));
            }
        }
        let features = features
            .iter()
            .map(|name| {
                let clip_threshold = if table.is_feature_column(name) {
                    let col = table.column(name).expect("checked");
                    Some(clip_upper(&col, clip_percentile)?.1)
                } else {
                    None
                };
                Ok(ColumnTransform {
                    name: name.clone(),
                    clip_threshold,
                    log1p: true,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            clip_percentile,
            log_offset: 1.0,
            target: ColumnTransform {
                name: target.to_string(),
                clip_threshold: None,
                log1p: true,
            },
            features,
        })
    }

    /// Untransformed pass-through, for designs assembled from raw arrays.
    pub fn identity(target: &str, features: &[String]) -> Self {
        let plain = |name: &str| ColumnTransform {
            name: name.to_string(),
            clip_threshold: None,
            log1p: false,
        };
        Self {
            clip_percentile: 1.0,
            log_offset: 0.0,
            target: plain(target),
            features: features.iter().map(|f| plain(f)).collect(),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.features.iter().map(|f| f.name.clone()))
            .collect()
    }

    /// Maps a transformed target value back to the original scale.
    pub fn invert_target(&self, y: f64) -> f64 {
        if self.target.log1p {
            y.exp_m1()
        } else {
            y
        }
    }

    /// Builds the design matrix for `table`, dropping rows that any step makes
    /// non-finite.
    pub fn apply(&self, table: &ListingTable) -> Result<DesignMatrix> {
        let lookup = |name: &str| table.column(name).ok_or_else(|| Error::UnknownColumn(name.to_string()));
        let target = lookup(&self.target.name)?;
        let cols = self
            .features
            .iter()
            .map(|f| lookup(&f.name))
            .collect::<Result<Vec<_>>>()?;
        let p = self.features.len() + 1;
        let ids = table.ids();
        let mut data = Vec::with_capacity(table.len() * p);
        let mut y = Vec::with_capacity(table.len());
        let mut row_ids = Vec::with_capacity(table.len());
        let mut row = vec![0.0; p];
        for i in 0..table.len() {
            row[0] = 1.0;
            for (j, (t, col)) in self.features.iter().zip(&cols).enumerate() {
                row[j + 1] = t.apply(col[i]);
            }
            let yi = self.target.apply(target[i]);
            if yi.is_finite() && row.iter().all(|v| v.is_finite()) {
                data.extend_from_slice(&row);
                y.push(yi);
                row_ids.push(ids[i]);
            }
        }
        let n = y.len();
        let dropped_rows = table.len() - n;
        if dropped_rows > 0 {
            log::info!("design: dropped {dropped_rows} rows with non-finite transformed values");
        }
        let x = Array2::from_shape_vec((n, p), data).expect("row-major fill");
        let mut design = DesignMatrix::from_parts(x, Array1::from(y), self.column_names(), row_ids)?;
        design.transform = self.clone();
        design.dropped_rows = dropped_rows;
        Ok(design)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Numeric predictors (intercept first), target, and provenance of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: Array2<f64>,
    y: Array1<f64>,
    column_names: Vec<String>,
    row_ids: Vec<u64>,
    transform: TransformRecord,
    dropped_rows: usize,
}

impl DesignMatrix {
    /// Validates raw arrays: finite entries, leading all-ones `intercept`
    /// column, `p >= 2` and `n > p`.
    pub fn from_parts(x: Array2<f64>, y: Array1<f64>, column_names: Vec<String>, row_ids: Vec<u64>) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n {
            return Err(Error::LengthMismatch { left: n, right: y.len() });
        }
        if row_ids.len() != n {
            return Err(Error::LengthMismatch { left: n, right: row_ids.len() });
        }
        if column_names.len() != p {
            return Err(Error::LengthMismatch {
                left: p,
                right: column_names.len(),
            });
        }
        if p < 2 || column_names[0] != INTERCEPT {
            return Err(Error::InvalidParameter(
                "design needs an `intercept` column followed by at least one feature".into(),
            ));
        }
        if n <= p {
            return Err(Error::TooFewRows { n, p });
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidParameter("intercept column must be all ones".into()));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("design contains non-finite entries".into()));
        }
        let transform = TransformRecord::identity("y", &column_names[1..]);
        Ok(Self {
            x,
            y,
            column_names,
            row_ids,
            transform,
            dropped_rows: 0,
        })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn transform(&self) -> &TransformRecord {
        &self.transform
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Clips accessibility columns at the 99th percentile, log1p-transforms the
/// target and every feature, and prepends the intercept.
pub fn build_design(table: &ListingTable, target: &str, features: &[String]) -> Result<DesignMatrix> {
    TransformRecord::fit(table, target, features, DEFAULT_CLIP_PERCENTILE)?.apply(table)
}
