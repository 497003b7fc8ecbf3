//! Ordinary least squares via Householder QR, with classical iid-error
//! inference.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;

/// Relative threshold on |R_jj| / max |R_ii| below which a column is
/// considered linearly dependent on the preceding ones.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `None` where the standard error is zero.
    pub t_stats: Vec<Option<f64>>,
    /// RSS / (n - p).
    pub sigma2: f64,
    pub r2: f64,
    pub adj_r2: f64,
    /// RSS / n.
    pub mse: f64,
    pub rmse: f64,
    pub n: usize,
    pub p: usize,
}

/// Householder QR of a column-major copy of `x`. Returns the columns of R's
/// upper triangle (`r[j][i]` for `i <= j`) and Qᵀy.
fn householder_qr(x: ArrayView2<f64>, y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, p) = x.dim();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).to_vec()).collect();
    let mut qty = y.to_vec();
    let mut v = vec![0.0; n];
    for j in 0..p {
        let norm = cols[j][j..].iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if cols[j][j] > 0.0 { -norm } else { norm };
        v[j..].copy_from_slice(&cols[j][j..]);
        v[j] -= alpha;
        let vnorm2: f64 = v[j..].iter().map(|a| a * a).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |target: &mut [f64]| {
            let dot: f64 = v[j..].iter().zip(&target[j..]).map(|(a, b)| a * b).sum();
            let scale = 2.0 * dot / vnorm2;
            for (t, vi) in target[j..].iter_mut().zip(&v[j..]) {
                *t -= scale * vi;
            }
        };
        for col in cols.iter_mut().skip(j + 1) {
            reflect(col);
        }
        reflect(&mut qty);
        cols[j][j] = alpha;
        for a in cols[j][j + 1..].iter_mut() {
            *a = 0.0;
        }
    }
    (cols, qty)
}

/// Least-squares fit of `design.y` on `design.x`.
pub fn fit_ols(design: &DesignMatrix) -> Result<OlsFit> {
    let x = design.x().view();
    let y = design.y().as_slice().expect("contiguous target").to_vec();
    let (n, p) = x.dim();
    if n <= p {
        return Err(Error::TooFewRows { n, p });
    }
    let (r, qty) = householder_qr(x, &y);
    let diag: Vec<f64> = (0..p).map(|j| r[j][j].abs()).collect();
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    let deficient: Vec<String> = diag
        .iter()
        .enumerate()
        .filter(|&(_, &d)| max_diag == 0.0 || d <= RANK_TOLERANCE * max_diag)
        .map(|(j, _)| design.column_names()[j].clone())
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }

    // Back substitution R beta = (Qᵀy)[..p].
    let mut beta = vec![0.0; p];
    for j in (0..p).rev() {
        let mut s = qty[j];
        for k in j + 1..p {
            s -= r[k][j] * beta[k];
        }
        beta[j] = s / r[j][j];
    }

    // R⁻¹ column by column; diag((XᵀX)⁻¹) = row sums of squares of R⁻¹.
    let mut rinv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in i + 1..=c {
                s -= r[k][i] * rinv[c][k];
            }
            rinv[c][i] = s / r[i][i];
        }
    }
    let xtx_inv_diag: Vec<f64> = (0..p)
        .map(|i| (i..p).map(|c| rinv[c][i] * rinv[c][i]).sum())
        .collect();

    let fitted = x.dot(&ndarray::Array1::from(beta.clone()));
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p) as f64;
    let sigma2 = rss / (n - p) as f64;
    let std_errors: Vec<f64> = xtx_inv_diag.iter().map(|d| (sigma2 * d).sqrt()).collect();
    let t_stats = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| (*se > 0.0).then(|| b / se))
        .collect();
    let mse = rss / n as f64;
    Ok(OlsFit {
        column_names: design.column_names().to_vec(),
        beta,
        std_errors,
        t_stats,
        sigma2,
        r2,
        adj_r2,
        mse,
        rmse: mse.sqrt(),
        n,
        p,
    })
}

pub(crate) fn check_columns(expected: &[String], found: &[String]) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ColumnMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        })
    }
}

/// `X_new · β̂` for a design whose columns match the fit.
pub fn predict_ols(fit: &OlsFit, design: &DesignMatrix) -> Result<Vec<f64>> {
    check_columns(&fit.column_names, design.column_names())?;
    Ok(fit.predict_rows(design.x().view()))
}

impl OlsFit {
    /// Predictions for raw rows already in the fit's column order.
    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|row| row.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
            .collect()
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

    /// Coefficient table `name,coefficient,std_error,t_stat`.
    pub fn write_coefficients(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "coefficient", "std_error", "t_stat"])?;
        for j in 0..self.p {
            w.write_record([
                self.column_names[j].clone(),
                format!("{:.16e}", self.beta[j]),
                format!("{:.16e}", self.std_errors[j]),
                self.t_stats[j].map(|t| format!("{t:.16e}")).unwrap_or_else(|| "NA".into()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Xᵀe for residuals `e = y - Xβ̂`, used to check the normal equations.
pub fn normal_equation_residual(x: &Array2<f64>, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let fitted = x.dot(&ndarray::ArrayView1::from(beta));
    let e: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    x.t().dot(&ndarray::ArrayView1::from(&e)).to_vec()
}
