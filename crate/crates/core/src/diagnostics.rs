//! Out-of-sample comparison metrics and residual diagnostics: residual
//! distribution, predicted-vs-observed, residual drift against predictions,
//! and global spatial autocorrelation (Moran's I) of residuals.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::KdTree;
use crate::ols::fit_ols;
use crate::plot::{self, Reference};
use crate::preprocess::DesignMatrix;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    /// `None` when the observations have zero variance.
    pub r2: Option<f64>,
    pub residual_mean: f64,
    /// Sample standard deviation of the residuals.
    pub residual_std: f64,
}

/// Residuals are `observed - predicted`.
pub fn residuals(predictions: &[f64], observations: &[f64]) -> Vec<f64> {
    observations.iter().zip(predictions).map(|(o, p)| o - p).collect()
}

pub fn evaluate(predictions: &[f64], observations: &[f64]) -> Result<Metrics> {
    if predictions.len() != observations.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: observations.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if !predictions.iter().chain(observations).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite prediction or observation".into()));
    }
    let n = predictions.len();
    let resid = residuals(predictions, observations);
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let obs_mean = stats::mean(observations);
    let tss: f64 = observations.iter().map(|o| (o - obs_mean) * (o - obs_mean)).sum();
    let mse = rss / n as f64;
    Ok(Metrics {
        n,
        mse,
        rmse: mse.sqrt(),
        r2: (tss > 0.0).then(|| 1.0 - rss / tss),
        residual_mean: stats::mean(&resid),
        residual_std: stats::sample_std(&resid),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
/// A constant input is centred in a unit-wide span.
pub fn residual_histogram(residuals: &[f64], n_bins: usize) -> Result<Histogram> {
    if residuals.is_empty() {
        return Err(Error::Empty("residuals"));
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be at least 1".into()));
    }
    let (mut lo, mut hi) = residuals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0usize; n_bins];
    for &r in residuals {
        let b = (((r - lo) / width).floor() as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// OLS slope of residuals on predictions.
pub fn drift_slope(residuals: &[f64], predictions: &[f64]) -> Result<f64> {
    if residuals.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: residuals.len(),
            right: predictions.len(),
        });
    }
    let n = residuals.len();
    if n < 3 {
        return Err(Error::TooFewRows { n, p: 2 });
    }
    if predictions.iter().all(|&p| p == predictions[0]) {
        return Err(Error::ZeroVariance);
    }
    let mut x = Array2::ones((n, 2));
    for (i, &p) in predictions.iter().enumerate() {
        x[[i, 1]] = p;
    }
    let design = DesignMatrix::from_parts(
        x,
        Array1::from(residuals.to_vec()),
        vec!["intercept".into(), "predicted".into()],
        (0..n as u64).collect(),
    )?;
    match fit_ols(&design) {
        Ok(fit) => Ok(fit.beta[1]),
        Err(Error::RankDeficient { .. }) => Err(Error::ZeroVariance),
        Err(e) => Err(e),
    }
}

/// Row-standardized spatial weights given as neighbour lists (each neighbour
/// of `i` has weight `1 / neighbors[i].len()`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    neighbors: Vec<Vec<usize>>,
}

impl SpatialWeights {
    pub fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::InvalidParameter(format!("observation {i} has no neighbours")));
            }
            if list.iter().any(|&j| j >= n || j == i) {
                return Err(Error::InvalidParameter(format!("observation {i} has an invalid neighbour")));
            }
        }
        Ok(Self { neighbors })
    }

    /// `k` nearest neighbours by great-circle distance (ties by index).
    pub fn knn(locations: &[(f64, f64)], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k_neighbors must be at least 1".into()));
        }
        let mut distinct: Vec<(u64, u64)> = locations.iter().map(|(a, b)| (a.to_bits(), b.to_bits())).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < k + 1 {
            return Err(Error::TooFewLocations {
                needed: k + 1,
                found: distinct.len(),
            });
        }
        let tree = KdTree::from_lat_lon(locations);
        let neighbors = (0..locations.len())
            .into_par_iter()
            .map(|i| tree.knn_excluding(i, k))
            .collect();
        Ok(Self { neighbors })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Moran's I of mean-centred values `z`. With row-standardized weights
    /// the n / ΣΣw factor is one.
    pub fn morans_statistic(&self, z: &[f64]) -> f64 {
        let denom: f64 = z.iter().map(|v| v * v).sum();
        let num: f64 = self
            .neighbors
            .iter()
            .zip(z)
            .map(|(nb, zi)| zi * nb.iter().map(|&j| z[j]).sum::<f64>() / nb.len() as f64)
            .sum();
        num / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub morans_i: f64,
    /// `(1 + #{|I_perm| >= |I_obs|}) / (1 + n_permutations)`.
    pub permutation_p: f64,
    pub n_permutations: usize,
}

/// Moran's I with a seeded permutation test; permutation `p` shuffles with
/// ChaCha stream `(seed, p)`.
pub fn morans_i_with_weights(values: &[f64], weights: &SpatialWeights, n_permutations: usize, seed: u64) -> Result<MoranResult> {
    let n = values.len();
    if weights.len() != n {
        return Err(Error::LengthMismatch { left: n, right: weights.len() });
    }
    if n < 2 || !values.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("Moran's I needs finite values".into()));
    }
    let m = stats::mean(values);
    let z: Vec<f64> = values.iter().map(|v| v - m).collect();
    if z.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVariance);
    }
    let observed = weights.morans_statistic(&z);
    let exceed: usize = (0..n_permutations)
        .into_par_iter()
        .map_init(
            || z.clone(),
            |buf, p| {
                buf.copy_from_slice(&z);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                buf.shuffle(&mut rng);
                usize::from(weights.morans_statistic(buf).abs() >= observed.abs())
            },
        )
        .sum();
    Ok(MoranResult {
        morans_i: observed,
        permutation_p: (1 + exceed) as f64 / (1 + n_permutations) as f64,
        n_permutations,
    })
}

/// Moran's I of `values` under k-nearest-neighbour weights over `locations`.
pub fn morans_i(
    values: &[f64],
    locations: &[(f64, f64)],
    k_neighbors: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<MoranResult> {
    if values.len() != locations.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: locations.len(),
        });
    }
    if values.len() < 10 {
        return Err(Error::TooFewRows { n: values.len(), p: 10 });
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::ZeroVariance);
    }
    let w = SpatialWeights::knn(locations, k_neighbors)?;
    morans_i_with_weights(values, &w, n_permutations, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsParams {
    pub bins: usize,
    pub k_neighbors: usize,
    pub n_permutations: usize,
    pub scatter_cap: usize,
    pub seed: u64,
}

impl Default for DiagnosticsParams {
    fn default() -> Self {
        Self {
            bins: 50,
            k_neighbors: 8,
            n_permutations: 999,
            scatter_cap: 50_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One evaluated row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedRow {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub predicted: f64,
    pub observed: f64,
}

impl EvaluatedRow {
    pub fn residual(&self) -> f64 {
        self.observed - self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSummary {
    pub k_neighbors: usize,
    #[serde(flatten)]
    pub result: MoranResult,
}

/// Metrics and diagnostic artifacts for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_name: String,
    pub split: Split,
    pub metrics: Metrics,
    pub residual_histogram: Histogram,
    /// Seeded sample (at most `scatter_cap` rows, in input order) behind the
    /// scatter artifacts.
    pub sampled: Vec<EvaluatedRow>,
    /// Every evaluated row, for the residual map.
    pub rows: Vec<EvaluatedRow>,
    /// `None` when Moran's I is undefined for this split (too few rows or
    /// constant residuals).
    pub spatial: Option<SpatialSummary>,
    pub drift_slope: Option<f64>,
}

impl EvaluationReport {
    pub fn build(model_name: &str, split: Split, rows: Vec<EvaluatedRow>, params: &DiagnosticsParams) -> Result<Self> {
        let predicted: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
        let observed: Vec<f64> = rows.iter().map(|r| r.observed).collect();
        let metrics = evaluate(&predicted, &observed)?;
        let resid = residuals(&predicted, &observed);
        let residual_histogram = residual_histogram(&resid, params.bins)?;
        let drift = match drift_slope(&resid, &predicted) {
            Ok(s) => Some(s),
            Err(Error::ZeroVariance | Error::TooFewRows { .. }) => None,
            Err(e) => return Err(e),
        };
        let locations: Vec<(f64, f64)> = rows.iter().map(|r| (r.lat, r.lon)).collect();
        let spatial = match morans_i(&resid, &locations, params.k_neighbors, params.n_permutations, params.seed) {
            Ok(result) => Some(SpatialSummary {
                k_neighbors: params.k_neighbors,
                result,
            }),
            Err(Error::ZeroVariance | Error::TooFewRows { .. } | Error::TooFewLocations { .. }) => None,
            Err(e) => return Err(e),
        };
        let sampled = sample_rows(&rows, params.scatter_cap, params.seed);
        Ok(Self {
            model_name: model_name.to_string(),
            split,
            metrics,
            residual_histogram,
            sampled,
            rows,
            spatial,
            drift_slope: drift,
        })
    }
}

fn sample_rows(rows: &[EvaluatedRow], cap: usize, seed: u64) -> Vec<EvaluatedRow> {
    if rows.len() <= cap {
        return rows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..rows.len()).collect();
    let mut picked: Vec<usize> = idx.sample(&mut rng, cap).copied().collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| rows[i]).collect()
}

/// Floats in report files carry 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_else(|| "NA".to_string())
}

pub const REPORT_FILES: [&str; 10] = [
    "metrics.csv",
    "residual_histogram.csv",
    "pred_vs_obs.csv",
    "resid_vs_pred.csv",
    "spatial_residuals.csv",
    "residual_histogram.svg",
    "pred_vs_obs.svg",
    "resid_vs_pred.svg",
    "spatial_residuals.svg",
    "report.json",
];

/// Directory for one report: `<out>/<model>/<split>`.
pub fn report_dir(out_dir: &Path, model_name: &str, split: Split) -> PathBuf {
    out_dir.join(model_name).join(split.to_string())
}

/// Writes the report's CSV, SVG and JSON files under `<out>/<model>/<split>/`.
pub fn emit_report(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = report_dir(out_dir, &report.model_name, report.split);
    std::fs::create_dir_all(&dir)?;
    let path = |name: &str| dir.join(name);

    let m = &report.metrics;
    let spatial = report.spatial.as_ref();
    let mut w = csv::Writer::from_path(path("metrics.csv"))?;
    w.write_record(["metric", "value"])?;
    let rows: Vec<(&str, String)> = vec![
        ("model", report.model_name.clone()),
        ("split", report.split.to_string()),
        ("n", m.n.to_string()),
        ("mse", fmt_float(m.mse)),
        ("rmse", fmt_float(m.rmse)),
        ("r2", fmt_opt(m.r2)),
        ("residual_mean", fmt_float(m.residual_mean)),
        ("residual_std", fmt_float(m.residual_std)),
        ("drift_slope", fmt_opt(report.drift_slope)),
        ("morans_i", fmt_opt(spatial.map(|s| s.result.morans_i))),
        ("permutation_p", fmt_opt(spatial.map(|s| s.result.permutation_p))),
        (
            "n_permutations",
            spatial.map(|s| s.result.n_permutations.to_string()).unwrap_or_else(|| "NA".into()),
        ),
        (
            "k_neighbors",
            spatial.map(|s| s.k_neighbors.to_string()).unwrap_or_else(|| "NA".into()),
        ),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;

    let h = &report.residual_histogram;
    let mut w = csv::Writer::from_path(path("residual_histogram.csv"))?;
    w.write_record(["bin", "lower", "upper", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([i.to_string(), fmt_float(h.edges[i]), fmt_float(h.edges[i + 1]), c.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("pred_vs_obs.csv"))?;
    w.write_record(["id", "predicted", "observed"])?;
    for r in &report.sampled {
        w.write_record([r.id.to_string(), fmt_float(r.predicted), fmt_float(r.observed)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("resid_vs_pred.csv"))?;
    w.write_record(["id", "residual", "predicted"])?;
    for r in &report.sampled {
        w.write_record([r.id.to_string(), fmt_float(r.residual()), fmt_float(r.predicted)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("spatial_residuals.csv"))?;
    w.write_record(["id", "lat", "lon", "residual"])?;
    for r in &report.rows {
        w.write_record([r.id.to_string(), fmt_float(r.lat), fmt_float(r.lon), fmt_float(r.residual())])?;
    }
    w.flush()?;

    let label = format!("{} ({})", report.model_name, report.split);
    std::fs::write(
        path("residual_histogram.svg"),
        plot::histogram_svg(&h.edges, &h.counts, &format!("Distribution of residuals: {label}"), "residual"),
    )?;
    let pred_obs: Vec<(f64, f64)> = report.sampled.iter().map(|r| (r.observed, r.predicted)).collect();
    std::fs::write(
        path("pred_vs_obs.svg"),
        plot::scatter_svg(&pred_obs, &format!("Predicted vs observed: {label}"), "observed", "predicted", Reference::Diagonal),
    )?;
    let resid_pred: Vec<(f64, f64)> = report.sampled.iter().map(|r| (r.predicted, r.residual())).collect();
    std::fs::write(
        path("resid_vs_pred.svg"),
        plot::scatter_svg(
            &resid_pred,
            &format!("Residuals vs predicted: {label}"),
            "predicted",
            "residual",
            Reference::Horizontal(0.0),
        ),
    )?;
    let map: Vec<(f64, f64, f64)> = report.rows.iter().map(|r| (r.lat, r.lon, r.residual())).collect();
    std::fs::write(
        path("spatial_residuals.svg"),
        plot::residual_map_svg(&map, &format!("Spatial pattern of residuals: {label}")),
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        model_name: &'a str,
        split: Split,
        metrics: &'a Metrics,
        drift_slope: Option<f64>,
        spatial: Option<&'a SpatialSummary>,
        residual_histogram: &'a Histogram,
        sampled_rows: usize,
    }
    let summary = Summary {
        model_name: &report.model_name,
        split: report.split,
        metrics: m,
        drift_slope: report.drift_slope,
        spatial,
        residual_histogram: h,
        sampled_rows: report.sampled.len(),
    };
    std::fs::write(path("report.json"), serde_json::to_string_pretty(&summary)?)?;

    Ok(REPORT_FILES.iter().map(|f| path(f)).collect())
}
