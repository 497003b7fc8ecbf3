//! Listing observations: CSV ingestion, descriptive profiles, the seeded
//! train/test split and the synthetic region generator.

mod synth;

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub use synth::{default_coefficients, generate_synthetic_region, GroundTruth, Noise, RegionSpec, SyntheticRegion};

/// Columns every listing carries; feature columns may not reuse these names.
pub const BUILTIN_COLUMNS: [&str; 6] = ["id", "lat", "lon", "rent", "sqft", "rent_sqft"];

const REQUIRED_COLUMNS: [&str; 5] = ["id", "lat", "lon", "rent", "sqft"];

/// One rental listing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub rent: f64,
    pub sqft: f64,
    /// Rent per square foot per month, always `rent / sqft`.
    pub rent_sqft: f64,
}

/// Why a listing was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    NonFinite,
    NonPositive,
    OutOfRange,
}

impl Listing {
    pub fn new(id: u64, lat: f64, lon: f64, rent: f64, sqft: f64) -> std::result::Result<Self, Rejection> {
        if ![lat, lon, rent, sqft].iter().all(|v| v.is_finite()) {
            return Err(Rejection::NonFinite);
        }
        if rent <= 0.0 || sqft <= 0.0 {
            return Err(Rejection::NonPositive);
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Rejection::OutOfRange);
        }
        Ok(Self {
            id,
            lat,
            lon,
            rent,
            sqft,
            rent_sqft: rent / sqft,
        })
    }
}

/// A named numeric column aligned with the listing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Ordered listings plus row-aligned feature columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ListingTable {
    listings: Vec<Listing>,
    columns: Vec<FeatureColumn>,
}

impl ListingTable {
    pub fn new(listings: Vec<Listing>) -> Self {
        Self {
            listings,
            columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.listings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listings.is_empty()
    }

    pub fn listings(&self) -> &[Listing] {
        &self.listings
    }

    pub fn feature_columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn is_feature_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        BUILTIN_COLUMNS.contains(&name) || self.is_feature_column(name)
    }

    /// Adds a feature column. Fails on a name collision or a length mismatch.
    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.add_column(name, values)?;
        Ok(self)
    }

    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.has_column(&name) {
            return Err(Error::ColumnCollision(name));
        }
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: values.len(),
            });
        }
        self.columns.push(FeatureColumn { name, values });
        Ok(())
    }

    /// Values of a built-in field or feature column.
    pub fn column(&self, name: &str) -> Option<Cow<'_, [f64]>> {
        let field: fn(&Listing) -> f64 = match name {
            "id" => |l| l.id as f64,
            "lat" => |l| l.lat,
            "lon" => |l| l.lon,
            "rent" => |l| l.rent,
            "sqft" => |l| l.sqft,
            "rent_sqft" => |l| l.rent_sqft,
            _ => {
                return self
                    .columns
                    .iter()
                    .find(|c| c.name == name)
                    .map(|c| Cow::Borrowed(c.values.as_slice()))
            }
        };
        Some(Cow::Owned(self.listings.iter().map(field).collect()))
    }

    /// New table holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            listings: rows.iter().map(|&r| self.listings[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    name: c.name.clone(),
                    values: rows.iter().map(|&r| c.values[r]).collect(),
                })
                .collect(),
        }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.listings.iter().map(|l| l.id).collect()
    }

    /// Writes `id,lat,lon,rent,sqft,<features...>` with round-trip float formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
        header.extend(self.feature_names());
        w.write_record(&header)?;
        for (i, l) in self.listings.iter().enumerate() {
            let mut rec = vec![
                l.id.to_string(),
                l.lat.to_string(),
                l.lon.to_string(),
                l.rent.to_string(),
                l.sqft.to_string(),
            ];
            rec.extend(self.columns.iter().map(|c| c.values[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row accounting for [`load_listings`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_unparseable: usize,
    pub dropped_non_finite: usize,
    pub dropped_non_positive: usize,
    pub dropped_out_of_range: usize,
    pub dropped_duplicate_id: usize,
}

impl LoadSummary {
    pub fn dropped(&self) -> usize {
        self.rows_read - self.rows_kept
    }
}

impl fmt::Display for LoadSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[load_summary]")?;
        writeln!(f, "rows_read = {}", self.rows_read)?;
        writeln!(f, "rows_kept = {}", self.rows_kept)?;
        writeln!(f, "rows_dropped = {}", self.dropped())?;
        writeln!(f, "dropped_unparseable = {}", self.dropped_unparseable)?;
        writeln!(f, "dropped_non_finite = {}", self.dropped_non_finite)?;
        writeln!(f, "dropped_non_positive = {}", self.dropped_non_positive)?;
        writeln!(f, "dropped_out_of_range = {}", self.dropped_out_of_range)?;
        write!(f, "dropped_duplicate_id = {}", self.dropped_duplicate_id)
    }
}

/// Reads a listings CSV. Columns beyond `id,lat,lon,rent,sqft` become feature
/// columns; a `rent_sqft` column in the file is ignored and recomputed.
pub fn load_listings(path: &Path) -> Result<(ListingTable, LoadSummary)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 5];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = position(name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
    }
    let extra: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !BUILTIN_COLUMNS.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut seen_extra = HashSet::new();
    for (_, name) in &extra {
        if !seen_extra.insert(name.as_str()) {
            return Err(Error::ColumnCollision(name.clone()));
        }
    }

    let mut summary = LoadSummary::default();
    let mut listings = Vec::new();
    let mut extra_values: Vec<Vec<f64>> = vec![Vec::new(); extra.len()];
    let mut ids = HashSet::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        summary.rows_read += 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        let Ok(id) = field(required[0]).parse::<u64>() else {
            summary.dropped_unparseable += 1;
            continue;
        };
        let parsed: Option<Vec<f64>> = required[1..]
            .iter()
            .chain(extra.iter().map(|(i, _)| i))
            .map(|&i| field(i).parse::<f64>().ok())
            .collect();
        let Some(parsed) = parsed else {
            summary.dropped_unparseable += 1;
            continue;
        };
        if parsed[4..].iter().any(|v| !v.is_finite()) {
            summary.dropped_non_finite += 1;
            continue;
        }
        let listing = match Listing::new(id, parsed[0], parsed[1], parsed[2], parsed[3]) {
            Ok(l) => l,
            Err(Rejection::NonFinite) => {
                summary.dropped_non_finite += 1;
                continue;
            }
            Err(Rejection::NonPositive) => {
                summary.dropped_non_positive += 1;
                continue;
            }
            Err(Rejection::OutOfRange) => {
                summary.dropped_out_of_range += 1;
                continue;
            }
        };
        if !ids.insert(id) {
            summary.dropped_duplicate_id += 1;
            continue;
        }
        listings.push(listing);
        for (col, v) in extra_values.iter_mut().zip(&parsed[4..]) {
            col.push(*v);
        }
    }
    summary.rows_kept = listings.len();
    if listings.is_empty() {
        return Err(Error::NoValidRows(path.to_path_buf()));
    }
    let mut table = ListingTable::new(listings);
    for ((_, name), values) in extra.into_iter().zip(extra_values) {
        table.add_column(name, values)?;
    }
    Ok((table, summary))
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 2.0 / 3.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Number of training rows for a table of `n` rows: `floor(fraction * n)`.
    pub fn train_size(&self, n: usize) -> usize {
        // Absorb representation error so that e.g. (2/3) * 3 floors to 2.
        let raw = self.train_fraction * n as f64;
        ((raw + raw.abs() * 1e-12).floor() as usize).min(n)
    }
}

/// Row indices `(train, test)`, each ascending, from a seeded uniform shuffle.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Empty("listing table"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let k = spec.train_size(n);
    let mut train = order[..k].to_vec();
    let mut test = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Disjoint, exhaustive train/test partition of `table`.
pub fn split_dataset(table: &ListingTable, spec: &SplitSpec) -> Result<(ListingTable, ListingTable)> {
    let (train, test) = split_indices(table.len(), spec)?;
    Ok((table.select(&train), table.select(&test)))
}

/// Descriptive statistics of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableStats {
    pub variable: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl VariableStats {
    pub fn of(variable: impl Into<String>, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("profile column"));
        }
        // Moments over the sorted copy so row order cannot change a bit.
        let sorted = stats::sorted_copy(values);
        Ok(Self {
            variable: variable.into(),
            count: values.len(),
            mean: stats::mean(&sorted),
            std: stats::sample_std(&sorted),
            min: sorted[0],
            p25: stats::percentile_sorted(&sorted, 0.25),
            p50: stats::percentile_sorted(&sorted, 0.50),
            p75: stats::percentile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Per-variable profile in the layout `variable,count,mean,std,min,25%,50%,75%,max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsProfile {
    pub variables: Vec<VariableStats>,
}

pub const PROFILE_HEADER: [&str; 9] = ["variable", "count", "mean", "std", "min", "25%", "50%", "75%", "max"];

impl StatsProfile {
    pub fn get(&self, variable: &str) -> Option<&VariableStats> {
        self.variables.iter().find(|v| v.variable == variable)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(PROFILE_HEADER)?;
        for v in &self.variables {
            w.write_record([
                v.variable.clone(),
                v.count.to_string(),
                v.mean.to_string(),
                v.std.to_string(),
                v.min.to_string(),
                v.p25.to_string(),
                v.p50.to_string(),
                v.p75.to_string(),
                v.max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Profiles `rent_sqft`, `sqft` and every feature column.
pub fn profile(table: &ListingTable) -> Result<StatsProfile> {
    if table.is_empty() {
        return Err(Error::Empty("listing table"));
    }
    let mut names = vec!["rent_sqft", "sqft"];
    names.extend(table.feature_names());
    let variables = names
        .into_iter()
        .map(|n| VariableStats::of(n, &table.column(n).expect("known column")))
        .collect::<Result<_>>()?;
    Ok(StatsProfile { variables })
}

/// Maps listing id to row index.
pub fn id_index(table: &ListingTable) -> HashMap<u64, usize> {
    table
        .listings()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn table(n: usize) -> ListingTable {
        ListingTable::new(
            (0..n)
                .map(|i| Listing::new(i as u64 * 10, 37.0, -122.0, 1000.0 + i as f64, 500.0).unwrap())
                .collect(),
        )
    }

    #[test]
    fn loads_valid_rows_and_derives_rent_per_sqft() {
        let f = csv_file("id,lat,lon,rent,sqft\n1,37.7,-122.4,3000,1000\n2,37.8,-122.3,2500,800\n3,37.6,-122.1,1800,600\n");
        let (t, s) = load_listings(f.path()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(s.rows_kept, 3);
        for l in t.listings() {
            assert_eq!(l.rent_sqft, l.rent / l.sqft);
        }
        assert_eq!(t.listings()[1].rent_sqft, 2500.0 / 800.0);
    }

    #[test]
    fn drops_zero_sqft_row() {
        let f = csv_file("id,lat,lon,rent,sqft\n1,37.7,-122.4,3000,0\n2,37.8,-122.3,2500,800\n");
        let (t, s) = load_listings(f.path()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(s.dropped(), 1);
        assert_eq!(s.dropped_non_positive, 1);
        assert!(s.to_string().contains("rows_dropped = 1"));
    }

    #[test]
    fn drops_non_finite_and_unparseable_rows() {
        let f = csv_file("id,lat,lon,rent,sqft,jobs\n1,37.7,-122.4,NaN,100,3\n2,37.8,-122.3,2500,800,inf\n3,x,1,1,1,1\n4,37.0,-122.0,1000,500,7\n");
        let (t, s) = load_listings(f.path()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(s.dropped_non_finite, 2);
        assert_eq!(s.dropped_unparseable, 1);
        assert_eq!(t.column("jobs").unwrap().as_ref(), &[7.0]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let missing = load_listings(Path::new("/nonexistent/listings.csv")).unwrap_err();
        assert!(matches!(missing, Error::MissingFile(_)));
        let f = csv_file("id,lat,lon,rent\n1,37,-122,100\n");
        match load_listings(f.path()).unwrap_err() {
            Error::MissingColumn { column, .. } => assert_eq!(column, "sqft"),
            e => panic!("unexpected {e}"),
        }
        let f = csv_file("id,lat,lon,rent,sqft\n1,37,-122,-5,100\n");
        assert!(matches!(load_listings(f.path()).unwrap_err(), Error::NoValidRows(_)));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let t = table(4).with_column("jobs_500_walk", vec![0.1, 1.0 / 3.0, 2.5, 1e-17]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write_csv(f.path()).unwrap();
        let (back, _) = load_listings(f.path()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn split_of_three_rows() {
        let (train, test) = split_dataset(&table(3), &SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(test.len(), 1);
        let a: HashSet<u64> = train.ids().into_iter().collect();
        assert!(test.ids().iter().all(|id| !a.contains(id)));
    }

    #[test]
    fn split_size_for_full_corpus_count() {
        let spec = SplitSpec::default();
        assert_eq!(spec.train_size(363_010), 242_006);
        assert_eq!(spec.train_size(3), 2);
        assert_eq!(spec.train_size(30_000), 20_000);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let t = table(50);
        let spec = SplitSpec { train_fraction: 2.0 / 3.0, seed: 9 };
        let (a, _) = split_dataset(&t, &spec).unwrap();
        let (b, _) = split_dataset(&t, &spec).unwrap();
        assert_eq!(a.ids(), b.ids());
        let (c, _) = split_dataset(&t, &SplitSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.ids(), c.ids());
    }

    #[test]
    fn split_rejects_empty_table_and_bad_fraction() {
        assert!(matches!(split_dataset(&table(0), &SplitSpec::default()), Err(Error::Empty(_))));
        let bad = SplitSpec { train_fraction: 1.0, seed: 0 };
        assert!(split_dataset(&table(5), &bad).is_err());
    }

    #[test]
    fn profile_hand_arithmetic() {
        let s = VariableStats::of("x", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.p50), (2.0, 1.0, 2.0));
        let c = VariableStats::of("c", &[5.0; 4]).unwrap();
        assert_eq!((c.std, c.min, c.max), (0.0, 5.0, 5.0));
    }

    #[test]
    fn profile_covers_target_size_and_features() {
        let t = table(4).with_column("units_500_walk", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = profile(&t).unwrap();
        let names: Vec<&str> = p.variables.iter().map(|v| v.variable.as_str()).collect();
        assert_eq!(names, ["rent_sqft", "sqft", "units_500_walk"]);
        assert!(p.variables.iter().all(|v| v.count == 4));
        assert!(profile(&table(0)).is_err());
    }

    #[test]
    fn column_collision_rejected() {
        assert!(matches!(table(2).with_column("sqft", vec![1.0, 2.0]), Err(Error::ColumnCollision(_))));
        assert!(matches!(table(2).with_column("x", vec![1.0]), Err(Error::LengthMismatch { .. })));
    }
}
