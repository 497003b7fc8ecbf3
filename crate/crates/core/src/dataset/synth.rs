//! Synthetic regions: perturbed-grid walk and drive networks, node attribute
//! layers drawn from smooth random fields, and listings whose rents follow a
//! disclosed ground-truth function of their accessibility features.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{Listing, ListingTable};
use crate::error::{Error, Result};
use crate::geo::EARTH_RADIUS_M;
use crate::netaccess::{build_features, AttributeLayer, FeatureSpec, Network, NetworkKind, NodeAttributes};
use crate::preprocess::TransformRecord;
use crate::stats;

/// Noise added to the log target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Standard deviation on the log scale.
    Absolute(f64),
    /// Multiple of the standard deviation of the noise-free signal.
    RelativeToSignal(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSpec {
    /// South-west corner of the region.
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub walk_spacing_m: f64,
    pub drive_spacing_m: f64,
    /// Node displacement as a fraction of the grid spacing.
    pub jitter: f64,
    /// Edge length = straight-line length × (1 + U(0, detour)).
    pub detour: f64,
    pub n_listings: usize,
    /// Density and employment centres.
    pub n_centers: usize,
    pub noise: Noise,
    /// Weight of the nonlinear (threshold and interaction) component.
    pub nonlinearity: f64,
    /// Standard deviation of the spatially clustered omitted variable.
    pub omitted_amplitude: f64,
    pub omitted_scale_m: f64,
    /// Mean of `ln(1 + rent_sqft)`, raised when needed to keep every
    /// noise-free value at least three noise standard deviations above zero.
    pub target_mean: f64,
    pub clip_percentile: f64,
    /// Not read from config files; pipeline runs substitute their own spec.
    #[serde(skip, default = "FeatureSpec::bay_area")]
    pub feature_spec: FeatureSpec,
    /// Coefficients on `ln(1 + x)` of each model feature; the intercept is
    /// derived from `target_mean`.
    pub coefficients: Vec<(String, f64)>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self {
            origin_lat: 37.25,
            origin_lon: -122.35,
            width_m: 32_000.0,
            height_m: 32_000.0,
            walk_spacing_m: 400.0,
            drive_spacing_m: 1_600.0,
            jitter: 0.2,
            detour: 0.15,
            n_listings: 2_000,
            n_centers: 5,
            noise: Noise::Absolute(0.3),
            nonlinearity: 0.0,
            omitted_amplitude: 0.0,
            omitted_scale_m: 3_000.0,
            target_mean: 4.0f64.ln_1p(),
            clip_percentile: crate::preprocess::DEFAULT_CLIP_PERCENTILE,
            feature_spec: FeatureSpec::bay_area(),
            coefficients: default_coefficients(),
        }
    }
}

/// Signs follow the Bay Area estimates: larger units, larger neighbouring
/// units, children and minority population lower rent per square foot;
/// density, affluence and job access raise it.
pub fn default_coefficients() -> Vec<(String, f64)> {
    [
        ("sqft", -0.6),
        ("units_500_walk", 0.09),
        ("sqft_unit_500_walk", -0.1),
        ("rich_500_walk", 0.09),
        ("singles_500_walk", 0.05),
        ("elderly_hh_500_walk", 0.04),
        ("children_500_walk", -0.07),
        ("jobs_500_walk", 0.03),
        ("jobs_1500_walk", 0.05),
        ("jobs_10000", 0.1),
        ("jobs_25000", 0.2),
        ("pop_10000", 0.04),
        ("pop_black_10000", -0.05),
        ("pop_hisp_10000", -0.05),
        ("pop_asian_10000", -0.04),
    ]
    .into_iter()
    .map(|(n, b)| (n.to_string(), b))
    .collect()
}

/// The generating function behind a synthetic region's rents:
///
/// `ln(1 + rent_sqft) = β₀ + Σ βⱼ ln(1 + clip(xⱼ)) + nonlinearity·g(z) + ω·u(location) + ε`
///
/// where clip uses the frozen thresholds also produced by
/// [`TransformRecord::fit`] on the generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Design column order, `intercept` first.
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Absolute noise standard deviation actually used.
    pub noise_sigma: f64,
    pub nonlinearity: f64,
    pub omitted_amplitude: f64,
    pub clip_percentile: f64,
    /// Not read from config files; pipeline runs substitute their own spec.
    #[serde(skip, default = "FeatureSpec::bay_area")]
    pub feature_spec: FeatureSpec,
    /// Standard deviation of the noise-free signal over the listings.
    pub signal_std: f64,
}

impl GroundTruth {
    /// Model features (everything after the intercept).
    pub fn features(&self) -> Vec<String> {
        self.column_names[1..].to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRegion {
    pub walk: Network,
    pub drive: Network,
    pub attributes: NodeAttributes,
    /// Raw listings (`id, lat, lon, rent, sqft`), as a scraper would deliver them.
    pub listings: ListingTable,
    /// The same listings with the configured accessibility columns attached.
    pub featured: ListingTable,
    pub truth: GroundTruth,
}

/// Local equirectangular frame anchored at the region's south-west corner.
struct Frame {
    lat0: f64,
    lon0: f64,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl Frame {
    fn new(lat0: f64, lon0: f64) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Self {
            lat0,
            lon0,
            m_per_deg_lat,
            m_per_deg_lon: m_per_deg_lat * lat0.to_radians().cos(),
        }
    }

    fn to_lat_lon(&self, x: f64, y: f64) -> (f64, f64) {
        (self.lat0 + y / self.m_per_deg_lat, self.lon0 + x / self.m_per_deg_lon)
    }
}

/// Sum of Gaussian bumps over the plane.
struct Field {
    bumps: Vec<(f64, f64, f64, f64)>,
}

impl Field {
    fn random(rng: &mut ChaCha8Rng, n: usize, w: f64, h: f64, amp: (f64, f64), scale: (f64, f64), signed: bool) -> Self {
        let bumps = (0..n)
            .map(|_| {
                let mut a = rng.random_range(amp.0..amp.1);
                if signed && rng.random_bool(0.5) {
                    a = -a;
                }
                (
                    rng.random_range(0.0..w),
                    rng.random_range(0.0..h),
                    a,
                    rng.random_range(scale.0..scale.1),
                )
            })
            .collect();
        Self { bumps }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(cx, cy, a, s)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl RegionSpec {
    fn grid_dims(&self, spacing: f64) -> (usize, usize) {
        (
            (self.width_m / spacing).floor() as usize + 1,
            (self.height_m / spacing).floor() as usize + 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("walk_spacing_m", self.walk_spacing_m),
            ("drive_spacing_m", self.drive_spacing_m),
            ("omitted_scale_m", self.omitted_scale_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        for spacing in [self.walk_spacing_m, self.drive_spacing_m] {
            let (c, r) = self.grid_dims(spacing);
            if c * r < 10 {
                return bad(format!("grid with spacing {spacing} m has fewer than 10 nodes"));
            }
        }
        if self.n_listings < 1 {
            return bad("n_listings must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.jitter) || self.detour < 0.0 {
            return bad("jitter must lie in [0, 0.5) and detour must be nonnegative".into());
        }
        let sigma = match self.noise {
            Noise::Absolute(s) | Noise::RelativeToSignal(s) => s,
        };
        if !(sigma.is_finite() && sigma >= 0.0) {
            return bad("noise must be finite and nonnegative".into());
        }
        if !(self.clip_percentile > 0.0 && self.clip_percentile < 1.0) {
            return bad("clip_percentile must lie in (0, 1)".into());
        }
        if !(self.origin_lat.abs() < 80.0 && self.origin_lon.abs() < 170.0) {
            return bad("origin must be away from the poles and the antimeridian".into());
        }
        self.feature_spec.validate()?;
        let mut names = std::collections::HashSet::new();
        for (name, b) in &self.coefficients {
            if !b.is_finite() || !names.insert(name.as_str()) {
                return bad(format!("coefficient for `{name}` is duplicated or non-finite"));
            }
            if name != "sqft" && !self.feature_spec.output_names().contains(&name.as_str()) {
                return Err(Error::UnknownColumn(name.clone()));
            }
        }
        Ok(())
    }
}

fn grid_network(
    kind: NetworkKind,
    spec: &RegionSpec,
    frame: &Frame,
    spacing: f64,
    first_id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Network, Vec<(f64, f64)>)> {
    let (cols, rows) = spec.grid_dims(spacing);
    let mut xy = Vec::with_capacity(cols * rows);
    let mut nodes = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let x = c as f64 * spacing + spec.jitter * spacing * rng.random_range(-1.0..1.0);
            let y = r as f64 * spacing + spec.jitter * spacing * rng.random_range(-1.0..1.0);
            let (lat, lon) = frame.to_lat_lon(x, y);
            nodes.push((first_id + (r * cols + c) as u64, lat, lon));
            xy.push((x, y));
        }
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let a = r * cols + c;
            let mut link = |b: usize| {
                let (_, la, lo) = nodes[a];
                let (_, lb, lob) = nodes[b];
                let straight = crate::geo::haversine_m(la, lo, lb, lob);
                let len = straight * (1.0 + spec.detour * rng.random::<f64>());
                edges.push((nodes[a].0, nodes[b].0, len));
            };
            if c + 1 < cols {
                link(a + 1);
            }
            if r + 1 < rows {
                link(a + cols);
            }
        }
    }
    Ok((Network::new(kind, nodes, edges)?, xy))
}

/// Generates a reproducible synthetic region. Networks, attribute layers,
/// listing placement and rent noise draw from separate seeded streams.
pub fn generate_synthetic_region(spec: &RegionSpec, seed: u64) -> Result<SyntheticRegion> {
    spec.validate()?;
    let frame = Frame::new(spec.origin_lat, spec.origin_lon);
    let (w, h) = (spec.width_m, spec.height_m);

    let mut rng = stream(seed, 0);
    let (walk, walk_xy) = grid_network(NetworkKind::Walk, spec, &frame, spec.walk_spacing_m, 1, &mut rng)?;
    let (drive, _) = grid_network(NetworkKind::Drive, spec, &frame, spec.drive_spacing_m, 10_000_000, &mut rng)?;

    // Attribute layers on walk nodes, then summed onto nearest drive nodes.
    let mut rng = stream(seed, 1);
    let centers = spec.n_centers.max(1);
    let density = Field::random(&mut rng, centers, w, h, (1.0, 3.0), (2_500.0, 7_000.0), false);
    let employment = Field::random(&mut rng, centers, w, h, (1.0, 4.0), (1_000.0, 3_500.0), false);
    let share_fields: Vec<Field> = (0..7)
        .map(|_| Field::random(&mut rng, 4, w, h, (0.5, 1.5), (4_000.0, 10_000.0), true))
        .collect();
    let share = |k: usize, x: f64, y: f64, base: f64| logistic(base + share_fields[k].at(x, y));
    let jitter = LogNormal::new(0.0, 0.35).expect("valid");
    let job_jitter = LogNormal::new(0.0, 0.8).expect("valid");
    let size_jitter = LogNormal::new(0.0, 0.15).expect("valid");

    let n_walk = walk.node_count();
    let names = [
        "units", "rich", "singles", "elderly_hh", "children", "jobs", "pop", "pop_black", "pop_hisp", "pop_asian",
    ];
    let mut counts: Vec<Vec<f64>> = vec![Vec::with_capacity(n_walk); names.len()];
    let mut sqft_unit: Vec<(u64, f64)> = Vec::new();
    for (i, &(x, y)) in walk_xy.iter().enumerate() {
        let d = 0.15 + density.at(x, y);
        let units = if rng.random_bool(0.88) { 45.0 * d * jitter.sample(&mut rng) } else { 0.0 };
        let hh = 0.95 * units;
        let jobs = if rng.random_bool(0.7) {
            120.0 * (0.05 + employment.at(x, y) + 0.3 * d) * job_jitter.sample(&mut rng)
        } else {
            0.0
        };
        let pop = 2.4 * hh * jitter.sample(&mut rng);
        let row = [
            units,
            hh * share(0, x, y, -1.5) * jitter.sample(&mut rng),
            hh * share(1, x, y, -1.0) * jitter.sample(&mut rng),
            hh * share(2, x, y, -1.7) * jitter.sample(&mut rng),
            hh * share(3, x, y, -1.2) * jitter.sample(&mut rng),
            jobs,
            pop,
            pop * share(4, x, y, -2.5),
            pop * share(5, x, y, -1.6),
            pop * share(6, x, y, -1.1),
        ];
        for (col, v) in counts.iter_mut().zip(row) {
            col.push(v);
        }
        if units > 0.0 {
            let size = (1_400.0 - 180.0 * d.min(4.0)) * size_jitter.sample(&mut rng);
            sqft_unit.push((walk.node_id(i), size));
        }
    }
    let mut attributes = NodeAttributes::default();
    for (name, values) in names.iter().zip(&counts) {
        attributes.walk.push(AttributeLayer::dense(*name, &walk, values.clone())?);
    }
    attributes.walk.push(AttributeLayer::new("sqft_unit", &walk, sqft_unit)?);
    let snapped: Vec<u64> = (0..n_walk)
        .map(|i| {
            let (lat, lon) = walk.coords(i);
            drive.nearest_node(lat, lon)
        })
        .collect();
    for (name, values) in names.iter().zip(&counts) {
        let pairs = snapped.iter().copied().zip(values.iter().copied());
        attributes.drive.push(AttributeLayer::new(*name, &drive, pairs)?);
    }

    // Listings with placeholder rents; rents are filled in once features exist.
    let mut rng = stream(seed, 2);
    let size = LogNormal::new(850.0f64.ln(), 0.4).expect("valid");
    let mut xy = Vec::with_capacity(spec.n_listings);
    let mut listings = Vec::with_capacity(spec.n_listings);
    for id in 1..=spec.n_listings as u64 {
        let (x, y) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let (lat, lon) = frame.to_lat_lon(x, y);
        let sqft = size.sample(&mut rng).clamp(250.0, 4_000.0).round();
        xy.push((x, y));
        listings.push(Listing::new(id, lat, lon, sqft, sqft).expect("valid placeholder"));
    }
    let placeholder = ListingTable::new(listings);
    let featured = build_features(&placeholder, &walk, &drive, &attributes, &spec.feature_spec)?;

    let features: Vec<String> = spec.coefficients.iter().map(|(n, _)| n.clone()).collect();
    let record = TransformRecord::fit(&featured, "rent_sqft", &features, spec.clip_percentile)?;
    let n = featured.len();
    let transformed: Vec<Vec<f64>> = record
        .features
        .iter()
        .map(|t| {
            let col = featured.column(&t.name).expect("known column");
            col.iter().map(|&v| t.apply(v)).collect()
        })
        .collect();
    let mut linear = vec![0.0; n];
    for ((_, b), col) in spec.coefficients.iter().zip(&transformed) {
        for (acc, v) in linear.iter_mut().zip(col) {
            *acc += b * v;
        }
    }

    let standardized = |name: &str| -> Option<Vec<f64>> {
        let k = features.iter().position(|f| f == name)?;
        let col = &transformed[k];
        let (m, s) = (stats::mean(col), stats::sample_std(col));
        Some(col.iter().map(|v| if s > 0.0 { (v - m) / s } else { 0.0 }).collect())
    };
    let nonlinear = nonlinear_component(n, &standardized);
    let mut rng = stream(seed, 3);
    let omitted_field = Field::random(&mut rng, 8, w, h, (0.5, 1.5), (0.6 * spec.omitted_scale_m, 1.4 * spec.omitted_scale_m), true);
    let omitted = unit_scaled(xy.iter().map(|&(x, y)| omitted_field.at(x, y)).collect());

    let mut intercept = spec.target_mean - stats::mean(&linear);
    let mut signal: Vec<f64> = (0..n)
        .map(|i| intercept + linear[i] + spec.nonlinearity * nonlinear[i] + spec.omitted_amplitude * omitted[i])
        .collect();
    let signal_std = stats::sample_std(&signal);
    let sigma = match spec.noise {
        Noise::Absolute(s) => s,
        Noise::RelativeToSignal(r) => r * signal_std,
    };
    // ln(1 + rent_sqft) must stay positive: lift the intercept until the
    // lowest noise-free value clears the noise by a wide margin.
    let floor = (3.0 * sigma).max(0.25);
    let lowest = signal.iter().copied().fold(f64::INFINITY, f64::min);
    if lowest < floor {
        let lift = floor - lowest;
        intercept += lift;
        signal.iter_mut().for_each(|v| *v += lift);
    }
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let mut rng = stream(seed, 4);
    let mut out = Vec::with_capacity(n);
    for (l, &s) in featured.listings().iter().zip(&signal) {
        // ln(1 + rent_sqft) must stay positive; redraw the rare noise that breaks it.
        let mut y = s + sigma * normal.sample(&mut rng);
        let mut tries = 0;
        while y <= 1e-6 && tries < 64 {
            y = s + sigma * normal.sample(&mut rng);
            tries += 1;
        }
        if y <= 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "listing {}: noise keeps rent per square foot non-positive; raise target_mean",
                l.id
            )));
        }
        let rent = y.exp_m1() * l.sqft;
        out.push(Listing::new(l.id, l.lat, l.lon, rent, l.sqft).map_err(|_| {
            Error::InvalidParameter(format!("generated invalid rent for listing {}", l.id))
        })?);
    }
    let listings = ListingTable::new(out);
    let mut with_features = listings.clone();
    for c in featured.feature_columns() {
        with_features.add_column(c.name.clone(), c.values.clone())?;
    }

    let mut beta = vec![intercept];
    beta.extend(spec.coefficients.iter().map(|(_, b)| *b));
    Ok(SyntheticRegion {
        walk,
        drive,
        attributes,
        listings,
        featured: with_features,
        truth: GroundTruth {
            column_names: record.column_names(),
            beta,
            noise_sigma: sigma,
            nonlinearity: spec.nonlinearity,
            omitted_amplitude: spec.omitted_amplitude,
            clip_percentile: spec.clip_percentile,
            feature_spec: spec.feature_spec.clone(),
            signal_std,
        },
    })
}

fn unit_scaled(v: Vec<f64>) -> Vec<f64> {
    let (m, s) = (stats::mean(&v), stats::sample_std(&v));
    v.into_iter().map(|x| if s > 0.0 { (x - m) / s } else { 0.0 }).collect()
}

/// Threshold and interaction effects on standardized log features, scaled to
/// unit standard deviation. Features missing from the model contribute zero.
fn nonlinear_component(n: usize, standardized: &dyn Fn(&str) -> Option<Vec<f64>>) -> Vec<f64> {
    let zero = vec![0.0; n];
    let get = |name: &str| standardized(name).unwrap_or_else(|| zero.clone());
    let sqft = get("sqft");
    let units = get("units_500_walk");
    let jobs_local = get("jobs_1500_walk");
    let jobs_region = get("jobs_25000");
    let rich = get("rich_500_walk");
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let hot = (jobs_local[i] > 0.3 && units[i] > 0.0) as u8 as f64;
            1.2 * hot + 0.8 * (rich[i] * units[i]).tanh() + 0.6 * (2.0 * jobs_region[i]).tanh()
                - 0.4 * sqft[i].abs().min(2.5)
        })
        .collect();
    unit_scaled(raw)
}
