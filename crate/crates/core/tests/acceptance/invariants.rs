//! Property suites, one per module invariant. Each runs `cases` randomized
//! cases from a fixed seed and returns the first counterexample, if any.

use std::cell::Cell;

use hedonic::cli::{main_with, Cli, PipelineConfig, Stage, EXIT_CONFIG_ERROR};
use hedonic::dataset::{profile, split_dataset, Listing, ListingTable, SplitSpec};
use hedonic::diagnostics::{drift_slope, evaluate, morans_i, residual_histogram, residuals};
use hedonic::forest::{fit_forest, predict_forest, ForestFit, ForestParams};
use hedonic::netaccess::{range_aggregate, Aggregation, BoundedDijkstra, Network, NetworkKind};
use hedonic::ols::{fit_ols, normal_equation_residual, predict_ols};
use hedonic::preprocess::{build_design, clip_upper, log1p_column, ColumnTransform, DesignMatrix};
use hedonic::Error;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{floyd_warshall, max_abs, percentile_oracle, random_layer, random_network};

pub const CASES: u32 = 1_000;

type Suite = fn(u32) -> Result<(), String>;

pub const SUITES: [(&str, Suite); 22] = [
    ("dataset: split is a disjoint, exhaustive partition", split_partition),
    ("dataset: profile ignores row order", profile_row_order),
    ("netaccess: sums grow with radius", radius_monotone),
    ("netaccess: early-exit reach equals the all-pairs ball", reach_is_ball),
    ("netaccess: nearest node survives id relabeling", nearest_relabel),
    ("preprocess: clipping is idempotent and never increases", clip_properties),
    ("preprocess: log1p keeps order statistics", log1p_order),
    ("preprocess: design has only finite entries", design_finite),
    ("ols: residuals orthogonal to the design", ols_orthogonal),
    ("ols: training residuals have zero mean", ols_residual_mean),
    ("ols: an extra column never lowers r2", ols_extra_column),
    ("forest: fits are deterministic", forest_deterministic),
    ("forest: tree order does not matter", forest_tree_order),
    ("forest: monotone feature transforms keep partitions", forest_monotone_transform),
    ("forest: predictions stay within the training range", forest_bounds),
    ("forest: single unbagged deep tree interpolates", forest_interpolates),
    ("diagnostics: negating residuals keeps mse", evaluate_symmetric),
    ("diagnostics: histogram partitions the residuals", histogram_partition),
    ("diagnostics: Moran's I ignores shift and scale", moran_affine),
    ("diagnostics: permutation p is reproducible", moran_reproducible),
    ("diagnostics: OLS training drift is zero", ols_training_drift),
    ("cli: invalid config fails before any work", cli_validation_total),
];

fn check<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn table(rows: &[(f64, f64, f64)]) -> ListingTable {
    let listings = rows
        .iter()
        .enumerate()
        .map(|(i, &(rent, sqft, _))| Listing::new(i as u64 + 1, 37.5, -122.2, rent, sqft).unwrap())
        .collect();
    ListingTable::new(listings)
        .with_column("f", rows.iter().map(|r| r.2).collect())
        .unwrap()
}

fn row() -> impl Strategy<Value = (f64, f64, f64)> {
    (100.0..9_000.0f64, 200.0..3_000.0f64, prop_oneof![Just(0.0), 0.0..1e4f64])
}

fn split_partition(cases: u32) -> Result<(), String> {
    check(cases, (1usize..300, 0.01..0.99f64, any::<u64>()), |(n, f, seed)| {
        let rows: Vec<_> = (0..n).map(|i| (1_000.0 + i as f64, 500.0, 1.0)).collect();
        let t = table(&rows);
        let spec = SplitSpec { train_fraction: f, seed };
        let (train, test) = split_dataset(&t, &spec).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert_eq!(train.len(), spec.train_size(n));
        prop_assert!(train.len() as f64 <= f * n as f64 + 1e-9);
        let mut ids = train.ids();
        ids.extend(test.ids());
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids, (1..=n as u64).collect::<Vec<_>>());
        Ok(())
    })
}

fn profile_row_order(cases: u32) -> Result<(), String> {
    check(cases, (prop::collection::vec(row(), 1..60), any::<u64>()), |(rows, seed)| {
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(profile(&table(&rows)).unwrap(), profile(&table(&shuffled)).unwrap());
        Ok(())
    })
}

fn radius_monotone(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1.0..1_500.0f64, 0.0..1_500.0f64), |(seed, r1, extra)| {
        let net = random_network(seed, 30);
        let layer = random_layer(&net, seed);
        let small = range_aggregate(&net, &layer, r1, Aggregation::Sum).unwrap();
        let large = range_aggregate(&net, &layer, r1 + extra, Aggregation::Sum).unwrap();
        for (id, v) in &small {
            prop_assert!(large[id] >= *v, "node {id}: {} < {v}", large[id]);
        }
        Ok(())
    })
}

fn reach_is_ball(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0.0..1.0f64, 1.0..2_500.0f64), |(seed, src, radius)| {
        let net = random_network(seed, 30);
        let dist = floyd_warshall(&net);
        let s = ((src * net.node_count() as f64) as usize).min(net.node_count() - 1);
        let mut out = Vec::new();
        BoundedDijkstra::new(&net).reach(s, radius, &mut out);
        let ball: Vec<usize> = (0..net.node_count()).filter(|&v| dist[s][v] <= radius).collect();
        prop_assert_eq!(out, ball);
        Ok(())
    })
}

fn nearest_relabel(cases: u32) -> Result<(), String> {
    // Coarse coordinates make exact ties common.
    let strategy = (
        prop::collection::vec((0u8..6, 0u8..6), 2..25),
        (0u8..50, 0u8..50),
        any::<u64>(),
    );
    check(cases, strategy, |(cells, (qa, qb), seed)| {
        let coord = |a: u8, b: u8| (37.0 + a as f64 * 0.001, -122.0 + b as f64 * 0.001);
        let build = |ids: &[u64]| {
            let nodes: Vec<(u64, f64, f64)> = ids
                .iter()
                .zip(&cells)
                .map(|(&id, &(a, b))| {
                    let (la, lo) = coord(a, b);
                    (id, la, lo)
                })
                .collect();
            let edges: Vec<_> = ids.windows(2).map(|w| (w[0], w[1], 10.0)).collect();
            Network::new(NetworkKind::Walk, nodes, edges).unwrap()
        };
        let original: Vec<u64> = (0..cells.len() as u64).collect();
        let mut relabeled: Vec<u64> = (0..cells.len() as u64).map(|i| 1_000 + 3 * i).collect();
        relabeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (q_lat, q_lon) = (37.0 + qa as f64 * 0.00012, -122.0 + qb as f64 * 0.00012);
        for ids in [&original, &relabeled] {
            let net = build(ids);
            let got = net.nearest_index(q_lat, q_lon);
            let d = |i: usize| {
                let (la, lo) = net.coords(i);
                hedonic::geo::haversine_m(q_lat, q_lon, la, lo)
            };
            let best = (0..net.node_count()).map(d).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(d(got), best);
            let tied_min_id = (0..net.node_count()).filter(|&i| d(i) == best).map(|i| net.node_id(i)).min();
            prop_assert_eq!(Some(net.node_id(got)), tied_min_id);
        }
        Ok(())
    })
}

fn clip_properties(cases: u32) -> Result<(), String> {
    let values = prop::collection::vec(prop_oneof![0.0..10.0f64, 0.0..1e6f64, Just(5.0)], 1..200);
    check(cases, (values, 0.01..0.999f64), |(v, q)| {
        let (clipped, t) = clip_upper(&v, q).unwrap();
        prop_assert_eq!(t, percentile_oracle(&v, q));
        let frozen = ColumnTransform {
            name: "x".into(),
            clip_threshold: Some(t),
            log1p: false,
        };
        for (a, c) in v.iter().zip(&clipped) {
            prop_assert!(c <= a);
            if *a <= t {
                prop_assert_eq!(a, c);
            }
            prop_assert_eq!(frozen.apply(*c), *c);
            prop_assert_eq!(frozen.apply(frozen.apply(*a)), frozen.apply(*a));
        }
        // Recomputing the percentile on clipped data never raises the threshold.
        prop_assert!(clip_upper(&clipped, q).unwrap().1 <= t);
        Ok(())
    })
}

fn log1p_order(cases: u32) -> Result<(), String> {
    let values = prop::collection::vec(prop_oneof![0.0..1.0f64, 0.0..1e300f64, Just(0.0)], 1..100);
    check(cases, values, |v| {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let mapped_sorted = log1p_column(&sorted).unwrap();
        let mut sorted_mapped = log1p_column(&v).unwrap();
        sorted_mapped.sort_by(f64::total_cmp);
        prop_assert_eq!(&mapped_sorted, &sorted_mapped);
        prop_assert!(mapped_sorted.windows(2).all(|w| w[0] <= w[1]));
        Ok(())
    })
}

fn design_finite(cases: u32) -> Result<(), String> {
    let feature = prop_oneof![Just(0.0), 0.0..1e3f64, 1e200..1e300f64, -5.0..-1.0f64];
    let rows = prop::collection::vec((100.0..9_000.0f64, 200.0..3_000.0f64, feature), 4..50);
    check(cases, rows, |rows| {
        let t = table(&rows);
        match build_design(&t, "rent_sqft", &["sqft".into(), "f".into()]) {
            Ok(d) => {
                prop_assert!(d.x().iter().chain(d.y().iter()).all(|v| v.is_finite()));
                prop_assert_eq!(d.n_rows() + d.dropped_rows(), rows.len());
            }
            Err(Error::TooFewRows { .. } | Error::RankDeficient { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        Ok(())
    })
}

/// Design with an intercept and columns of wildly different scales.
fn scaled_design() -> impl Strategy<Value = DesignMatrix> {
    (6usize..60, 2usize..6)
        .prop_flat_map(|(n, p)| {
            (
                Just((n, p)),
                prop::collection::vec(-1.0..1.0f64, n * (p - 1)),
                prop::collection::vec(-3i32..4, p - 1),
                prop::collection::vec(-10.0..10.0f64, n),
            )
        })
        .prop_filter_map("need n > p", |((n, p), vals, scales, y)| {
            if n <= p {
                return None;
            }
            let mut x = Array2::ones((n, p));
            for r in 0..n {
                for c in 1..p {
                    x[[r, c]] = vals[r * (p - 1) + c - 1] * 10f64.powi(scales[c - 1]);
                }
            }
            let names = (0..p)
                .map(|c| if c == 0 { "intercept".to_string() } else { format!("x{c}") })
                .collect();
            DesignMatrix::from_parts(x, Array1::from(y), names, (0..n as u64).collect()).ok()
        })
}

fn ols_orthogonal(cases: u32) -> Result<(), String> {
    check(cases, scaled_design(), |d| {
        let Ok(fit) = fit_ols(&d) else { return Ok(()) };
        let y = d.y().as_slice().unwrap();
        let xte = normal_equation_residual(d.x(), y, &fit.beta);
        let xty = d.x().t().dot(d.y());
        prop_assert!(max_abs(xte.iter().copied()) <= 1e-8 * max_abs(xty.iter().copied()));
        Ok(())
    })
}

fn ols_residual_mean(cases: u32) -> Result<(), String> {
    check(cases, scaled_design(), |d| {
        let Ok(fit) = fit_ols(&d) else { return Ok(()) };
        let pred = predict_ols(&fit, &d).unwrap();
        let m = evaluate(&pred, d.y().as_slice().unwrap()).unwrap();
        prop_assert!(m.residual_mean.abs() <= 1e-10, "mean residual {}", m.residual_mean);
        Ok(())
    })
}

fn ols_extra_column(cases: u32) -> Result<(), String> {
    let adj_dropped = Cell::new(0usize);
    let extra = prop::collection::vec(-1.0..1.0f64, 60);
    let outcome = check(cases, (scaled_design(), extra), |(d, extra)| {
        let (n, p) = (d.n_rows(), d.n_cols());
        if n <= p + 1 {
            return Ok(());
        }
        let Ok(base) = fit_ols(&d) else { return Ok(()) };
        let mut x = Array2::zeros((n, p + 1));
        x.slice_mut(ndarray::s![.., ..p]).assign(d.x());
        for r in 0..n {
            x[[r, p]] = extra[r];
        }
        let mut names = d.column_names().to_vec();
        names.push("noise".into());
        let wider = DesignMatrix::from_parts(x, d.y().clone(), names, d.row_ids().to_vec()).unwrap();
        let Ok(more) = fit_ols(&wider) else { return Ok(()) };
        prop_assert!(more.r2 >= base.r2 - 1e-12, "{} < {}", more.r2, base.r2);
        if more.adj_r2 < base.adj_r2 {
            adj_dropped.set(adj_dropped.get() + 1);
        }
        Ok(())
    });
    outcome?;
    if adj_dropped.get() == 0 {
        return Err("adjusted r2 never decreased".into());
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ForestCase {
    design: DesignMatrix,
    params: ForestParams,
}

/// Small designs on a quarter-step grid, so cubic transforms stay exact.
fn forest_case() -> impl Strategy<Value = ForestCase> {
    (1usize..4, 0usize..36)
        .prop_flat_map(|(k, extra)| {
            let n = k + 3 + extra;
            (
                prop::collection::vec(-40i32..40, n * k),
                prop::collection::vec(-5.0..5.0f64, n),
                1usize..6,
                prop::option::of(0usize..6),
                1usize..3,
                any::<bool>(),
                any::<u64>(),
                Just((n, k)),
            )
        })
        .prop_map(|(grid, y, n_trees, max_depth, min_samples_leaf, bootstrap, seed, (n, k))| {
            let mut x = Array2::ones((n, k + 1));
            for r in 0..n {
                for c in 0..k {
                    x[[r, c + 1]] = grid[r * k + c] as f64 / 4.0;
                }
            }
            let names = (0..=k)
                .map(|c| if c == 0 { "intercept".to_string() } else { format!("x{c}") })
                .collect();
            let design = DesignMatrix::from_parts(x, Array1::from(y), names, (0..n as u64).collect()).unwrap();
            ForestCase {
                design,
                params: ForestParams {
                    n_trees,
                    max_depth,
                    min_samples_leaf,
                    bootstrap,
                    seed,
                    ..Default::default()
                },
            }
        })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn forest_deterministic(cases: u32) -> Result<(), String> {
    check(cases, forest_case(), |c| {
        let a = fit_forest(&c.design, &c.params).unwrap();
        let b = fit_forest(&c.design, &c.params).unwrap();
        prop_assert_eq!(
            bits(&predict_forest(&a, &c.design).unwrap()),
            bits(&predict_forest(&b, &c.design).unwrap())
        );
        prop_assert_eq!(bits(&a.importances), bits(&b.importances));
        Ok(())
    })
}

fn forest_tree_order(cases: u32) -> Result<(), String> {
    check(cases, (forest_case(), any::<u64>()), |(c, seed)| {
        let fit = fit_forest(&c.design, &c.params).unwrap();
        let mut shuffled: ForestFit = fit.clone();
        shuffled.trees.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            bits(&predict_forest(&fit, &c.design).unwrap()),
            bits(&predict_forest(&shuffled, &c.design).unwrap())
        );
        Ok(())
    })
}

fn forest_monotone_transform(cases: u32) -> Result<(), String> {
    check(cases, (forest_case(), any::<prop::sample::Index>()), |(c, which)| {
        let k = c.design.n_cols() - 1;
        let col = 1 + which.index(k);
        let mut x = c.design.x().clone();
        x.column_mut(col).mapv_inplace(|v| v * v * v + 2.0 * v);
        let moved = DesignMatrix::from_parts(
            x,
            c.design.y().clone(),
            c.design.column_names().to_vec(),
            c.design.row_ids().to_vec(),
        )
        .unwrap();
        let a = fit_forest(&c.design, &c.params).unwrap();
        let b = fit_forest(&moved, &c.params).unwrap();
        // Compare each tree on the rows it was grown from.
        let (la, lb) = (a.leaf_assignments(c.design.x().view()), b.leaf_assignments(moved.x().view()));
        for t in 0..c.params.n_trees {
            for r in c.params.sample_rows(t, c.design.n_rows()) {
                prop_assert_eq!(la[r][t], lb[r][t], "tree {}, row {}", t, r);
            }
        }
        Ok(())
    })
}

fn forest_bounds(cases: u32) -> Result<(), String> {
    let probes = prop::collection::vec(prop::collection::vec(-20.0..20.0f64, 4), 1..20);
    check(cases, (forest_case(), probes), |(c, probes)| {
        let fit = fit_forest(&c.design, &c.params).unwrap();
        let k = c.design.n_cols();
        let mut x = Array2::ones((probes.len(), k));
        for (r, p) in probes.iter().enumerate() {
            for j in 1..k {
                x[[r, j]] = p[j - 1];
            }
        }
        let (lo, hi) = fit.training_target_range;
        let ymax = max_abs(c.design.y().iter().copied());
        for p in fit.predict_rows(x.view()) {
            prop_assert!(lo <= p && p <= hi, "{p} outside [{lo}, {hi}]");
            prop_assert!(p.abs() <= ymax);
        }
        Ok(())
    })
}

fn forest_interpolates(cases: u32) -> Result<(), String> {
    check(cases, forest_case(), |c| {
        // Keep the first row of each distinct feature vector.
        let x = c.design.x();
        let mut keep: Vec<usize> = Vec::new();
        for r in 0..x.nrows() {
            if !keep.iter().any(|&q| x.row(q) == x.row(r)) {
                keep.push(r);
            }
        }
        let sub_x = x.select(ndarray::Axis(0), &keep);
        let sub_y = c.design.y().select(ndarray::Axis(0), &keep);
        let ids = (0..keep.len() as u64).collect();
        let Ok(d) = DesignMatrix::from_parts(sub_x, sub_y.clone(), c.design.column_names().to_vec(), ids) else {
            return Ok(());
        };
        let params = ForestParams {
            n_trees: 1,
            max_depth: None,
            min_samples_leaf: 1,
            bootstrap: false,
            ..c.params.clone()
        };
        let fit = fit_forest(&d, &params).unwrap();
        prop_assert_eq!(bits(&predict_forest(&fit, &d).unwrap()), bits(sub_y.as_slice().unwrap()));
        Ok(())
    })
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..100).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3..1e3f64, n),
            prop::collection::vec(-1e3..1e3f64, n),
        )
    })
}

fn evaluate_symmetric(cases: u32) -> Result<(), String> {
    check(cases, pairs(), |(p, o)| {
        // Swapping roles negates every residual exactly.
        let a = evaluate(&p, &o).unwrap();
        let b = evaluate(&o, &p).unwrap();
        prop_assert_eq!(a.mse.to_bits(), b.mse.to_bits());
        prop_assert_eq!(a.rmse.to_bits(), b.rmse.to_bits());
        prop_assert_eq!(a.residual_mean.to_bits(), (-b.residual_mean).to_bits());
        prop_assert_eq!(a.residual_std.to_bits(), b.residual_std.to_bits());
        Ok(())
    })
}

fn histogram_partition(cases: u32) -> Result<(), String> {
    let values = prop::collection::vec(prop_oneof![-1e3..1e3f64, Just(0.0), Just(7.5)], 1..300);
    check(cases, (values, 1usize..80), |(v, bins)| {
        let h = residual_histogram(&v, bins).unwrap();
        prop_assert_eq!(h.counts.len(), bins);
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert_eq!(h.counts.iter().sum::<usize>(), v.len());
        prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(h.edges[0] <= lo && hi <= h.edges[bins]);
        Ok(())
    })
}

fn located_values() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<f64>)> {
    (12usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((37.0..37.1f64, -122.1..-122.0f64), n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

fn moran_affine(cases: u32) -> Result<(), String> {
    check(cases, (located_values(), -100.0..100.0f64, 0.01..100.0f64), |((locs, v), shift, scale)| {
        let base = morans_i(&v, &locs, 4, 0, 1).unwrap().morans_i;
        let moved: Vec<f64> = v.iter().map(|x| x * scale + shift).collect();
        let other = morans_i(&moved, &locs, 4, 0, 1).unwrap().morans_i;
        prop_assert!((base - other).abs() <= 1e-9 * base.abs().max(1.0), "{base} vs {other}");
        Ok(())
    })
}

fn moran_reproducible(cases: u32) -> Result<(), String> {
    check(cases, (located_values(), any::<u64>()), |((locs, v), seed)| {
        let a = morans_i(&v, &locs, 4, 49, seed).unwrap();
        let b = morans_i(&v, &locs, 4, 49, seed).unwrap();
        prop_assert_eq!(a.permutation_p.to_bits(), b.permutation_p.to_bits());
        prop_assert!(a.permutation_p > 0.0 && a.permutation_p <= 1.0);
        Ok(())
    })
}

fn ols_training_drift(cases: u32) -> Result<(), String> {
    check(cases, scaled_design(), |d| {
        let Ok(fit) = fit_ols(&d) else { return Ok(()) };
        let pred = predict_ols(&fit, &d).unwrap();
        let y = d.y().as_slice().unwrap();
        let resid = residuals(&pred, y);
        match drift_slope(&resid, &pred) {
            Ok(slope) => prop_assert!(slope.abs() <= 1e-8, "slope {slope}"),
            Err(Error::ZeroVariance) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        prop_assert!(evaluate(&pred, y).unwrap().residual_mean.abs() <= 1e-10);
        Ok(())
    })
}

fn invalid_override() -> impl Strategy<Value = String> {
    prop_oneof![
        (1.0..5.0f64).prop_map(|v| format!("split.train_fraction={v}")),
        (-5.0..=0.0f64).prop_map(|v| format!("split.train_fraction={v}")),
        Just("forest.n_trees=0".to_string()),
        Just("forest.min_samples_split=1".to_string()),
        (16usize..100).prop_map(|v| format!("forest.max_features={v}")),
        Just("diagnostics.bins=0".to_string()),
        Just("diagnostics.k_neighbors=0".to_string()),
        (1.0..3.0f64).prop_map(|v| format!("preprocess.clip_percentile={v}")),
        "[a-z]{3,8}".prop_map(|k| format!("forest.{k}_x=1")),
        "[a-z]{3,8}".prop_map(|k| format!("model.features=[\"{k}_x\"]")),
        Just("ols.enabled=\"maybe\"".to_string()),
        Just("synth.region.n_listings=0".to_string()),
        Just("paths.listings=only_one.csv".to_string()),
    ]
}

fn valid_override() -> impl Strategy<Value = String> {
    prop_oneof![
        (1usize..50).prop_map(|v| format!("forest.n_trees={v}")),
        (0.1..0.9f64).prop_map(|v| format!("split.train_fraction={v}")),
        any::<u64>().prop_map(|v| format!("diagnostics.seed={}", v >> 1)),
    ]
}

fn cli_validation_total(cases: u32) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().to_path_buf();
    let strategy = (prop::collection::vec(valid_override(), 0..3), invalid_override(), any::<u16>());
    check(cases, strategy, |(mut overrides, bad, tag)| {
        let out = root.join(format!("run{tag}"));
        overrides.insert(0, format!("paths.output_dir={:?}", out.to_str().unwrap()));
        overrides.push(bad);
        prop_assert!(PipelineConfig::load(None, &overrides).is_err());
        let cli = Cli {
            command: Stage::All,
            config: None,
            overrides,
            threads: None,
        };
        prop_assert_eq!(main_with(cli), EXIT_CONFIG_ERROR);
        prop_assert!(!out.exists());
        Ok(())
    })
}
