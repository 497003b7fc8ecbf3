//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::io::Write;

use hedonic::netaccess::{Aggregation, AttributeLayer, Network, NetworkKind};
use hedonic::preprocess::DesignMatrix;
use ndarray::{Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unevaluated sum `hi + lo` with |lo| ≤ ulp(hi)/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = fast_two_sum(s, e + t);
        let (hi, lo) = fast_two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let (hi, lo) = fast_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi));
        Dd { hi, lo }
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        let (hi, lo) = fast_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from(q3))
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 { self.neg() } else { self }
    }
}

/// Least squares via the normal equations XᵀX β = Xᵀy, formed and solved by
/// Gaussian elimination with partial pivoting in double-double arithmetic.
pub fn normal_equations_dd(x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
    let (n, p) = x.dim();
    let mut a = vec![vec![Dd::ZERO; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            let mut s = Dd::ZERO;
            for r in 0..n {
                s = s.add(Dd::from(x[[r, i]]).mul(Dd::from(x[[r, j]])));
            }
            a[i][j] = s;
        }
        let mut s = Dd::ZERO;
        for r in 0..n {
            s = s.add(Dd::from(x[[r, i]]).mul(Dd::from(y[r])));
        }
        a[i][p] = s;
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&u, &v| a[u][c].abs().hi.total_cmp(&a[v][c].abs().hi))
            .unwrap();
        a.swap(c, piv);
        for r in c + 1..p {
            let f = a[r][c].div(a[c][c]);
            for k in c..=p {
                let t = f.mul(a[c][k]);
                a[r][k] = a[r][k].sub(t);
            }
        }
    }
    let mut beta = vec![Dd::ZERO; p];
    for c in (0..p).rev() {
        let mut s = a[c][p];
        for k in c + 1..p {
            s = s.sub(a[c][k].mul(beta[k]));
        }
        beta[c] = s.div(a[c][c]);
    }
    beta.iter().map(|b| b.hi + b.lo).collect()
}

/// Design with an intercept and `p - 1` standard-normal-ish columns.
pub fn random_design(n: usize, p: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p)
        .map(|_| rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 })
        .collect();
    let mut x = Array2::<f64>::zeros((n, p));
    let mut y = Array1::<f64>::zeros(n);
    for r in 0..n {
        x[[r, 0]] = 1.0;
        for c in 1..p {
            x[[r, c]] = rng.random_range(-3.0..3.0) + 0.5 * c as f64;
        }
        let noise: f64 = rng.random_range(-0.5..0.5);
        y[r] = (0..p).map(|c| x[[r, c]] * beta[c]).sum::<f64>() + noise;
    }
    let mut names = vec!["intercept".to_string()];
    names.extend((1..p).map(|c| format!("x{c}")));
    let ids = (1..=n as u64).collect();
    (DesignMatrix::from_parts(x, y, names, ids).unwrap(), beta)
}

/// Random network with at most `max_nodes` nodes inside a ~2 km box.
/// Edges connect random pairs; some graphs are disconnected.
pub fn random_network(seed: u64, max_nodes: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let nodes: Vec<(u64, f64, f64)> = (0..n)
        .map(|i| {
            (
                1000 + 7 * i as u64,
                37.0 + rng.random_range(0.0..0.02),
                -122.0 + rng.random_range(0.0..0.02),
            )
        })
        .collect();
    let m = rng.random_range(1..=3 * n);
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n);
        if a == b {
            b = (a + 1) % n;
        }
        edges.push((nodes[a].0, nodes[b].0, rng.random_range(1.0..800.0)));
    }
    Network::new(NetworkKind::Walk, nodes, edges).unwrap()
}

/// Nonnegative layer with a few nodes left without a value.
pub fn random_layer(net: &Network, seed: u64) -> AttributeLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let pairs: Vec<(u64, f64)> = net
        .node_ids()
        .iter()
        .filter_map(|&id| {
            let value = rng.random_range(0.0..100.0);
            rng.random_bool(0.85).then_some((id, value))
        })
        .collect();
    AttributeLayer::new("layer", net, pairs).unwrap()
}

/// All-pairs shortest network distances (by node index).
pub fn floyd_warshall(net: &Network) -> Vec<Vec<f64>> {
    let n = net.node_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in net.edges() {
        let (u, v) = (net.node_index(e.u).unwrap(), net.node_index(e.v).unwrap());
        if e.length_m < d[u][v] {
            d[u][v] = e.length_m;
            d[v][u] = e.length_m;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Range aggregation by brute force: nodes within `radius` in ascending index
/// order, values summed left to right.
pub fn brute_range_aggregate(
    net: &Network,
    dist: &[Vec<f64>],
    layer: &AttributeLayer,
    radius: f64,
    agg: Aggregation,
) -> Vec<f64> {
    (0..net.node_count())
        .map(|s| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (v, &d) in dist[s].iter().enumerate() {
                if d <= radius {
                    if let Some(val) = layer.get(v) {
                        sum += val;
                        count += 1;
                    }
                }
            }
            match agg {
                Aggregation::Sum => sum,
                Aggregation::Mean if count == 0 => 0.0,
                Aggregation::Mean => sum / count as f64,
            }
        })
        .collect()
}

/// Linear-interpolation percentile on an unsorted slice, computed independently.
pub fn percentile_oracle(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Prints one acceptance line and returns whether it passed. Writes to the
/// stdout handle directly so the line shows even when output is captured.
pub fn report(criterion: &str, pass: bool, detail: &str) -> bool {
    let line = format!("[acceptance] {criterion}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).ok();
    pass
}
