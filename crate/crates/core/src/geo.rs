//! Great-circle distances and a static 3-d k-d tree over unit-sphere points.
//!
//! Chord length between unit vectors is a monotone function of the central
//! angle, so nearest neighbours by chord are nearest neighbours by haversine
//! distance. Callers that need an exact haversine tie rule re-rank the small
//! candidate set returned by [`KdTree::within`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Haversine great-circle distance in meters between two (lat, lon) points in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

pub fn unit_vector(lat: f64, lon: f64) -> [f64; 3] {
    let (phi, lam) = (lat.to_radians(), lon.to_radians());
    [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Balanced k-d tree stored implicitly: the subtree for `order[lo..hi]` is
/// split at `mid = (lo + hi) / 2` on axis `depth % 3`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
}

#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn from_lat_lon(coords: &[(f64, f64)]) -> Self {
        Self::new(coords.iter().map(|&(la, lo)| unit_vector(la, lo)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; 3] {
        &self.points[i]
    }

    /// Index and squared chord distance of the nearest point (smallest index on ties).
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        let mut best = None;
        self.nearest_rec(q, 0, self.order.len(), 0, &mut best);
        best.map(|c: Candidate| (c.index, c.d2))
    }

    fn nearest_rec(
        &self,
        q: &[f64; 3],
        lo: usize,
        hi: usize,
        depth: usize,
        best: &mut Option<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let cand = Candidate {
            d2: dist2(p, q),
            index: idx,
        };
        if best.as_ref().is_none_or(|b| cand < *b) {
            *best = Some(cand);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(q, near.0, near.1, depth + 1, best);
        if best.as_ref().is_none_or(|b| diff * diff <= b.d2) {
            self.nearest_rec(q, far.0, far.1, depth + 1, best);
        }
    }

    /// All point indices whose squared chord distance to `q` is at most `r2`.
    pub fn within(&self, q: &[f64; 3], r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_rec(q, r2, 0, self.order.len(), 0, &mut out);
        out.sort_unstable();
        out
    }

    fn within_rec(&self, q: &[f64; 3], r2: f64, lo: usize, hi: usize, depth: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        if dist2(p, q) <= r2 {
            out.push(idx);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, lo, mid, depth + 1, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, mid + 1, hi, depth + 1, out);
        }
    }

    /// The `k` nearest points to point `i`, excluding `i` itself, ordered by
    /// (distance, index).
    pub fn knn_excluding(&self, i: usize, k: usize) -> Vec<usize> {
        let q = self.points[i];
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(&q, i, k, 0, self.order.len(), 0, &mut heap);
        let mut v = heap.into_sorted_vec();
        v.truncate(k);
        v.into_iter().map(|c| c.index).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn knn_rec(
        &self,
        q: &[f64; 3],
        skip: usize,
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi || k == 0 {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        if idx != skip {
            let cand = Candidate {
                d2: dist2(p, q),
                index: idx,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().unwrap() {
                heap.pop();
                heap.push(cand);
            }
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(q, skip, k, near.0, near.1, depth + 1, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
            self.knn_rec(q, skip, k, far.0, far.1, depth + 1, heap);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.random_range(37.0..38.0), rng.random_range(-122.5..-121.5)))
            .collect()
    }

    #[test]
    fn haversine_known_distance() {
        // One degree of latitude.
        let d = haversine_m(0.0, 0.0, 1.0, 0.0);
        assert!((d - EARTH_RADIUS_M * std::f64::consts::PI / 180.0).abs() < 1e-6);
        assert_eq!(haversine_m(37.0, -122.0, 37.0, -122.0), 0.0);
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let pts = random_points(300, 1);
        let tree = KdTree::from_lat_lon(&pts);
        for (la, lo) in random_points(200, 2) {
            let (got, _) = tree.nearest(&unit_vector(la, lo)).unwrap();
            let want = (0..pts.len())
                .min_by(|&a, &b| {
                    haversine_m(la, lo, pts[a].0, pts[a].1)
                        .total_cmp(&haversine_m(la, lo, pts[b].0, pts[b].1))
                })
                .unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let pts = random_points(120, 3);
        let tree = KdTree::from_lat_lon(&pts);
        for i in 0..pts.len() {
            let got = tree.knn_excluding(i, 8);
            let q = tree.point(i);
            let mut all: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
            all.sort_by(|&a, &b| {
                dist2(tree.point(a), q)
                    .total_cmp(&dist2(tree.point(b), q))
                    .then(a.cmp(&b))
            });
            assert_eq!(got, all[..8].to_vec());
        }
    }

    #[test]
    fn within_returns_ball() {
        let pts = random_points(200, 4);
        let tree = KdTree::from_lat_lon(&pts);
        let q = unit_vector(37.5, -122.0);
        let r2 = 1e-5;
        let got = tree.within(&q, r2);
        let want: Vec<usize> = (0..pts.len())
            .filter(|&j| dist2(tree.point(j), &q) <= r2)
            .collect();
        assert_eq!(got, want);
    }
}
