//! Random forest regression: bootstrap-sampled variance-reduction trees,
//! ensemble averaging and impurity-based variable importance.
//!
//! Trees consume the same [`DesignMatrix`] as OLS. Column 0 (the intercept)
//! is never a split candidate. Each tree `k` draws from its own ChaCha stream
//! `(seed, k)`, so a tree does not depend on how many trees are grown or on
//! which worker grows it.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::check_columns;
use crate::preprocess::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means ⌈p/3⌉ of the candidate columns.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    /// Training rows of tree `tree_index` (with repeats when bootstrapping).
    pub fn sample_rows(&self, tree_index: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tree_index as u64);
        self.draw_rows(&mut rng, n)
    }

    fn draw_rows(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        if self.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        }
    }

    pub fn resolved_max_features(&self, n_candidates: usize) -> usize {
        self.max_features.unwrap_or_else(|| n_candidates.div_ceil(3).max(1))
    }

    pub fn validate(&self, n_candidates: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2".into());
        }
        let m = self.resolved_max_features(n_candidates);
        if m == 0 || m > n_candidates {
            return bad(format!("max_features must lie in 1..={n_candidates}, got {m}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64, count: usize },
}

/// A regression tree as a preorder node list; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { value, .. } => value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + rec(nodes, left).max(rec(nodes, right)),
            }
        }
        rec(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestFit {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub column_names: Vec<String>,
    pub training_target_range: (f64, f64),
    /// Normalized impurity decrease per design column; the intercept is 0.
    pub importances: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Shared read-only training data.
struct TrainingData<'a> {
    /// `columns[f]` holds design column `f` (index 0 unused).
    columns: Vec<Vec<f64>>,
    y: &'a [f64],
    /// Per candidate column, row indices sorted by (value, row).
    sorted_rows: Vec<Vec<usize>>,
    candidates: Vec<usize>,
}

struct TreeGrower<'a> {
    data: &'a TrainingData<'a>,
    params: &'a ForestParams,
    max_features: usize,
    /// Row index behind each sample position.
    rows: Vec<usize>,
    /// Per candidate (same order as `data.candidates`), sample positions in
    /// feature order; node ranges index into these.
    order: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
    scratch: Vec<usize>,
    importances: Vec<f64>,
    rng: ChaCha8Rng,
}

struct SplitChoice {
    slot: usize,
    n_left: usize,
    threshold: f64,
    gain: f64,
}

impl<'a> TreeGrower<'a> {
    fn new(data: &'a TrainingData<'a>, params: &'a ForestParams, max_features: usize, tree_index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(tree_index as u64);
        let n = data.y.len();
        let rows = params.draw_rows(&mut rng, n);
        // Bucket sample positions by row, then emit them in each feature's row order.
        let mut start = vec![0usize; n + 1];
        for &r in &rows {
            start[r + 1] += 1;
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut by_row = vec![0usize; rows.len()];
        for (pos, &r) in rows.iter().enumerate() {
            by_row[fill[r]] = pos;
            fill[r] += 1;
        }
        let order = data
            .sorted_rows
            .iter()
            .map(|sorted| {
                let mut o = Vec::with_capacity(rows.len());
                for &r in sorted {
                    o.extend_from_slice(&by_row[start[r]..start[r + 1]]);
                }
                o
            })
            .collect();
        let m = rows.len();
        Self {
            data,
            params,
            max_features,
            rows,
            order,
            goes_left: vec![false; m],
            scratch: Vec::with_capacity(m),
            importances: vec![0.0; data.columns.len()],
            rng,
        }
    }

    fn y_at(&self, pos: usize) -> f64 {
        self.data.y[self.rows[pos]]
    }

    fn x_at(&self, slot: usize, pos: usize) -> f64 {
        self.data.columns[self.data.candidates[slot]][self.rows[pos]]
    }

    fn grow(mut self) -> (Tree, Vec<f64>) {
        let mut nodes: Vec<TreeNode> = Vec::new();
        // (lo, hi, depth, parent node, is_left)
        let mut stack: Vec<(usize, usize, usize, Option<(usize, bool)>)> = vec![(0, self.rows.len(), 0, None)];
        while let Some((lo, hi, depth, parent)) = stack.pop() {
            let here = nodes.len();
            if let Some((p, is_left)) = parent {
                if let TreeNode::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = here;
                    } else {
                        *right = here;
                    }
                }
            }
            match self.best_split(lo, hi, depth) {
                Some(split) => {
                    self.importances[self.data.candidates[split.slot]] += split.gain;
                    self.partition(lo, hi, &split);
                    nodes.push(TreeNode::Split {
                        feature: self.data.candidates[split.slot],
                        threshold: split.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    let mid = lo + split.n_left;
                    stack.push((mid, hi, depth + 1, Some((here, false))));
                    stack.push((lo, mid, depth + 1, Some((here, true))));
                }
                None => {
                    let count = hi - lo;
                    let (mut sum, mut ymin, mut ymax) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
                    for &p in &self.order[0][lo..hi] {
                        let v = self.y_at(p);
                        sum += v;
                        ymin = ymin.min(v);
                        ymax = ymax.max(v);
                    }
                    // The clamp keeps a pure leaf exactly at its common value.
                    nodes.push(TreeNode::Leaf {
                        value: (sum / count as f64).clamp(ymin, ymax),
                        count,
                    });
                }
            }
        }
        (Tree { nodes }, self.importances)
    }

    fn best_split(&mut self, lo: usize, hi: usize, depth: usize) -> Option<SplitChoice> {
        let count = hi - lo;
        let p = self.params;
        if p.max_depth.is_some_and(|d| depth >= d)
            || count < p.min_samples_split
            || count < 2 * p.min_samples_leaf
        {
            return None;
        }
        let ys: Vec<f64> = self.order[0][lo..hi].iter().map(|&pos| self.y_at(pos)).collect();
        let (ymin, ymax) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if ymin == ymax {
            return None;
        }
        let mean = ys.iter().sum::<f64>() / count as f64;

        // Partial Fisher-Yates draw. Features constant within the node don't
        // count towards `max_features`; drawing continues past them.
        let n_cand = self.data.candidates.len();
        let mut slots: Vec<usize> = (0..n_cand).collect();
        let mut tried = Vec::with_capacity(self.max_features);
        let mut drawn = 0;
        while tried.len() < self.max_features && drawn < n_cand {
            let j = self.rng.random_range(drawn..n_cand);
            slots.swap(drawn, j);
            let slot = slots[drawn];
            drawn += 1;
            let ord = &self.order[slot][lo..hi];
            if self.x_at(slot, ord[0]) < self.x_at(slot, ord[count - 1]) {
                tried.push(slot);
            }
        }
        tried.sort_unstable();

        let leaf = p.min_samples_leaf;
        let mut best: Option<SplitChoice> = None;
        let mut best_score = f64::NEG_INFINITY;
        let total: f64 = ys.iter().map(|v| v - mean).sum();
        for &slot in &tried {
            let ord = &self.order[slot][lo..hi];
            let mut left_sum = 0.0;
            for i in 0..count - 1 {
                left_sum += self.y_at(ord[i]) - mean;
                let n_left = i + 1;
                if n_left < leaf || count - n_left < leaf {
                    continue;
                }
                let a = self.x_at(slot, ord[i]);
                let b = self.x_at(slot, ord[i + 1]);
                if a >= b {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (count - n_left) as f64;
                if score > best_score {
                    best_score = score;
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(SplitChoice {
                        slot,
                        n_left,
                        threshold,
                        gain: 0.0,
                    });
                }
            }
        }
        // Any valid split is taken while the node is impure, even at zero gain.
        let mut split = best?;
        split.gain = (best_score - total * total / count as f64).max(0.0);
        Some(split)
    }

    /// Stable-partitions every feature order over `lo..hi` into left then right.
    fn partition(&mut self, lo: usize, hi: usize, split: &SplitChoice) {
        let mid = lo + split.n_left;
        for (k, &pos) in self.order[split.slot][lo..hi].iter().enumerate() {
            self.goes_left[pos] = lo + k < mid;
        }
        for slot in 0..self.order.len() {
            if slot == split.slot {
                continue;
            }
            let range = &mut self.order[slot][lo..hi];
            self.scratch.clear();
            let mut w = 0;
            for r in 0..range.len() {
                let pos = range[r];
                if self.goes_left[pos] {
                    range[w] = pos;
                    w += 1;
                } else {
                    self.scratch.push(pos);
                }
            }
            range[w..].copy_from_slice(&self.scratch);
        }
    }
}

/// Fits `params.n_trees` trees on bootstrap samples of the design rows.
pub fn fit_forest(design: &DesignMatrix, params: &ForestParams) -> Result<ForestFit> {
    let (n, p) = design.x().dim();
    if n < 2 {
        return Err(Error::TooFewRows { n, p });
    }
    let candidates: Vec<usize> = (1..p).collect();
    params.validate(candidates.len())?;
    let max_features = params.resolved_max_features(candidates.len());

    let y = design.y().as_slice().expect("contiguous target");
    let mut columns = vec![Vec::new(); p];
    for &f in &candidates {
        columns[f] = design.x().column(f).to_vec();
    }
    let sorted_rows = candidates
        .iter()
        .map(|&f| {
            let col = &columns[f];
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let data = TrainingData {
        columns,
        y,
        sorted_rows,
        candidates,
    };

    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| TreeGrower::new(&data, params, max_features, k).grow())
        .collect();

    let mut importances = vec![0.0; p];
    for (_, imp) in &grown {
        for (acc, v) in importances.iter_mut().zip(imp) {
            *acc += v;
        }
    }
    let total: f64 = importances.iter().sum();
    let mut warnings = Vec::new();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    } else {
        let msg = "no split reduced target variance; all importances are zero".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(ForestFit {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        params: params.clone(),
        column_names: design.column_names().to_vec(),
        training_target_range: (lo, hi),
        importances,
        warnings,
    })
}

/// Mean of the tree outputs per row of `design`.
pub fn predict_forest(fit: &ForestFit, design: &DesignMatrix) -> Result<Vec<f64>> {
    check_columns(&fit.column_names, design.column_names())?;
    Ok(fit.predict_rows(design.x().view()))
}

impl ForestFit {
    /// Tree outputs are summed in sorted order so the mean does not depend on
    /// tree order, and clamped to the outputs' range.
    pub fn predict_row(&self, row: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.extend(self.trees.iter().map(|t| t.predict_row(row)));
        buf.sort_by(f64::total_cmp);
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        mean.clamp(buf[0], buf[buf.len() - 1])
    }

    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.par_iter()
            .map_init(Vec::new, |buf, row| self.predict_row(row, buf))
            .collect()
    }

    /// Leaf index reached in every tree, per row.
    pub fn leaf_assignments(&self, x: ArrayView2<f64>) -> Vec<Vec<usize>> {
        x.rows()
            .into_iter()
            .map(|r| {
                let row = r.to_vec();
                self.trees.iter().map(|t| t.leaf_index(&row)).collect()
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Versioned text format: magic line, JSON header line, then per tree a
    /// `tree <k> <nodes>` line followed by preorder `S feature threshold` /
    /// `L value count` lines.
    pub fn to_text(&self) -> Result<String> {
        let header = ForestHeader {
            params: self.params.clone(),
            column_names: self.column_names.clone(),
            training_target_range: self.training_target_range,
            importances: self.importances.clone(),
            warnings: self.warnings.clone(),
        };
        let mut out = format!("{FOREST_MAGIC}\n{}\n", serde_json::to_string(&header)?);
        for (k, tree) in self.trees.iter().enumerate() {
            writeln!(out, "tree {k} {}", tree.nodes.len()).unwrap();
            for node in &tree.nodes {
                match *node {
                    TreeNode::Split { feature, threshold, .. } => writeln!(out, "S {feature} {threshold:e}"),
                    TreeNode::Leaf { value, count } => writeln!(out, "L {value:e} {count}"),
                }
                .unwrap();
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(FOREST_MAGIC) {
            return Err(bad("missing or unsupported version header"));
        }
        let header: ForestHeader = serde_json::from_str(lines.next().ok_or_else(|| bad("missing header"))?)?;
        let mut trees = Vec::with_capacity(header.params.n_trees);
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            if parts.next() != Some("tree") {
                return Err(bad("expected tree line"));
            }
            let count: usize = parts
                .nth(1)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad("bad node count"))?;
            let mut raw = Vec::with_capacity(count);
            for _ in 0..count {
                let line = lines.next().ok_or_else(|| bad("truncated tree"))?;
                let f: Vec<&str> = line.split_whitespace().collect();
                let node = match f.as_slice() {
                    ["S", feat, thr] => TreeNode::Split {
                        feature: feat.parse().map_err(|_| bad("bad feature"))?,
                        threshold: thr.parse().map_err(|_| bad("bad threshold"))?,
                        left: 0,
                        right: 0,
                    },
                    ["L", value, cnt] => TreeNode::Leaf {
                        value: value.parse().map_err(|_| bad("bad leaf value"))?,
                        count: cnt.parse().map_err(|_| bad("bad leaf count"))?,
                    },
                    _ => return Err(bad("bad node line")),
                };
                raw.push(node);
            }
            trees.push(link_preorder(raw).ok_or_else(|| bad("inconsistent preorder tree"))?);
        }
        if trees.len() != header.params.n_trees {
            return Err(bad("tree count does not match parameters"));
        }
        Ok(Self {
            trees,
            params: header.params,
            column_names: header.column_names,
            training_target_range: header.training_target_range,
            importances: header.importances,
            warnings: header.warnings,
        })
    }
}

const FOREST_MAGIC: &str = "hedonic-forest v1";

#[derive(Serialize, Deserialize)]
struct ForestHeader {
    params: ForestParams,
    column_names: Vec<String>,
    training_target_range: (f64, f64),
    importances: Vec<f64>,
    warnings: Vec<String>,
}

/// Restores child indices of a preorder node list from subtree sizes.
fn link_preorder(mut nodes: Vec<TreeNode>) -> Option<Tree> {
    let mut sizes: Vec<usize> = Vec::new();
    for i in (0..nodes.len()).rev() {
        match &mut nodes[i] {
            TreeNode::Leaf { .. } => sizes.push(1),
            TreeNode::Split { left, right, .. } => {
                let l = sizes.pop()?;
                let r = sizes.pop()?;
                *left = i + 1;
                *right = i + 1 + l;
                sizes.push(1 + l + r);
            }
        }
    }
    (sizes.len() == 1 && !nodes.is_empty()).then_some(Tree { nodes })
}

/// Columns ranked by importance (descending, ties by column order),
/// excluding the intercept.
pub fn variable_importance(fit: &ForestFit) -> Vec<(String, f64)> {
    let mut ranked: Vec<(usize, f64)> = fit.importances.iter().copied().enumerate().skip(1).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.iter().all(|(_, v)| *v == 0.0) {
        log::warn!("variable importances are all zero");
    }
    ranked
        .into_iter()
        .map(|(j, v)| (fit.column_names[j].clone(), v))
        .collect()
}

/// Writes the ranking as `name,importance`.
pub fn write_importance_csv(ranking: &[(String, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "importance"])?;
    for (name, v) in ranking {
        w.write_record([name.clone(), format!("{v:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}
