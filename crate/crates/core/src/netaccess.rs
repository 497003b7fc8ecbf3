//! Street networks, nearest-node snapping and bounded-radius network
//! aggregation of node attributes (the accessibility variables).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ListingTable;
use crate::error::{Error, Result};
use crate::geo::{haversine_m, unit_vector, KdTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Walk,
    Drive,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Walk => "walk",
            NetworkKind::Drive => "drive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
}

/// Undirected street edge, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: u64,
    pub v: u64,
    pub length_m: f64,
}

/// Weighted undirected street graph with geographic node coordinates.
#[derive(Debug, Clone)]
pub struct Network {
    kind: NetworkKind,
    ids: Vec<u64>,
    coords: Vec<(f64, f64)>,
    index: HashMap<u64, usize>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    lengths: Vec<f64>,
    tree: KdTree,
}

impl Network {
    /// Validates and builds a network. Duplicate undirected edges collapse to
    /// the shortest length.
    pub fn new(
        kind: NetworkKind,
        nodes: Vec<(u64, f64, f64)>,
        edges: impl IntoIterator<Item = (u64, u64, f64)>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, &(id, lat, lon)) in nodes.iter().enumerate() {
            if !(lat.is_finite() && lon.is_finite() && lat.abs() <= 90.0 && lon.abs() <= 180.0) {
                return Err(Error::InvalidParameter(format!(
                    "node {id} has invalid coordinates ({lat}, {lon})"
                )));
            }
            if index.insert(id, i).is_some() {
                return Err(Error::DuplicateNode(id));
            }
        }

        let mut collapsed: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for (u, v, length) in edges {
            for id in [u, v] {
                if !index.contains_key(&id) {
                    return Err(Error::UnknownNode(id));
                }
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            if !(length.is_finite() && length > 0.0) {
                return Err(Error::InvalidEdgeLength { u, v, length });
            }
            let key = (u.min(v), u.max(v));
            collapsed
                .entry(key)
                .and_modify(|l| *l = l.min(length))
                .or_insert(length);
        }
        let edges: Vec<Edge> = collapsed
            .into_iter()
            .map(|((u, v), length_m)| Edge { u, v, length_m })
            .collect();

        let n = nodes.len();
        let mut degree = vec![0usize; n];
        for e in &edges {
            degree[index[&e.u]] += 1;
            degree[index[&e.v]] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0usize; offsets[n]];
        let mut lengths = vec![0.0; offsets[n]];
        for e in &edges {
            let (a, b) = (index[&e.u], index[&e.v]);
            for (from, to) in [(a, b), (b, a)] {
                targets[fill[from]] = to;
                lengths[fill[from]] = e.length_m;
                fill[from] += 1;
            }
        }

        let ids: Vec<u64> = nodes.iter().map(|n| n.0).collect();
        let coords: Vec<(f64, f64)> = nodes.iter().map(|n| (n.1, n.2)).collect();
        let tree = KdTree::from_lat_lon(&coords);
        Ok(Self {
            kind,
            ids,
            coords,
            index,
            edges,
            offsets,
            targets,
            lengths,
            tree,
        })
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn node_id(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn node_index(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn coords(&self, index: usize) -> (f64, f64) {
        self.coords[index]
    }

    pub fn neighbors(&self, index: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[index]..self.offsets[index + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.lengths[r].iter().copied())
    }

    /// Internal index of the node nearest to (lat, lon) by haversine
    /// distance; ties go to the smallest node id.
    pub fn nearest_index(&self, lat: f64, lon: f64) -> usize {
        let q = unit_vector(lat, lon);
        let (best, d2) = self.tree.nearest(&q).expect("network is non-empty");
        let chord = d2.sqrt();
        let slack = chord + 1e-9 * chord + 1e-12;
        let candidates = self.tree.within(&q, slack * slack);
        if candidates.len() <= 1 {
            return best;
        }
        candidates
            .into_iter()
            .map(|i| {
                let (la, lo) = self.coords[i];
                (haversine_m(lat, lon, la, lo), self.ids[i], i)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, _, i)| i)
            .unwrap_or(best)
    }

    pub fn nearest_node(&self, lat: f64, lon: f64) -> u64 {
        self.ids[self.nearest_index(lat, lon)]
    }

    pub fn write_csv(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(nodes_path)?;
        w.write_record(["id", "lat", "lon"])?;
        for (id, (lat, lon)) in self.ids.iter().zip(&self.coords) {
            w.write_record([id.to_string(), lat.to_string(), lon.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(edges_path)?;
        w.write_record(["u", "v", "length_m"])?;
        for e in &self.edges {
            w.write_record([e.u.to_string(), e.v.to_string(), e.length_m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Node nearest to (lat, lon); see [`Network::nearest_index`] for the tie rule.
pub fn nearest_node(network: &Network, lat: f64, lon: f64) -> u64 {
    network.nearest_node(lat, lon)
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
}

fn column_positions(reader: &mut csv::Reader<std::fs::File>, path: &Path, names: &[&str]) -> Result<Vec<usize>> {
    let headers = reader.headers()?.clone();
    names
        .iter()
        .map(|&name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        message: format!("record {line}: cannot parse `{raw}`"),
    })
}

/// Loads `id,lat,lon` nodes and `u,v,length_m` edges.
pub fn load_network(nodes_path: &Path, edges_path: &Path, kind: NetworkKind) -> Result<Network> {
    let mut r = open_csv(nodes_path)?;
    let pos = column_positions(&mut r, nodes_path, &["id", "lat", "lon"])?;
    let mut nodes = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        nodes.push((
            parse_field(&rec, pos[0], nodes_path, line + 1)?,
            parse_field(&rec, pos[1], nodes_path, line + 1)?,
            parse_field(&rec, pos[2], nodes_path, line + 1)?,
        ));
    }
    let mut r = open_csv(edges_path)?;
    let pos = column_positions(&mut r, edges_path, &["u", "v", "length_m"])?;
    let mut edges = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        edges.push((
            parse_field(&rec, pos[0], edges_path, line + 1)?,
            parse_field(&rec, pos[1], edges_path, line + 1)?,
            parse_field(&rec, pos[2], edges_path, line + 1)?,
        ));
    }
    Network::new(kind, nodes, edges)
}

/// Nonnegative values attached to nodes of one network. Nodes without a value
/// are skipped by both sums and means.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLayer {
    name: String,
    values: Vec<Option<f64>>,
}

impl AttributeLayer {
    /// Builds a layer from `(node_id, value)` pairs; repeated ids accumulate.
    pub fn new(
        name: impl Into<String>,
        network: &Network,
        pairs: impl IntoIterator<Item = (u64, f64)>,
    ) -> Result<Self> {
        let name = name.into();
        let mut values = vec![None; network.node_count()];
        for (id, v) in pairs {
            let i = network.node_index(id).ok_or(Error::UnknownNode(id))?;
            check_value(&name, v)?;
            *values[i].get_or_insert(0.0) += v;
        }
        Ok(Self { name, values })
    }

    /// Layer with one value per node, in network index order.
    pub fn dense(name: impl Into<String>, network: &Network, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != network.node_count() {
            return Err(Error::LengthMismatch {
                left: network.node_count(),
                right: values.len(),
            });
        }
        for &v in &values {
            check_value(&name, v)?;
        }
        Ok(Self {
            name,
            values: values.into_iter().map(Some).collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.values[index]
    }

    /// Aggregate over the given node indices, accumulated in the given order.
    pub fn aggregate(&self, nodes: &[usize], agg: Aggregation) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &i in nodes {
            if let Some(v) = self.values[i] {
                sum += v;
                count += 1;
            }
        }
        match agg {
            Aggregation::Sum => sum,
            Aggregation::Mean if count == 0 => 0.0,
            Aggregation::Mean => sum / count as f64,
        }
    }
}

fn check_value(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "layer `{name}` value {v} must be finite and nonnegative"
        )))
    }
}

/// Reads a `node_id,<layer>...` CSV into one layer per value column. Empty
/// cells leave the node without a value.
pub fn load_layers(path: &Path, network: &Network) -> Result<Vec<AttributeLayer>> {
    let mut r = open_csv(path)?;
    let pos = column_positions(&mut r, path, &["node_id"])?[0];
    let headers = r.headers()?.clone();
    let cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut pairs: Vec<Vec<(u64, f64)>> = vec![Vec::new(); cols.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let id: u64 = parse_field(&rec, pos, path, line + 1)?;
        for (slot, &(i, _)) in pairs.iter_mut().zip(&cols) {
            if rec.get(i).is_some_and(|s| !s.is_empty()) {
                slot.push((id, parse_field(&rec, i, path, line + 1)?));
            }
        }
    }
    cols.into_iter()
        .zip(pairs)
        .map(|((_, name), p)| AttributeLayer::new(name, network, p))
        .collect()
}

pub fn write_layers(path: &Path, network: &Network, layers: &[AttributeLayer]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["node_id".to_string()];
    header.extend(layers.iter().map(|l| l.name.clone()));
    w.write_record(&header)?;
    for i in 0..network.node_count() {
        let mut rec = vec![network.node_id(i).to_string()];
        rec.extend(
            layers
                .iter()
                .map(|l| l.values[i].map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable scratch state for radius-bounded single-source Dijkstra.
pub struct BoundedDijkstra<'a> {
    network: &'a Network,
    dist: Vec<f64>,
    touched: Vec<usize>,
    heap: BinaryHeap<HeapEntry>,
}

impl<'a> BoundedDijkstra<'a> {
    pub fn new(network: &'a Network) -> Self {
        Self {
            network,
            dist: vec![f64::INFINITY; network.node_count()],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    /// Fills `out` with every node whose network distance from `source` is at
    /// most `radius`, sorted by node index. The search never expands a node
    /// beyond the radius.
    pub fn reach(&mut self, source: usize, radius: f64, out: &mut Vec<usize>) {
        for &i in &self.touched {
            self.dist[i] = f64::INFINITY;
        }
        self.touched.clear();
        self.heap.clear();
        out.clear();

        self.dist[source] = 0.0;
        self.touched.push(source);
        self.heap.push(HeapEntry { dist: 0.0, node: source });
        while let Some(HeapEntry { dist, node }) = self.heap.pop() {
            if dist > self.dist[node] {
                continue;
            }
            out.push(node);
            for (next, len) in self.network.neighbors(node) {
                let nd = dist + len;
                if nd <= radius && nd < self.dist[next] {
                    if self.dist[next].is_infinite() {
                        self.touched.push(next);
                    }
                    self.dist[next] = nd;
                    self.heap.push(HeapEntry { dist: nd, node: next });
                }
            }
        }
        out.sort_unstable();
    }

    /// Network distance to `node` from the last `reach` call, if settled.
    pub fn distance(&self, node: usize) -> Option<f64> {
        self.dist[node].is_finite().then_some(self.dist[node])
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_finite() && radius > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")))
    }
}

/// For every node, the aggregate of `layer` over all nodes within `radius`
/// meters of network distance (the node itself included).
pub fn range_aggregate(
    network: &Network,
    layer: &AttributeLayer,
    radius: f64,
    agg: Aggregation,
) -> Result<BTreeMap<u64, f64>> {
    check_radius(radius)?;
    let values: Vec<f64> = (0..network.node_count())
        .into_par_iter()
        .map_init(
            || (BoundedDijkstra::new(network), Vec::new()),
            |(search, buf), s| {
                search.reach(s, radius, buf);
                layer.aggregate(buf, agg)
            },
        )
        .collect();
    Ok(network.node_ids().iter().copied().zip(values).collect())
}

/// One accessibility variable to materialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub output_name: String,
    pub layer: String,
    pub radius_m: f64,
    pub network: NetworkKind,
    pub agg: Aggregation,
}

/// Walk radii above this, or drive radii at or below it, break convention.
pub const WALK_DRIVE_CUTOFF_M: f64 = 3000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub entries: Vec<FeatureEntry>,
}

impl FeatureSpec {
    /// The fourteen accessibility variables of the Bay Area rent model.
    /// Counts are summed; average unit size is a mean.
    pub fn bay_area() -> Self {
        use Aggregation::{Mean, Sum};
        use NetworkKind::{Drive, Walk};
        let e = |name: &str, layer: &str, radius_m: f64, network, agg| FeatureEntry {
            output_name: name.to_string(),
            layer: layer.to_string(),
            radius_m,
            network,
            agg,
        };
        Self {
            entries: vec![
                e("units_500_walk", "units", 500.0, Walk, Sum),
                e("sqft_unit_500_walk", "sqft_unit", 500.0, Walk, Mean),
                e("rich_500_walk", "rich", 500.0, Walk, Sum),
                e("singles_500_walk", "singles", 500.0, Walk, Sum),
                e("elderly_hh_500_walk", "elderly_hh", 500.0, Walk, Sum),
                e("children_500_walk", "children", 500.0, Walk, Sum),
                e("jobs_500_walk", "jobs", 500.0, Walk, Sum),
                e("jobs_1500_walk", "jobs", 1500.0, Walk, Sum),
                e("jobs_10000", "jobs", 10_000.0, Drive, Sum),
                e("jobs_25000", "jobs", 25_000.0, Drive, Sum),
                e("pop_10000", "pop", 10_000.0, Drive, Sum),
                e("pop_black_10000", "pop_black", 10_000.0, Drive, Sum),
                e("pop_hisp_10000", "pop_hisp", 10_000.0, Drive, Sum),
                e("pop_asian_10000", "pop_asian", 10_000.0, Drive, Sum),
            ],
        }
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.output_name.as_str()).collect()
    }

    /// Hard errors: non-positive radius, duplicate output names.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            check_radius(e.radius_m)?;
            if !seen.insert(e.output_name.as_str()) {
                return Err(Error::ColumnCollision(e.output_name.clone()));
            }
        }
        Ok(())
    }

    /// Entries that break the walk ≤ 3 km < drive convention.
    pub fn convention_warnings(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| match e.network {
                NetworkKind::Walk if e.radius_m > WALK_DRIVE_CUTOFF_M => Some(format!(
                    "`{}`: walk radius {} m exceeds {} m",
                    e.output_name, e.radius_m, WALK_DRIVE_CUTOFF_M
                )),
                NetworkKind::Drive if e.radius_m <= WALK_DRIVE_CUTOFF_M => Some(format!(
                    "`{}`: drive radius {} m is at or below {} m",
                    e.output_name, e.radius_m, WALK_DRIVE_CUTOFF_M
                )),
                _ => None,
            })
            .collect()
    }
}

/// Attribute layers for the walk and drive networks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeAttributes {
    pub walk: Vec<AttributeLayer>,
    pub drive: Vec<AttributeLayer>,
}

impl NodeAttributes {
    pub fn layer(&self, network: NetworkKind, name: &str) -> Option<&AttributeLayer> {
        let layers = match network {
            NetworkKind::Walk => &self.walk,
            NetworkKind::Drive => &self.drive,
        };
        layers.iter().find(|l| l.name == name)
    }
}

/// Snaps every listing to its nearest node on each network and appends one
/// feature column per spec entry.
pub fn build_features(
    listings: &ListingTable,
    walk: &Network,
    drive: &Network,
    layers: &NodeAttributes,
    spec: &FeatureSpec,
) -> Result<ListingTable> {
    spec.validate()?;
    for e in &spec.entries {
        if layers.layer(e.network, &e.layer).is_none() {
            return Err(Error::UnknownLayer(format!("{} ({})", e.layer, e.network)));
        }
        if listings.has_column(&e.output_name) {
            return Err(Error::ColumnCollision(e.output_name.clone()));
        }
    }
    for w in spec.convention_warnings() {
        log::warn!("feature spec convention: {w}");
    }

    let snap = |net: &Network| -> Vec<usize> {
        listings
            .listings()
            .par_iter()
            .map(|l| net.nearest_index(l.lat, l.lon))
            .collect()
    };
    let walk_nodes = snap(walk);
    let drive_nodes = snap(drive);

    // Group entries sharing (network, radius) so each source is searched once.
    let mut groups: BTreeMap<(NetworkKind, u64), Vec<usize>> = BTreeMap::new();
    for (i, e) in spec.entries.iter().enumerate() {
        groups
            .entry((e.network, e.radius_m.to_bits()))
            .or_default()
            .push(i);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); spec.entries.len()];
    for ((kind, radius_bits), members) in groups {
        let radius = f64::from_bits(radius_bits);
        let (net, assigned) = match kind {
            NetworkKind::Walk => (walk, &walk_nodes),
            NetworkKind::Drive => (drive, &drive_nodes),
        };
        let mut sources = assigned.clone();
        sources.sort_unstable();
        sources.dedup();
        let group_layers: Vec<(&AttributeLayer, Aggregation)> = members
            .iter()
            .map(|&i| {
                let e = &spec.entries[i];
                (layers.layer(kind, &e.layer).expect("checked above"), e.agg)
            })
            .collect();
        let per_source: Vec<Vec<f64>> = sources
            .par_iter()
            .map_init(
                || (BoundedDijkstra::new(net), Vec::new()),
                |(search, buf), &s| {
                    search.reach(s, radius, buf);
                    group_layers
                        .iter()
                        .map(|(layer, agg)| layer.aggregate(buf, *agg))
                        .collect()
                },
            )
            .collect();
        let slot: HashMap<usize, usize> = sources.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        for (m, &entry) in members.iter().enumerate() {
            columns[entry] = assigned.iter().map(|s| per_source[slot[s]][m]).collect();
        }
    }

    let mut out = listings.clone();
    for (e, values) in spec.entries.iter().zip(columns) {
        out.add_column(e.output_name.clone(), values)?;
    }
    Ok(out)
}
