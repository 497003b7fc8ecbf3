//! Batch pipeline: one TOML config, six subcommands, a manifest per run.
//!
//! Data inputs default to `<output_dir>/data/`, which is where `synth`
//! writes. Every artifact lands under `output_dir`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_synthetic_region, id_index, load_listings, profile, split_indices, ListingTable, RegionSpec, SplitSpec,
    BUILTIN_COLUMNS,
};
use crate::diagnostics::{emit_report, DiagnosticsParams, EvaluatedRow, EvaluationReport, Split};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, variable_importance, write_importance_csv, ForestFit, ForestParams};
use crate::netaccess::{
    build_features, load_layers, load_network, write_layers, FeatureSpec, NetworkKind, NodeAttributes,
};
use crate::ols::{fit_ols, OlsFit};
use crate::preprocess::{DesignMatrix, TransformRecord, DEFAULT_CLIP_PERCENTILE};

pub const EXIT_STAGE_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hedonic", version, about = "Hedonic rent models on network accessibility features")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Stage,
    /// TOML config file; built-in defaults are used when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set forest.n_trees=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Features,
    Profile,
    Train,
    Evaluate,
    All,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::Profile => "profile",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::All => "all",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
    pub listings: Option<PathBuf>,
    pub walk_nodes: Option<PathBuf>,
    pub walk_edges: Option<PathBuf>,
    pub walk_layers: Option<PathBuf>,
    pub drive_nodes: Option<PathBuf>,
    pub drive_edges: Option<PathBuf>,
    pub drive_layers: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            listings: None,
            walk_nodes: None,
            walk_edges: None,
            walk_layers: None,
            drive_nodes: None,
            drive_edges: None,
            drive_layers: None,
        }
    }
}

/// Input files after defaults are filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputPaths {
    pub listings: PathBuf,
    pub walk_nodes: PathBuf,
    pub walk_edges: PathBuf,
    pub walk_layers: PathBuf,
    pub drive_nodes: PathBuf,
    pub drive_edges: PathBuf,
    pub drive_layers: PathBuf,
}

impl InputPaths {
    fn under(dir: &Path) -> Self {
        Self {
            listings: dir.join("listings.csv"),
            walk_nodes: dir.join("walk_nodes.csv"),
            walk_edges: dir.join("walk_edges.csv"),
            walk_layers: dir.join("walk_layers.csv"),
            drive_nodes: dir.join("drive_nodes.csv"),
            drive_edges: dir.join("drive_edges.csv"),
            drive_layers: dir.join("drive_layers.csv"),
        }
    }

    fn iter(&self) -> [(&'static str, &Path); 7] {
        [
            ("listings", &self.listings),
            ("walk_nodes", &self.walk_nodes),
            ("walk_edges", &self.walk_edges),
            ("walk_layers", &self.walk_layers),
            ("drive_nodes", &self.drive_nodes),
            ("drive_edges", &self.drive_edges),
            ("drive_layers", &self.drive_layers),
        ]
    }
}

impl PathsConfig {
    fn explicit(&self) -> [Option<&PathBuf>; 7] {
        [
            self.listings.as_ref(),
            self.walk_nodes.as_ref(),
            self.walk_edges.as_ref(),
            self.walk_layers.as_ref(),
            self.drive_nodes.as_ref(),
            self.drive_edges.as_ref(),
            self.drive_layers.as_ref(),
        ]
    }

    /// True when no input file is configured, i.e. the run works on a
    /// synthetic region under the output directory.
    pub fn uses_synthetic_data(&self) -> bool {
        self.explicit().iter().all(Option::is_none)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn inputs(&self) -> InputPaths {
        let d = InputPaths::under(&self.data_dir());
        let pick = |o: &Option<PathBuf>, default: PathBuf| o.clone().unwrap_or(default);
        InputPaths {
            listings: pick(&self.listings, d.listings),
            walk_nodes: pick(&self.walk_nodes, d.walk_nodes),
            walk_edges: pick(&self.walk_edges, d.walk_edges),
            walk_layers: pick(&self.walk_layers, d.walk_layers),
            drive_nodes: pick(&self.drive_nodes, d.drive_nodes),
            drive_edges: pick(&self.drive_edges, d.drive_edges),
            drive_layers: pick(&self.drive_layers, d.drive_layers),
        }
    }

    pub fn features_csv(&self) -> PathBuf {
        self.output_dir.join("features").join("listings_features.csv")
    }

    pub fn profile_csv(&self) -> PathBuf {
        self.output_dir.join("profile").join("profile.csv")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.output_dir.join("models")
    }

    pub fn manifest(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub region: RegionSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            region: RegionSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub target: String,
    pub features: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let mut features = vec!["sqft".to_string()];
        features.extend(FeatureSpec::bay_area().output_names().into_iter().map(String::from));
        Self {
            target: "rent_sqft".into(),
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub clip_percentile: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clip_percentile: DEFAULT_CLIP_PERCENTILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsConfig {
    pub enabled: bool,
}

impl Default for OlsConfig {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub features: FeatureSpec,
    pub model: ModelConfig,
    pub split: SplitSpec,
    pub preprocess: PreprocessConfig,
    pub ols: OlsConfig,
    pub forest: ForestParams,
    pub diagnostics: DiagnosticsParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            features: FeatureSpec::bay_area(),
            model: ModelConfig::default(),
            split: SplitSpec::default(),
            preprocess: PreprocessConfig::default(),
            ols: OlsConfig::default(),
            forest: ForestParams::default(),
            diagnostics: DiagnosticsParams::default(),
        }
    }
}

/// A config problem, reported before any stage runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parses `key.path=value`. Values are read as TOML literals and fall back to
/// plain strings, so `--set paths.output_dir=runs/a` needs no quoting.
fn parse_override(raw: &str) -> std::result::Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::new("--set", format!("expected KEY=VALUE, got `{raw}`")))?;
    let key = key.trim();
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new("--set", format!("malformed key `{key}`")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> std::result::Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut table = root;
    for (depth, part) in parents.iter().enumerate() {
        let entry = table
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            ConfigError::new(path[..=depth].join("."), "is not a table and cannot take sub-keys")
        })?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (or starts from defaults), applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> std::result::Result<Self, ConfigError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("", format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| ConfigError::new("", format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            apply_override(&mut root, &key, value)?;
        }
        let config: Self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::new("", e.to_string().trim_end()))?;
        config.validate()?;
        Ok(config)
    }

    /// Range and consistency checks that need no files.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let field = |f: &str, e: Error| ConfigError::new(f, e);
        self.features.validate().map_err(|e| field("features", e))?;
        for w in self.features.convention_warnings() {
            log::warn!("features: {w}");
        }

        let m = &self.model;
        if !matches!(m.target.as_str(), "rent_sqft" | "rent") {
            return Err(ConfigError::new("model.target", "must be `rent_sqft` or `rent`"));
        }
        if m.features.is_empty() {
            return Err(ConfigError::new("model.features", "must name at least one column"));
        }
        let outputs = self.features.output_names();
        let mut seen = std::collections::HashSet::new();
        for f in &m.features {
            let builtin = BUILTIN_COLUMNS.contains(&f.as_str()) && !matches!(f.as_str(), "id" | "rent" | "rent_sqft");
            if !builtin && !outputs.contains(&f.as_str()) {
                return Err(ConfigError::new(
                    "model.features",
                    format!("`{f}` is neither a listing column nor a configured feature"),
                ));
            }
            if !seen.insert(f) {
                return Err(ConfigError::new("model.features", format!("`{f}` listed twice")));
            }
        }

        let s = &self.split;
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(ConfigError::new("split.train_fraction", "must lie strictly between 0 and 1"));
        }
        let pct = self.preprocess.clip_percentile;
        if !(pct > 0.0 && pct < 1.0) {
            return Err(ConfigError::new("preprocess.clip_percentile", "must lie strictly between 0 and 1"));
        }
        self.forest
            .validate(m.features.len())
            .map_err(|e| field("forest", e))?;
        let d = &self.diagnostics;
        for (name, v) in [
            ("diagnostics.bins", d.bins),
            ("diagnostics.k_neighbors", d.k_neighbors),
            ("diagnostics.scatter_cap", d.scatter_cap),
        ] {
            if v == 0 {
                return Err(ConfigError::new(name, "must be at least 1"));
            }
        }

        if !self.paths.uses_synthetic_data() && self.paths.explicit().iter().any(Option::is_none) {
            return Err(ConfigError::new(
                "paths",
                "set all of listings, walk_nodes, walk_edges, walk_layers, drive_nodes, drive_edges, drive_layers, or none",
            ));
        }
        self.region_spec().validate().map_err(|e| field("synth.region", e))?;
        Ok(())
    }

    /// The generator spec, with the pipeline's own feature spec substituted.
    pub fn region_spec(&self) -> RegionSpec {
        RegionSpec {
            feature_spec: self.features.clone(),
            ..self.synth.region.clone()
        }
    }

    /// Stages that `command` runs, in order.
    pub fn plan(&self, command: Stage) -> Vec<Stage> {
        match command {
            Stage::All => {
                let mut v = Vec::new();
                if self.paths.uses_synthetic_data() {
                    v.push(Stage::Synth);
                }
                v.extend([Stage::Features, Stage::Profile, Stage::Train, Stage::Evaluate]);
                v
            }
            s => vec![s],
        }
    }

    /// Checks that every file the planned stages read either exists or is
    /// produced by an earlier stage of the same run.
    pub fn check_inputs(&self, plan: &[Stage]) -> std::result::Result<(), ConfigError> {
        let produced = |s: Stage| plan.contains(&s);
        let missing = |field: &str, p: &Path| ConfigError::new(field, format!("{} does not exist", p.display()));
        for stage in plan {
            match stage {
                Stage::Features if !produced(Stage::Synth) => {
                    for (name, p) in self.paths.inputs().iter() {
                        if !p.is_file() {
                            return Err(missing(&format!("paths.{name}"), p));
                        }
                    }
                }
                Stage::Profile | Stage::Train if !produced(Stage::Features) => {
                    let p = self.paths.features_csv();
                    if !p.is_file() {
                        return Err(missing("paths.output_dir", &p));
                    }
                }
                Stage::Evaluate if !produced(Stage::Train) => {
                    let dir = self.paths.models_dir();
                    let mut needed = vec![TRANSFORM_FILE, FOREST_FILE, SPLIT_FILE];
                    if self.ols.enabled {
                        needed.push(OLS_FILE);
                    }
                    for f in needed {
                        let p = dir.join(f);
                        if !p.is_file() {
                            return Err(missing("paths.output_dir", &p));
                        }
                    }
                    let p = self.paths.features_csv();
                    if !p.is_file() {
                        return Err(missing("paths.output_dir", &p));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub const TRANSFORM_FILE: &str = "transform.json";
pub const OLS_FILE: &str = "ols_fit.json";
pub const OLS_COEFFICIENTS_FILE: &str = "ols_coefficients.csv";
pub const FOREST_FILE: &str = "forest.txt";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: String,
    pub wall_clock_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub synth: u64,
    pub split: u64,
    pub forest: u64,
    pub diagnostics: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: Stage,
    pub config_hash: String,
    pub threads: usize,
    pub seeds: Seeds,
    pub status: String,
    pub stages: Vec<StageRecord>,
    /// Every setting, including ones left at their defaults.
    pub config: PipelineConfig,
    pub resolved_max_features: usize,
}

impl Manifest {
    fn new(config: &PipelineConfig, command: Stage) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config_hash: config.hash(),
            threads: rayon::current_num_threads(),
            seeds: Seeds {
                synth: config.synth.seed,
                split: config.split.seed,
                forest: config.forest.seed,
                diagnostics: config.diagnostics.seed,
            },
            status: "running".into(),
            stages: Vec::new(),
            config: config.clone(),
            resolved_max_features: config.forest.resolved_max_features(config.model.features.len()),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Runs the planned stages in order, stopping at the first failure. The
/// manifest is written after every stage so partial runs are visible.
pub fn run(config: &PipelineConfig, command: Stage) -> Result<Manifest> {
    let plan = config.plan(command);
    let mut manifest = Manifest::new(config, command);
    let path = config.paths.manifest();
    std::fs::create_dir_all(&config.paths.output_dir)?;
    for stage in plan {
        log::info!("stage {stage}: start");
        let start = Instant::now();
        let outcome = run_stage(config, stage);
        let wall_clock_s = start.elapsed().as_secs_f64();
        let failed = outcome.is_err();
        manifest.stages.push(StageRecord {
            stage,
            status: if failed { "failed" } else { "ok" }.into(),
            wall_clock_s,
            error: outcome.as_ref().err().map(ToString::to_string),
        });
        if let Err(e) = outcome {
            manifest.status = "failed".into();
            manifest.write(&path)?;
            log::error!("stage {stage} failed: {e}");
            return Err(e);
        }
        log::info!("stage {stage}: done in {wall_clock_s:.2} s");
        manifest.write(&path)?;
    }
    manifest.status = "ok".into();
    manifest.write(&path)?;
    Ok(manifest)
}

pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<()> {
    match stage {
        Stage::Synth => stage_synth(config),
        Stage::Features => stage_features(config),
        Stage::Profile => stage_profile(config),
        Stage::Train => stage_train(config),
        Stage::Evaluate => stage_evaluate(config),
        Stage::All => {
            for s in config.plan(Stage::All) {
                run_stage(config, s)?;
            }
            Ok(())
        }
    }
}

fn stage_synth(config: &PipelineConfig) -> Result<()> {
    let region = generate_synthetic_region(&config.region_spec(), config.synth.seed)?;
    let dir = config.paths.data_dir();
    std::fs::create_dir_all(&dir)?;
    let p = InputPaths::under(&dir);
    region.listings.write_csv(&p.listings)?;
    region.walk.write_csv(&p.walk_nodes, &p.walk_edges)?;
    region.drive.write_csv(&p.drive_nodes, &p.drive_edges)?;
    write_layers(&p.walk_layers, &region.walk, &region.attributes.walk)?;
    write_layers(&p.drive_layers, &region.drive, &region.attributes.drive)?;
    std::fs::write(dir.join(GROUND_TRUTH_FILE), serde_json::to_string_pretty(&region.truth)? + "\n")?;
    log::info!(
        "synth: {} listings, {} walk nodes, {} drive nodes",
        region.listings.len(),
        region.walk.node_count(),
        region.drive.node_count()
    );
    Ok(())
}

fn stage_features(config: &PipelineConfig) -> Result<()> {
    let p = config.paths.inputs();
    let (listings, summary) = load_listings(&p.listings)?;
    log::info!("{summary}");
    let walk = load_network(&p.walk_nodes, &p.walk_edges, NetworkKind::Walk)?;
    let drive = load_network(&p.drive_nodes, &p.drive_edges, NetworkKind::Drive)?;
    let attributes = NodeAttributes {
        walk: load_layers(&p.walk_layers, &walk)?,
        drive: load_layers(&p.drive_layers, &drive)?,
    };
    let table = build_features(&listings, &walk, &drive, &attributes, &config.features)?;
    let out = config.paths.features_csv();
    std::fs::create_dir_all(out.parent().expect("nested path"))?;
    table.write_csv(&out)
}

fn load_features(config: &PipelineConfig) -> Result<ListingTable> {
    Ok(load_listings(&config.paths.features_csv())?.0)
}

fn fit_transform(config: &PipelineConfig, table: &ListingTable) -> Result<TransformRecord> {
    TransformRecord::fit(
        table,
        &config.model.target,
        &config.model.features,
        config.preprocess.clip_percentile,
    )
}

fn stage_profile(config: &PipelineConfig) -> Result<()> {
    let table = load_features(config)?;
    let record = fit_transform(config, &table)?;
    // Profile after clipping, before logs.
    let mut clipped = ListingTable::new(table.listings().to_vec());
    for c in table.feature_columns() {
        let threshold = record
            .features
            .iter()
            .find(|t| t.name == c.name)
            .and_then(|t| t.clip_threshold);
        let values = match threshold {
            Some(t) => c.values.iter().map(|&v| v.min(t)).collect(),
            None => c.values.clone(),
        };
        clipped.add_column(c.name.clone(), values)?;
    }
    let out = config.paths.profile_csv();
    std::fs::create_dir_all(out.parent().expect("nested path"))?;
    profile(&clipped)?.write_csv(&out)
}

fn write_split(path: &Path, ids: &[u64], train: &[usize]) -> Result<()> {
    let mut is_train = vec![false; ids.len()];
    for &i in train {
        is_train[i] = true;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "split"])?;
    for (id, t) in ids.iter().zip(is_train) {
        w.write_record([id.to_string(), if t { "train" } else { "test" }.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_split(path: &Path) -> Result<BTreeMap<u64, Split>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            message: format!("bad split row {rec:?}"),
        };
        let id: u64 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let split = match rec.get(1) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            _ => return Err(bad()),
        };
        out.insert(id, split);
    }
    Ok(out)
}

fn stage_train(config: &PipelineConfig) -> Result<()> {
    let table = load_features(config)?;
    let record = fit_transform(config, &table)?;
    let (train_idx, _) = split_indices(table.len(), &config.split)?;
    let train = table.select(&train_idx);
    let design = record.apply(&train)?;

    let dir = config.paths.models_dir();
    std::fs::create_dir_all(&dir)?;
    record.save(&dir.join(TRANSFORM_FILE))?;
    write_split(&dir.join(SPLIT_FILE), &table.ids(), &train_idx)?;

    if config.ols.enabled {
        let ols = fit_ols(&design)?;
        log::info!("ols: r2 = {:.4}, adj_r2 = {:.4}, rmse = {:.4}", ols.r2, ols.adj_r2, ols.rmse);
        ols.save(&dir.join(OLS_FILE))?;
        ols.write_coefficients(&dir.join(OLS_COEFFICIENTS_FILE))?;
    }
    let forest = fit_forest(&design, &config.forest)?;
    for w in &forest.warnings {
        log::warn!("forest: {w}");
    }
    forest.save(&dir.join(FOREST_FILE))?;
    write_importance_csv(&variable_importance(&forest), &dir.join(IMPORTANCE_FILE))
}

enum Model {
    Ols(OlsFit),
    Forest(ForestFit),
}

impl Model {
    fn name(&self) -> &'static str {
        match self {
            Model::Ols(_) => "ols",
            Model::Forest(_) => "forest",
        }
    }

    fn predict(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Ols(f) => crate::ols::predict_ols(f, design),
            Model::Forest(f) => crate::forest::predict_forest(f, design),
        }
    }
}

fn stage_evaluate(config: &PipelineConfig) -> Result<()> {
    let dir = config.paths.models_dir();
    let record = TransformRecord::load(&dir.join(TRANSFORM_FILE))?;
    let assignment = read_split(&dir.join(SPLIT_FILE))?;
    let mut models = Vec::new();
    if config.ols.enabled {
        models.push(Model::Ols(OlsFit::load(&dir.join(OLS_FILE))?));
    }
    models.push(Model::Forest(ForestFit::load(&dir.join(FOREST_FILE))?));

    let table = load_features(config)?;
    let index = id_index(&table);
    for split in [Split::Train, Split::Test] {
        let rows: Vec<usize> = table
            .listings()
            .iter()
            .enumerate()
            .filter(|(_, l)| assignment.get(&l.id) == Some(&split))
            .map(|(i, _)| i)
            .collect();
        if rows.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let design = record.apply(&table.select(&rows))?;
        for model in &models {
            let predicted = model.predict(&design)?;
            let evaluated = design
                .row_ids()
                .iter()
                .zip(predicted)
                .zip(design.y())
                .map(|((&id, predicted), &observed)| {
                    let l = &table.listings()[index[&id]];
                    EvaluatedRow {
                        id,
                        lat: l.lat,
                        lon: l.lon,
                        predicted,
                        observed,
                    }
                })
                .collect();
            let report = EvaluationReport::build(model.name(), split, evaluated, &config.diagnostics)?;
            emit_report(&report, &config.paths.output_dir)?;
        }
    }
    Ok(())
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let config = match PipelineConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("config error: --threads must be at least 1");
            return EXIT_CONFIG_ERROR;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    if let Err(e) = config.check_inputs(&config.plan(cli.command)) {
        eprintln!("config error: {e}");
        return EXIT_CONFIG_ERROR;
    }
    match run(&config, cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_STAGE_FAILURE
        }
    }
}
