//! Model directories: `model.json` (encoding, scaler, tree layout) next to
//! one binary prototype file per (node, class, channel).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qppl::tasks::{HierarchyNode, Route};
use qppl::{EncodingConfig, FeatureScaler, HierarchySpec, MpsPrototype, PrototypeSet, ScaleMode};

use crate::config::Target;
use crate::error::CliError;

pub const MODEL_INDEX: &str = "model.json";
const FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format: u32,
    theta: f64,
    local_dim: usize,
    clamp_max: f64,
    scale_mode: String,
    scale_min: Vec<f64>,
    scale_max: Vec<f64>,
    root: String,
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    name: String,
    classes: Vec<String>,
    channels: usize,
    files: Vec<String>,
    routes: BTreeMap<String, Target>,
}

/// Writes `spec` under `dir` and returns the written paths.
pub fn save(spec: &HierarchySpec<f64>, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut nodes = Vec::new();
    for (i, node) in spec.nodes().iter().enumerate() {
        let sub = format!("n{i}");
        std::fs::create_dir_all(dir.join(&sub))?;
        let set = &node.set;
        let mut files = Vec::new();
        for k in 0..set.classes().len() {
            for c in 0..set.channels() {
                let rel = format!("{sub}/k{k}_c{c}.qppl");
                let path = dir.join(&rel);
                qppl::mps::save(set.prototype(k, c), &path)?;
                written.push(path);
                files.push(rel);
            }
        }
        let routes = node
            .routes
            .iter()
            .map(|(label, r)| {
                let t = match r {
                    Route::Leaf(l) => Target::Leaf(l.clone()),
                    Route::Node(j) => Target::Node(spec.nodes()[*j].name.clone()),
                };
                (label.clone(), t)
            })
            .collect();
        nodes.push(NodeEntry {
            name: node.name.clone(),
            classes: set.classes().to_vec(),
            channels: set.channels(),
            files,
            routes,
        });
    }
    let root = &spec.nodes()[spec.root()];
    let scaler = root.set.scaler();
    let index = Index {
        format: FORMAT,
        theta: root.set.encoding().theta,
        local_dim: root.set.encoding().local_dim,
        clamp_max: root.set.clamp_max(),
        scale_mode: match scaler.mode() {
            ScaleMode::PerFeature => "per_feature".into(),
            ScaleMode::Global => "global".into(),
        },
        scale_min: scaler.min().to_vec(),
        scale_max: scaler.max().to_vec(),
        root: root.name.clone(),
        nodes,
    };
    let path = dir.join(MODEL_INDEX);
    std::fs::write(&path, serde_json::to_string_pretty(&index)? + "\n")?;
    written.push(path);
    Ok(written)
}

/// Reads a model directory written by [`save`].
pub fn load(dir: &Path) -> Result<HierarchySpec<f64>, CliError> {
    let text = std::fs::read_to_string(dir.join(MODEL_INDEX))?;
    let index: Index = serde_json::from_str(&text)?;
    if index.format != FORMAT {
        return Err(CliError::Data(format!("model format {} unsupported (expected {FORMAT})", index.format)));
    }
    let mode = match index.scale_mode.as_str() {
        "per_feature" => ScaleMode::PerFeature,
        "global" => ScaleMode::Global,
        other => return Err(CliError::Data(format!("unknown scale mode `{other}`"))),
    };
    let scaler = FeatureScaler::from_bounds(index.scale_min, index.scale_max, mode)?;
    let encoding = EncodingConfig { theta: index.theta, local_dim: index.local_dim };
    encoding.validate()?;
    let position = |name: &str| {
        index
            .nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| CliError::Data(format!("model refers to unknown node `{name}`")))
    };
    let mut nodes = Vec::with_capacity(index.nodes.len());
    for entry in &index.nodes {
        let protos = entry
            .files
            .iter()
            .map(|f| qppl::mps::load::<f64>(dir.join(f)))
            .collect::<qppl::Result<Vec<MpsPrototype<f64>>>>()?;
        let set = PrototypeSet::new(entry.classes.clone(), entry.channels, protos, encoding, scaler.clone())?
            .with_clamp_max(index.clamp_max);
        let mut routes = BTreeMap::new();
        for (label, t) in &entry.routes {
            let r = match t {
                Target::Leaf(l) => Route::Leaf(l.clone()),
                Target::Node(n) => Route::Node(position(n)?),
            };
            routes.insert(label.clone(), r);
        }
        nodes.push(HierarchyNode { name: entry.name.clone(), set, routes });
    }
    Ok(HierarchySpec::new(nodes, position(&index.root)?)?)
}

/// The single prototype set of a flat model.
pub fn flat_set(spec: &HierarchySpec<f64>) -> Option<&PrototypeSet<f64>> {
    let root = &spec.nodes()[spec.root()];
    let flat = spec.nodes().len() == 1 && root.routes.iter().all(|(k, r)| matches!(r, Route::Leaf(l) if l == k));
    flat.then_some(&root.set)
}
