//! Run configuration: one TOML document per run. Unknown keys are rejected
//! everywhere so that typos fail loudly instead of silently using defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qppl::embed::AffinityInput;
use qppl::{InitMode, ScaleMode, TrainConfig, TsneConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed for splits, synthetic data, initialization and t-SNE.
    pub seed: u64,
    /// Repeat `classify` once per seed and report mean and std.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub encoding: EncodingSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Use a model directory written by `qppl train` instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<AnomalySection>,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id_column: Option<String>,
        #[serde(default = "one")]
        channels: usize,
        /// Separate test file; without it the data is split by `train_fraction`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "yes")]
        stratified: bool,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        /// 2x2 mean pooling (28x28 to 14x14).
        #[serde(default = "yes")]
        downsample: bool,
        /// Keep the first n images of every class.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_per_class: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_per_class: Option<usize>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    Blobs {
        n_per_class: usize,
        classes: usize,
        features: usize,
        separation: f64,
        #[serde(default = "default_blob_std")]
        std: f64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSetting {
    #[default]
    PerFeature,
    Global,
}

impl From<ScaleSetting> for ScaleMode {
    fn from(s: ScaleSetting) -> Self {
        match s {
            ScaleSetting::PerFeature => ScaleMode::PerFeature,
            ScaleSetting::Global => ScaleMode::Global,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingSection {
    pub theta: f64,
    pub scale: ScaleSetting,
    /// Upper clamp on NLF distances.
    pub clamp_max: f64,
}

impl Default for EncodingSection {
    fn default() -> Self {
        Self { theta: 1.0, scale: ScaleSetting::default(), clamp_max: qppl::DEFAULT_CLAMP_MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitSetting {
    Gaussian,
    #[default]
    NearUniform,
    NearIdentity,
}

impl From<InitSetting> for InitMode {
    fn from(s: InitSetting) -> Self {
        match s {
            InitSetting::Gaussian => InitMode::Gaussian,
            InitSetting::NearUniform => InitMode::NearUniform,
            InitSetting::NearIdentity => InitMode::NearIdentity,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub bond_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Lower clamp on per-sample normalized log overlaps.
    pub clamp: f64,
    pub renormalize_every: usize,
    pub convergence_tol: f64,
    pub init: InitSetting,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            bond_dim: d.bond_dim,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            clamp: d.min_log_overlap_clamp,
            renormalize_every: d.renormalize_every,
            convergence_tol: d.convergence_tol,
            init: InitSetting::default(),
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            bond_dim: self.bond_dim,
            seed,
            min_log_overlap_clamp: self.clamp,
            convergence_tol: self.convergence_tol,
            renormalize_every: self.renormalize_every,
            init: self.init.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Node(String),
    Leaf(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    pub root: String,
    /// node name -> branch label -> `{ node = "..." }` or `{ leaf = "..." }`
    pub nodes: BTreeMap<String, BTreeMap<String, Target>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySection {
    /// Classes treated as normal; prototypes are trained on these only and
    /// every other label counts as an anomaly.
    pub normal_classes: Vec<String>,
    /// Fixed score threshold; otherwise a quantile of training scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default = "default_quantile")]
    pub threshold_quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Euclidean,
    Nlf,
    Augmented,
    Prototype,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Euclidean => "euclidean",
            Variant::Nlf => "nlf",
            Variant::Augmented => "augmented",
            Variant::Prototype => "prototype",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Variant::Augmented | Variant::Prototype)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    #[default]
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AffinitySetting {
    #[default]
    Auto,
    AsIs,
    Squared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub variants: Vec<Variant>,
    pub part: Part,
    /// Keep the first n samples of every class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    /// Run t-SNE on the prototype-distance coordinates when there are more
    /// than two classes.
    pub prototype_tsne: bool,
    pub output_dim: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub kl_every: usize,
    pub affinity: AffinitySetting,
}

impl Default for EmbedSection {
    fn default() -> Self {
        let t = TsneConfig::default();
        Self {
            variants: vec![Variant::Euclidean, Variant::Nlf, Variant::Augmented, Variant::Prototype],
            part: Part::All,
            per_class: None,
            prototype_tsne: true,
            output_dim: t.output_dim,
            perplexity: t.perplexity,
            iterations: t.iterations,
            early_exaggeration: t.early_exaggeration,
            exaggeration_iters: t.exaggeration_iters,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            final_momentum: t.final_momentum,
            momentum_switch_iter: t.momentum_switch_iter,
            kl_every: t.kl_every,
            affinity: AffinitySetting::Auto,
        }
    }
}

impl EmbedSection {
    pub fn tsne(&self, seed: u64) -> TsneConfig {
        TsneConfig {
            output_dim: self.output_dim,
            perplexity: self.perplexity,
            iterations: self.iterations,
            early_exaggeration: self.early_exaggeration,
            exaggeration_iters: self.exaggeration_iters,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            final_momentum: self.final_momentum,
            momentum_switch_iter: self.momentum_switch_iter,
            seed,
            kl_every: self.kl_every,
            affinity_input: match self.affinity {
                AffinitySetting::Auto => AffinityInput::Auto,
                AffinitySetting::AsIs => AffinityInput::AsIs,
                AffinitySetting::Squared => AffinityInput::Squared,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub trials: usize,
    pub max_sites: usize,
    pub max_bond_dim: usize,
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub clamp: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { trials: 20, max_sites: 8, max_bond_dim: 4, samples: 5, step: 1e-5, tolerance: 1e-5, clamp: -30.0 }
    }
}

fn default_label_column() -> String {
    "label".into()
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_blob_std() -> f64 {
    0.1
}
fn default_quantile() -> f64 {
    0.95
}

/// A parsed config plus the directory its relative paths are resolved from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    /// The effective document after overrides, as written to the manifest.
    pub text: String,
}

/// Reads `path`, applies `key.path=value` overrides and validates the result.
pub fn load(path: &Path, overrides: &[String]) -> Result<Loaded, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: toml::Table = raw.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let text = toml::to_string(&doc).map_err(|e| CliError::Config(e.to_string()))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = Loaded { config, base, text };
    loaded.validate()?;
    Ok(loaded)
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, value) =
        spec.split_once('=').ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    // TOML literal if it parses as one, bare string otherwise
    let value = format!("v = {}", value.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table =
            entry.as_table_mut().ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Every input file the config refers to.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        match &self.config.data {
            Some(DataConfig::Csv { path, test_path, .. }) => {
                out.push(self.resolve(path));
                out.extend(test_path.iter().map(|p| self.resolve(p)));
            }
            Some(DataConfig::Idx { train_images, train_labels, test_images, test_labels, .. }) => {
                out.push(self.resolve(train_images));
                out.push(self.resolve(train_labels));
                out.extend(test_images.iter().chain(test_labels).map(|p| self.resolve(p)));
            }
            Some(DataConfig::Blobs { .. }) | None => {}
        }
        out
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let c = &self.config;
        for p in self.input_paths() {
            if !p.is_file() {
                return bad(format!("input file {} does not exist", p.display()));
            }
        }
        if let Some(m) = &c.model {
            if !self.resolve(&m.dir).join(crate::model::MODEL_INDEX).is_file() {
                return bad(format!("model directory {} has no {}", m.dir.display(), crate::model::MODEL_INDEX));
            }
        }
        match &c.data {
            Some(DataConfig::Csv { train_fraction, channels, .. }) => {
                check_fraction(*train_fraction)?;
                if *channels == 0 {
                    return bad("data.channels must be at least 1".into());
                }
            }
            Some(DataConfig::Idx { test_images, test_labels, train_fraction, .. }) => {
                check_fraction(*train_fraction)?;
                if test_images.is_some() != test_labels.is_some() {
                    return bad("data.test_images and data.test_labels go together".into());
                }
            }
            Some(DataConfig::Blobs { train_fraction, std, .. }) => {
                check_fraction(*train_fraction)?;
                if !(*std > 0.0) {
                    return bad("data.std must be positive".into());
                }
            }
            None => {}
        }
        qppl::EncodingConfig::new(c.encoding.theta).map_err(|e| CliError::Config(e.to_string()))?;
        if !(c.encoding.clamp_max > 0.0) {
            return bad("encoding.clamp_max must be positive".into());
        }
        c.train.to_config(c.seed).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(s) = &c.seeds {
            if s.is_empty() {
                return bad("seeds must not be empty".into());
            }
        }
        if let Some(a) = &c.anomaly {
            if a.normal_classes.is_empty() {
                return bad("anomaly.normal_classes must not be empty".into());
            }
            if !(0.0..=1.0).contains(&a.threshold_quantile) {
                return bad("anomaly.threshold_quantile must lie in [0, 1]".into());
            }
        }
        let e = &c.embed;
        if e.variants.is_empty() || e.output_dim == 0 || e.iterations == 0 || !(e.perplexity > 0.0) {
            return bad("embed needs variants, output_dim, iterations and a positive perplexity".into());
        }
        let g = &c.gradcheck;
        if g.trials == 0 || g.max_sites < 2 || g.max_bond_dim == 0 || g.samples == 0 || !(g.step > 0.0) {
            return bad("gradcheck needs trials, max_sites >= 2, max_bond_dim, samples and a positive step".into());
        }
        if !(g.clamp < 0.0) {
            return bad("gradcheck.clamp must be negative".into());
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<(), CliError> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("train_fraction {f} not in (0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(s)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse(
            "seed = 7\n[data]\nsource = \"blobs\"\nn_per_class = 5\nclasses = 2\nfeatures = 3\nseparation = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.train.bond_dim, 10);
        assert_eq!(c.encoding.scale, ScaleSetting::PerFeature);
        assert_eq!(c.embed.variants.len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("seed = 1\n[train]\nbond_dimm = 3\n").is_err());
        assert!(parse("seed = 1\nsed = 2\n").is_err());
        assert!(parse("seed = 1\n[data]\nsource = \"blobs\"\nn_per_class = 5\nclasses = 2\nfeatures = 3\nseparation = 0.5\nextra = 1\n")
            .is_err());
    }

    #[test]
    fn shipped_examples_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let text = std::fs::read_to_string(&path).unwrap();
            parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
        assert!(n >= 6);
    }

    #[test]
    fn seed_is_required() {
        assert!(parse("[train]\nepochs = 3\n").is_err());
    }

    #[test]
    fn overrides_parse_literals_and_strings() {
        let mut doc: toml::Table = "seed = 1\n".parse().unwrap();
        apply_override(&mut doc, "train.epochs=5").unwrap();
        apply_override(&mut doc, "train.init=near_identity").unwrap();
        apply_override(&mut doc, "seed = 9").unwrap();
        let c: RunConfig = toml::from_str(&toml::to_string(&doc).unwrap()).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.init, InitSetting::NearIdentity);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn hierarchy_targets() {
        let c = parse(
            "seed = 1\n[hierarchy]\nroot = \"top\"\n[hierarchy.nodes.top]\nab = { node = \"low\" }\nc = { leaf = \"c\" }\n[hierarchy.nodes.low]\na = { leaf = \"a\" }\nb = { leaf = \"b\" }\n",
        )
        .unwrap();
        let h = c.hierarchy.unwrap();
        assert_eq!(h.nodes["top"]["ab"], Target::Node("low".into()));
        assert_eq!(h.nodes["low"]["b"], Target::Leaf("b".into()));
    }
}
