use qppl::data::{load_csv, load_idx, make_blobs, split, BlobSpec, CsvSchema, IdxOptions, SplitConfig};
use qppl::{LabeledDataset, Split};

use crate::config::{DataConfig, Loaded};
use crate::error::CliError;

pub struct Datasets {
    pub train: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
}

pub fn load(cfg: &Loaded) -> Result<Datasets, CliError> {
    let data = cfg.config.data.as_ref().ok_or_else(|| CliError::Config("missing [data] section".into()))?;
    let seed = cfg.config.seed;
    let parts = |all: LabeledDataset<f64>, fraction: f64, stratified: bool| -> Result<Datasets, CliError> {
        let all = split(all, &SplitConfig { train_fraction: fraction, seed, stratified })?;
        Ok(Datasets { train: all.part(Split::Train), test: all.part(Split::Test) })
    };
    let out = match data {
        DataConfig::Csv { path, label_column, id_column, channels, test_path, train_fraction, stratified } => {
            let schema =
                CsvSchema { label_column: label_column.clone(), id_column: id_column.clone(), channels: *channels };
            let all = load_csv(cfg.resolve(path), &schema)?;
            match test_path {
                Some(t) => Datasets { train: all, test: load_csv(cfg.resolve(t), &schema)? },
                None => parts(all, *train_fraction, *stratified)?,
            }
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            downsample,
            train_per_class,
            test_per_class,
            train_fraction,
        } => {
            let opts = IdxOptions { downsample: *downsample, limit: None };
            let head = |d: LabeledDataset<f64>, n: &Option<usize>| match n {
                Some(n) => d.head_per_class(*n),
                None => d,
            };
            let train = head(load_idx(cfg.resolve(train_images), cfg.resolve(train_labels), opts)?, train_per_class);
            match (test_images, test_labels) {
                (Some(i), Some(l)) => {
                    let test = head(load_idx(cfg.resolve(i), cfg.resolve(l), opts)?, test_per_class);
                    Datasets { train, test }
                }
                _ => parts(train, *train_fraction, true)?,
            }
        }
        DataConfig::Blobs { n_per_class, classes, features, separation, std, train_fraction } => {
            let spec = BlobSpec {
                n_per_class: *n_per_class,
                classes: *classes,
                features: *features,
                separation: *separation,
                std: *std,
                seed,
            };
            parts(make_blobs(&spec)?, *train_fraction, true)?
        }
    };
    if out.train.is_empty() {
        return Err(CliError::Data("training part is empty".into()));
    }
    Ok(out)
}
