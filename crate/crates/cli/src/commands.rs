use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use qppl::embed::{davies_bouldin, silhouette_points, tsne, write_embedding_csv, write_embedding_svg};
use qppl::geometry::{augmented_matrix, euclidean_matrix, nlf_sample_matrix};
use qppl::tasks::{prototype_embedding, train_hierarchy, HierarchyLayout, LayoutTarget};
use qppl::training::{loss_and_gradient, nlf_loss};
use qppl::{
    anomaly_score, auroc, classify_hierarchical, encode_dataset, train_prototype_set, DistanceMatrix, Embedding,
    EncodedSample, EncodingConfig, FeatureScaler, HierarchySpec, InitMode, LabeledDataset, Metric, MpsPrototype,
    PrototypeSet, RowId, RowKind, TrainReport,
};

use crate::config::{Loaded, Part, Target, Variant};
use crate::dataset::{self, Datasets};
use crate::error::CliError;
use crate::model;
use crate::output::Run;

type Spec = HierarchySpec<f64>;

fn encoding(cfg: &Loaded) -> Result<EncodingConfig, CliError> {
    Ok(EncodingConfig::new(cfg.config.encoding.theta)?)
}

fn fit_scaler(cfg: &Loaded, train: &LabeledDataset<f64>) -> Result<FeatureScaler<f64>, CliError> {
    Ok(FeatureScaler::fit(train, cfg.config.encoding.scale.into())?)
}

fn with_clamp(spec: Spec, clamp_max: f64) -> Result<Spec, CliError> {
    let root = spec.root();
    let nodes = spec
        .nodes()
        .iter()
        .cloned()
        .map(|mut n| {
            n.set = n.set.with_clamp_max(clamp_max);
            n
        })
        .collect();
    Ok(HierarchySpec::new(nodes, root)?)
}

/// Trains the configured model (hierarchical when `[hierarchy]` is present
/// and `hierarchical` is set) on `train`. Reports come back named by node,
/// class index and channel.
fn train_model(
    cfg: &Loaded,
    train: &LabeledDataset<f64>,
    seed: u64,
    hierarchical: bool,
) -> Result<(Spec, Vec<(String, TrainReport)>), CliError> {
    let c = &cfg.config;
    let scaler = fit_scaler(cfg, train)?;
    let tc = c.train.to_config(seed);
    let (spec, reports) = match (&c.hierarchy, hierarchical) {
        (Some(h), true) => {
            let layout = HierarchyLayout {
                root: h.root.clone(),
                nodes: h
                    .nodes
                    .iter()
                    .map(|(name, branches)| {
                        let b = branches
                            .iter()
                            .map(|(label, t)| {
                                let t = match t {
                                    Target::Node(n) => LayoutTarget::Node(n.clone()),
                                    Target::Leaf(l) => LayoutTarget::Leaf(l.clone()),
                                };
                                (label.clone(), t)
                            })
                            .collect();
                        (name.clone(), b)
                    })
                    .collect(),
            };
            train_hierarchy(train, &layout, &scaler, encoding(cfg)?, &tc)?
        }
        _ => {
            let (set, reports) = train_prototype_set(train, &train.classes(), scaler, encoding(cfg)?, &tc)?;
            (HierarchySpec::flat(set), reports)
        }
    };
    let spec = with_clamp(spec, c.encoding.clamp_max)?;
    let mut names = Vec::new();
    for (i, node) in spec.nodes().iter().enumerate() {
        for k in 0..node.set.classes().len() {
            for ch in 0..node.set.channels() {
                names.push(format!("n{i}_k{k}_c{ch}"));
            }
        }
    }
    Ok((spec, names.into_iter().zip(reports).collect()))
}

fn obtain_model(cfg: &Loaded, train: &LabeledDataset<f64>, seed: u64, hierarchical: bool) -> Result<Spec, CliError> {
    match &cfg.config.model {
        Some(m) => model::load(&cfg.resolve(&m.dir)),
        None => Ok(train_model(cfg, train, seed, hierarchical)?.0),
    }
}

fn flat(spec: &Spec) -> Result<&PrototypeSet<f64>, CliError> {
    model::flat_set(spec).ok_or_else(|| CliError::Config("this command needs a flat (non-hierarchical) model".into()))
}

fn encode_rows(set: &PrototypeSet<f64>, data: &LabeledDataset<f64>) -> Result<Vec<Vec<EncodedSample<f64>>>, CliError> {
    Ok(encode_dataset(data, set.scaler(), set.encoding())?)
}

pub fn train(cfg: &Loaded, run: &mut Run) -> Result<(), CliError> {
    let Datasets { train, .. } = dataset::load(cfg)?;
    let (spec, reports) = train_model(cfg, &train, cfg.config.seed, true)?;
    for path in model::save(&spec, &run.path("model"))? {
        run.record(path);
    }
    for (name, report) in &reports {
        let path = run.path(&format!("train_log/{name}.csv"));
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        report.save_csv(&path)?;
        run.record(path);
        println!("{name}: loss {:.6} after {} epochs", report.final_loss, report.epochs_run);
    }
    Ok(())
}

struct Scored {
    accuracy: f64,
    per_class: BTreeMap<String, f64>,
}

fn predict(spec: &Spec, data: &LabeledDataset<f64>, path: &Path) -> Result<Scored, CliError> {
    let root = &spec.nodes()[spec.root()].set;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "predicted".into(), "true".into()];
    header.extend(root.classes().iter().map(|c| format!("d_{c}")));
    if spec.nodes().len() > 1 {
        header.push("path".into());
    }
    w.write_record(&header)?;
    let encoded = encode_rows(root, data)?;
    let mut hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, sample) in encoded.iter().enumerate() {
        let d = classify_hierarchical(spec, sample)?;
        let truth = &data.labels()[i];
        let e = hits.entry(truth.clone()).or_default();
        e.1 += 1;
        if &d.leaf_label == truth {
            e.0 += 1;
        }
        let mut rec = vec![data.ids()[i].clone(), d.leaf_label.clone(), truth.clone()];
        rec.extend(d.path[0].distances.iter().map(|v| format!("{v:e}")));
        if spec.nodes().len() > 1 {
            rec.push(d.path.iter().map(|s| format!("{}:{}", s.node, s.chosen)).collect::<Vec<_>>().join(">"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let correct: usize = hits.values().map(|h| h.0).sum();
    Ok(Scored {
        accuracy: correct as f64 / data.len().max(1) as f64,
        per_class: hits.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect(),
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn classify(cfg: &Loaded, run: &mut Run) -> Result<(), CliError> {
    let Datasets { train, test } = dataset::load(cfg)?;
    let eval = if test.is_empty() {
        log::warn!("no test samples; scoring the training part");
        &train
    } else {
        &test
    };
    let seeds = match (&cfg.config.model, &cfg.config.seeds) {
        (None, Some(s)) => s.clone(),
        _ => vec![cfg.config.seed],
    };
    let mut runs = Vec::new();
    let mut accs = Vec::new();
    for &seed in &seeds {
        let spec = obtain_model(cfg, &train, seed, true)?;
        let rel = if seeds.len() > 1 { format!("seed_{seed}/predictions.csv") } else { "predictions.csv".into() };
        let path = run.path(&rel);
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        let scored = predict(&spec, eval, &path)?;
        run.record(path);
        println!("seed {seed}: accuracy {:.4}", scored.accuracy);
        for (label, acc) in &scored.per_class {
            println!("  {label}: {acc:.4}");
        }
        accs.push(scored.accuracy);
        runs.push(json!({ "seed": seed, "accuracy": scored.accuracy, "per_class": scored.per_class }));
    }
    let (mean, std) = mean_std(&accs);
    if seeds.len() > 1 {
        println!("mean accuracy {mean:.4} +- {std:.4} over {} seeds", seeds.len());
    }
    run.write_json("summary.json", &json!({ "runs": runs, "mean_accuracy": mean, "std_accuracy": std }))
}

/// Nearest-rank quantile of `xs`.
fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn anomaly(cfg: &Loaded, run: &mut Run) -> Result<(), CliError> {
    let section = cfg.config.anomaly.as_ref().ok_or_else(|| CliError::Config("missing [anomaly] section".into()))?;
    let Datasets { train, test } = dataset::load(cfg)?;
    let normal: BTreeSet<&String> = section.normal_classes.iter().collect();
    let normal_train = train.relabel(|l| normal.contains(&l.to_string()).then(|| l.to_string()));
    if normal_train.is_empty() {
        return Err(CliError::Data("no training samples of the normal classes".into()));
    }
    let spec = obtain_model(cfg, &normal_train, cfg.config.seed, false)?;
    let set = flat(&spec)?;
    let score_all = |data: &LabeledDataset<f64>| -> Result<Vec<f64>, CliError> {
        encode_rows(set, data)?.iter().map(|s| Ok(anomaly_score(set, s)?)).collect()
    };
    let train_scores = score_all(&normal_train)?;
    let threshold = section.threshold.unwrap_or_else(|| quantile(&train_scores, section.threshold_quantile));
    let eval = if test.is_empty() { &train } else { &test };
    let scores = score_all(eval)?;
    let path = run.path("anomaly_scores.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["sample_id", "score", "is_anomaly", "label"])?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, &s) in scores.iter().enumerate() {
        let label = &eval.labels()[i];
        if normal.contains(label) {
            neg.push(s);
        } else {
            pos.push(s);
        }
        let flag = if s > threshold { "1" } else { "0" };
        w.write_record([eval.ids()[i].as_str(), &format!("{s:e}"), flag, label])?;
    }
    w.flush()?;
    run.record(path);
    let auc = if pos.is_empty() || neg.is_empty() { None } else { Some(auroc(&pos, &neg)?) };
    match auc {
        Some(a) => println!("AUROC {a:.4} ({} anomalous, {} normal)", pos.len(), neg.len()),
        None => println!("AUROC not computed: need both normal and anomalous samples"),
    }
    let flagged = scores.iter().filter(|&&s| s > threshold).count();
    println!("threshold {threshold:.6}: {flagged} of {} flagged", scores.len());
    run.write_json(
        "summary.json",
        &json!({ "auroc": auc, "threshold": threshold, "flagged": flagged, "anomalous": pos.len(), "normal": neg.len() }),
    )
}

struct Report {
    name: String,
    silhouette: Option<f64>,
    davies_bouldin: Option<f64>,
    final_kl: Option<f64>,
}

fn score_embedding(name: &str, emb: &Embedding<f64>) -> Report {
    let samples = emb.only(RowKind::Sample);
    let labels = samples.labels();
    let ok = |r: qppl::Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{name}: {e}");
            None
        }
    };
    Report {
        name: name.into(),
        silhouette: ok(silhouette_points(&samples.points, samples.dim, &labels)),
        davies_bouldin: ok(davies_bouldin(&samples.points, samples.dim, &labels)),
        final_kl: emb.kl_history.last().map(|k| k.1),
    }
}

fn save_embedding(run: &mut Run, name: &str, emb: &Embedding<f64>) -> Result<(), CliError> {
    let csv_path = run.path(&format!("{name}_embedding.csv"));
    write_embedding_csv(emb, std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
    run.record(csv_path);
    let svg_path = run.path(&format!("{name}_embedding.svg"));
    write_embedding_svg(emb, std::io::BufWriter::new(std::fs::File::create(&svg_path)?))?;
    run.record(svg_path);
    Ok(())
}

fn save_matrix(run: &mut Run, name: &str, dm: &DistanceMatrix<f64>) -> Result<(), CliError> {
    let path = run.path(&format!("{name}_distances.csv"));
    dm.save_csv(&path)?;
    run.record(path);
    Ok(())
}

pub fn embed(cfg: &Loaded, run: &mut Run) -> Result<(), CliError> {
    let e = &cfg.config.embed;
    let Datasets { train, test } = dataset::load(cfg)?;
    let data = match e.part {
        Part::Train => train.clone(),
        Part::Test => test,
        Part::All => {
            let mut feats = train.features().to_vec();
            feats.extend_from_slice(test.features());
            let labels = train.labels().iter().chain(test.labels()).cloned().collect();
            let ids = train.ids().iter().chain(test.ids()).cloned().collect();
            LabeledDataset::new(feats, train.channels(), train.width(), labels, ids)?
        }
    };
    let data = match e.per_class {
        Some(n) => data.head_per_class(n),
        None => data,
    };
    if data.len() < 4 {
        return Err(CliError::Data(format!("embedding needs at least 4 samples, got {}", data.len())));
    }
    let tsne_cfg = e.tsne(cfg.config.seed);
    let needs_model = e.variants.iter().any(|v| v.needs_model());
    let spec = if needs_model { Some(obtain_model(cfg, &train, cfg.config.seed, false)?) } else { None };
    let set = spec.as_ref().map(flat).transpose()?;
    let encoded = match set {
        Some(s) => encode_rows(s, &data)?,
        None => encode_dataset(&data, &fit_scaler(cfg, &train)?, &encoding(cfg)?)?,
    };
    let clamp_max = cfg.config.encoding.clamp_max;
    let labels = data.labels().to_vec();
    let mut reports = Vec::new();
    let variants: BTreeSet<Variant> = e.variants.iter().copied().collect();
    for v in variants {
        let name = v.name();
        match v {
            Variant::Euclidean | Variant::Nlf | Variant::Augmented => {
                let dm = match v {
                    Variant::Euclidean => euclidean_matrix(&data)?,
                    Variant::Nlf => nlf_sample_matrix(&encoded, &labels, clamp_max)?,
                    _ => augmented_matrix(&encoded, &labels, set.expect("model loaded"), clamp_max)?,
                };
                save_matrix(run, name, &dm)?;
                let emb = tsne(&dm, &tsne_cfg)?;
                save_embedding(run, name, &emb)?;
                reports.push(score_embedding(name, &emb));
            }
            Variant::Prototype => {
                let set = set.expect("model loaded");
                let coords = prototype_embedding(set, &encoded)?;
                let ids: Vec<RowId> = labels.iter().enumerate().map(|(i, l)| RowId::sample(i, l.clone())).collect();
                let emb = Embedding::from_coordinates(&coords, ids.clone());
                save_embedding(run, name, &emb)?;
                reports.push(score_embedding(name, &emb));
                if set.classes().len() > 2 && e.prototype_tsne {
                    let n = coords.len();
                    let entries = (0..n * n)
                        .map(|k| {
                            let (a, b) = (&coords[k / n], &coords[k % n]);
                            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                        })
                        .collect();
                    let dm = DistanceMatrix::new(entries, ids, Metric::Euclidean)?;
                    let emb = tsne(&dm, &tsne_cfg)?;
                    save_embedding(run, "prototype_tsne", &emb)?;
                    reports.push(score_embedding("prototype_tsne", &emb));
                }
            }
        }
    }
    let path = run.path("report.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["embedding", "silhouette", "davies_bouldin", "final_kl"])?;
    let cell = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    for r in &reports {
        w.write_record([r.name.clone(), cell(r.silhouette), cell(r.davies_bouldin), cell(r.final_kl)])?;
        println!(
            "{:<16} SC {:>10} DB {:>10}",
            r.name,
            r.silhouette.map_or("-".into(), |v| format!("{v:.4}")),
            r.davies_bouldin.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    w.flush()?;
    run.record(path);
    Ok(())
}

pub fn gradcheck(cfg: &Loaded, run: &mut Run) -> Result<(), CliError> {
    let g = &cfg.config.gradcheck;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.config.seed);
    let path = run.path("gradcheck.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["trial", "sites", "bond_dim", "max_abs_err", "max_grad", "rel_err", "pass"])?;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for trial in 0..g.trials {
        let m = rng.gen_range(2..=g.max_sites);
        let chi = rng.gen_range(1..=g.max_bond_dim);
        let mut psi = MpsPrototype::<f64>::init_random(m, 2, chi, rng.gen(), InitMode::Gaussian)?;
        let samples: Vec<EncodedSample<f64>> = (0..g.samples)
            .map(|_| {
                let xs: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
                EncodedSample::from_scaled(&xs, &EncodingConfig::default())
            })
            .collect();
        let (_, grad) = loss_and_gradient(&psi, &samples, g.clamp)?;
        let (mut max_err, mut max_grad) = (0.0f64, 0.0f64);
        for (site, gs) in grad.iter().enumerate() {
            for (idx, &analytic) in gs.data().iter().enumerate() {
                let orig = psi.site(site).data()[idx];
                psi.site_mut(site).data_mut()[idx] = orig + g.step;
                let up = nlf_loss(&psi, &samples, g.clamp)?;
                psi.site_mut(site).data_mut()[idx] = orig - g.step;
                let down = nlf_loss(&psi, &samples, g.clamp)?;
                psi.site_mut(site).data_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * g.step);
                max_err = max_err.max((fd - analytic).abs());
                max_grad = max_grad.max(analytic.abs());
            }
        }
        let rel = max_err / max_grad.max(f64::MIN_POSITIVE);
        let pass = rel <= g.tolerance;
        worst = worst.max(rel);
        if !pass {
            failures += 1;
        }
        w.write_record([
            trial.to_string(),
            m.to_string(),
            chi.to_string(),
            format!("{max_err:e}"),
            format!("{max_grad:e}"),
            format!("{rel:e}"),
            pass.to_string(),
        ])?;
    }
    w.flush()?;
    run.record(path);
    println!(
        "{} of {} trials within {:e} (worst relative error {worst:e})",
        g.trials - failures,
        g.trials,
        g.tolerance
    );
    if failures > 0 {
        return Err(CliError::Numerical(format!("{failures} gradient check trial(s) failed")));
    }
    Ok(())
}
