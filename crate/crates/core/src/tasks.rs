//! Decision heads over a trained prototype set: nearest-prototype
//! classification, hierarchical routing, anomaly scores with AUROC, and the
//! prototype-distance embedding.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::LabeledDataset;
use crate::encoding::{EncodedSample, EncodingConfig, FeatureScaler};
use crate::error::{QpplError, Result};
use crate::geometry::{multichannel_nlf, DEFAULT_CLAMP_MAX};
use crate::mps::MpsPrototype;
use crate::scalar::Scalar;
use crate::training::{train_prototype_set, TrainConfig, TrainReport};

/// One MPS per (class, channel), sharing the encoding that produced their
/// training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    classes: Vec<String>,
    channels: usize,
    /// Row-major over (class, channel).
    prototypes: Vec<MpsPrototype<T>>,
    encoding: EncodingConfig,
    scaler: FeatureScaler<T>,
    clamp_max: T,
}

impl<T: Scalar> PrototypeSet<T> {
    /// `prototypes` must be ordered class-major then channel.
    pub fn new(
        classes: Vec<String>,
        channels: usize,
        prototypes: Vec<MpsPrototype<T>>,
        encoding: EncodingConfig,
        scaler: FeatureScaler<T>,
    ) -> Result<Self> {
        if classes.is_empty() || channels == 0 {
            return Err(QpplError::InvalidDimension("a prototype set needs classes and channels".into()));
        }
        if classes.iter().collect::<BTreeSet<_>>().len() != classes.len() {
            return Err(QpplError::InvalidConfig("duplicate class labels".into()));
        }
        if prototypes.len() != classes.len() * channels {
            return Err(QpplError::LengthMismatch { expected: classes.len() * channels, got: prototypes.len() });
        }
        let (len, d) = (prototypes[0].len(), prototypes[0].phys_dim());
        for (i, p) in prototypes.iter().enumerate() {
            let (k, c) = (i / channels, i % channels);
            if p.meta.class_label != classes[k] || p.meta.channel as usize != c {
                return Err(QpplError::InvalidConfig(format!(
                    "prototype {i} is tagged {}/{}, expected {}/{c}",
                    p.meta.class_label, p.meta.channel, classes[k]
                )));
            }
            if p.len() != len || p.phys_dim() != d || p.meta.theta != encoding.theta {
                return Err(QpplError::ShapeMismatch(format!("prototype {i} differs in sites, dim or theta")));
            }
        }
        if scaler.len() != channels * len {
            return Err(QpplError::LengthMismatch { expected: channels * len, got: scaler.len() });
        }
        Ok(Self { classes, channels, prototypes, encoding, scaler, clamp_max: T::of(DEFAULT_CLAMP_MAX) })
    }

    pub fn with_clamp_max(mut self, clamp_max: T) -> Self {
        self.clamp_max = clamp_max;
        self
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn prototypes(&self) -> &[MpsPrototype<T>] {
        &self.prototypes
    }

    pub fn prototype(&self, class: usize, channel: usize) -> &MpsPrototype<T> {
        &self.prototypes[class * self.channels + channel]
    }

    pub fn class_prototypes(&self, class: usize) -> Vec<&MpsPrototype<T>> {
        self.prototypes[class * self.channels..(class + 1) * self.channels].iter().collect()
    }

    pub fn encoding(&self) -> &EncodingConfig {
        &self.encoding
    }

    pub fn scaler(&self) -> &FeatureScaler<T> {
        &self.scaler
    }

    pub fn clamp_max(&self) -> T {
        self.clamp_max
    }

    /// Scales and encodes a raw `C * M` row with this set's scaler.
    pub fn encode_row(&self, row: &[T]) -> Result<Vec<EncodedSample<T>>> {
        if row.len() != self.scaler.len() {
            return Err(QpplError::LengthMismatch { expected: self.scaler.len(), got: row.len() });
        }
        let width = row.len() / self.channels;
        (0..self.channels)
            .map(|c| {
                let (scaled, _) = self.scaler.scale_at(&row[c * width..(c + 1) * width], c * width)?;
                Ok(EncodedSample::from_scaled(&scaled, &self.encoding))
            })
            .collect()
    }

    /// Channel-averaged NLF to every class, in `classes()` order.
    pub fn distances(&self, sample: &[EncodedSample<T>]) -> Result<Vec<T>> {
        if sample.len() != self.channels {
            return Err(QpplError::ShapeMismatch(format!("{} channels, set has {}", sample.len(), self.channels)));
        }
        (0..self.classes.len()).map(|k| multichannel_nlf(&self.class_prototypes(k), sample, self.clamp_max)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification<T> {
    pub label: String,
    pub index: usize,
    pub distances: Vec<T>,
}

/// Position of the smallest distance; ties go to the lexicographically
/// smallest label.
fn argmin<T: Scalar>(distances: &[T], labels: &[String]) -> usize {
    let mut best = 0;
    for k in 1..distances.len() {
        if distances[k] < distances[best] || (distances[k] == distances[best] && labels[k] < labels[best]) {
            best = k;
        }
    }
    best
}

/// Nearest-prototype classification.
pub fn classify<T: Scalar>(set: &PrototypeSet<T>, sample: &[EncodedSample<T>]) -> Result<Classification<T>> {
    let distances = set.distances(sample)?;
    let index = argmin(&distances, set.classes());
    Ok(Classification { label: set.classes()[index].clone(), index, distances })
}

/// Minimal channel-averaged NLF to any class prototype.
pub fn anomaly_score<T: Scalar>(set: &PrototypeSet<T>, sample: &[EncodedSample<T>]) -> Result<T> {
    let d = set.distances(sample)?;
    Ok(d.into_iter().fold(T::infinity(), T::min))
}

/// Per-sample vectors of distances to every class prototype.
pub fn prototype_embedding<T: Scalar>(set: &PrototypeSet<T>, samples: &[Vec<EncodedSample<T>>]) -> Result<Vec<Vec<T>>> {
    samples.iter().map(|s| set.distances(s)).collect()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks of the pooled scores.
pub fn auroc<T: Scalar>(positive: &[T], negative: &[T]) -> Result<f64> {
    if positive.is_empty() {
        return Err(QpplError::EmptyClass("positive"));
    }
    if negative.is_empty() {
        return Err(QpplError::EmptyClass("negative"));
    }
    let mut pooled: Vec<(T, bool)> =
        positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    if pooled.iter().any(|(s, _)| s.is_nan()) {
        return Err(QpplError::NonFiniteScore);
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));
    // twice the positive rank sum, kept integral so ties stay exact
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2
        let pos_in_group = pooled[i..=j].iter().filter(|p| p.1).count() as u64;
        rank_sum2 += pos_in_group * (i + j + 2) as u64;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as u64, negative.len() as u64);
    // 2U = 2R - n+(n+ + 1)
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// Where a hierarchy node sends a predicted label.
#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    Node(usize),
    Leaf(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyNode<T> {
    pub name: String,
    pub set: PrototypeSet<T>,
    pub routes: BTreeMap<String, Route>,
}

/// A top-down tree of prototype sets.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpec<T> {
    nodes: Vec<HierarchyNode<T>>,
    root: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStep<T> {
    pub node: String,
    pub chosen: String,
    pub distances: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalDecision<T> {
    pub leaf_label: String,
    pub path: Vec<PathStep<T>>,
}

impl<T: Scalar> HierarchySpec<T> {
    pub fn new(nodes: Vec<HierarchyNode<T>>, root: usize) -> Result<Self> {
        let bad = |m: String| Err(QpplError::MalformedHierarchy(m));
        if root >= nodes.len() {
            return bad(format!("root index {root} out of range"));
        }
        for node in &nodes {
            let labels: BTreeSet<&String> = node.set.classes().iter().collect();
            let keys: BTreeSet<&String> = node.routes.keys().collect();
            if labels != keys {
                return bad(format!("node `{}` routes {keys:?} but predicts {labels:?}", node.name));
            }
            for route in node.routes.values() {
                match route {
                    Route::Node(i) if *i >= nodes.len() => return bad(format!("node `{}` routes to {i}", node.name)),
                    Route::Leaf(l) if l.is_empty() => return bad(format!("node `{}` has an empty leaf", node.name)),
                    _ => {}
                }
            }
        }
        // each node reachable exactly once from the root
        let mut parents = vec![0usize; nodes.len()];
        parents[root] = 1;
        let mut stack = vec![root];
        let mut visited = vec![false; nodes.len()];
        while let Some(i) = stack.pop() {
            if visited[i] {
                return bad(format!("node `{}` is reached twice (cycle or shared child)", nodes[i].name));
            }
            visited[i] = true;
            for route in nodes[i].routes.values() {
                if let Route::Node(c) = route {
                    parents[*c] += 1;
                    if parents[*c] > 1 {
                        return bad(format!("node `{}` has more than one parent", nodes[*c].name));
                    }
                    stack.push(*c);
                }
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return bad(format!("node `{}` is unreachable from the root", nodes[i].name));
        }
        Ok(Self { nodes, root })
    }

    /// Single-node tree routing every class of `set` to a leaf of the same
    /// name.
    pub fn flat(set: PrototypeSet<T>) -> Self {
        let routes = set.classes().iter().map(|c| (c.clone(), Route::Leaf(c.clone()))).collect();
        Self { nodes: vec![HierarchyNode { name: "root".into(), set, routes }], root: 0 }
    }

    pub fn nodes(&self) -> &[HierarchyNode<T>] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[HierarchyNode<T>], i: usize) -> usize {
            1 + nodes[i]
                .routes
                .values()
                .filter_map(|r| if let Route::Node(c) = r { Some(go(nodes, *c)) } else { None })
                .max()
                .unwrap_or(0)
        }
        go(&self.nodes, self.root)
    }

    /// Every leaf label in the tree.
    pub fn leaves(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .flat_map(|n| n.routes.values())
            .filter_map(|r| if let Route::Leaf(l) = r { Some(l.clone()) } else { None })
            .collect()
    }
}

/// Routes `sample` from the root to a leaf, choosing the nearest prototype at
/// each node.
pub fn classify_hierarchical<T: Scalar>(
    spec: &HierarchySpec<T>,
    sample: &[EncodedSample<T>],
) -> Result<HierarchicalDecision<T>> {
    let mut path = Vec::new();
    let mut node = spec.root;
    loop {
        if path.len() > spec.nodes.len() {
            return Err(QpplError::MalformedHierarchy("routing did not terminate".into()));
        }
        let n = &spec.nodes[node];
        let c = classify(&n.set, sample)?;
        let route = n.routes.get(&c.label).ok_or_else(|| {
            QpplError::MalformedHierarchy(format!("node `{}` has no route for `{}`", n.name, c.label))
        })?;
        path.push(PathStep { node: n.name.clone(), chosen: c.label, distances: c.distances });
        match route {
            Route::Leaf(l) => return Ok(HierarchicalDecision { leaf_label: l.clone(), path }),
            Route::Node(next) => node = *next,
        }
    }
}

/// Declarative hierarchy used for training: each node maps branch labels to
/// a child node (by name) or to a final class label.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyLayout {
    pub root: String,
    pub nodes: BTreeMap<String, BTreeMap<String, LayoutTarget>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutTarget {
    Node(String),
    Leaf(String),
}

impl HierarchyLayout {
    /// Final labels reachable below `node`.
    fn leaves_under(&self, node: &str, depth: usize) -> Result<BTreeSet<String>> {
        if depth > self.nodes.len() {
            return Err(QpplError::MalformedHierarchy(format!("cycle through `{node}`")));
        }
        let branches =
            self.nodes.get(node).ok_or_else(|| QpplError::MalformedHierarchy(format!("unknown node `{node}`")))?;
        let mut out = BTreeSet::new();
        for target in branches.values() {
            match target {
                LayoutTarget::Leaf(l) => {
                    out.insert(l.clone());
                }
                LayoutTarget::Node(n) => out.extend(self.leaves_under(n, depth + 1)?),
            }
        }
        Ok(out)
    }
}

/// Trains every node of `layout` on the samples whose final label lies
/// below it, relabelled with the branch they fall under.
pub fn train_hierarchy<T: Scalar>(
    data: &LabeledDataset<T>,
    layout: &HierarchyLayout,
    scaler: &FeatureScaler<T>,
    encoding: EncodingConfig,
    config: &TrainConfig,
) -> Result<(HierarchySpec<T>, Vec<TrainReport>)> {
    layout.leaves_under(&layout.root, 0)?;
    let names: Vec<&String> = layout.nodes.keys().collect();
    let index_of = |n: &str| names.iter().position(|x| *x == n);
    let mut nodes = Vec::with_capacity(names.len());
    let mut reports = Vec::new();
    for name in &names {
        let branches = &layout.nodes[*name];
        let mut owner: BTreeMap<String, String> = BTreeMap::new();
        let mut routes = BTreeMap::new();
        for (branch, target) in branches {
            let leaves = match target {
                LayoutTarget::Leaf(l) => {
                    routes.insert(branch.clone(), Route::Leaf(l.clone()));
                    BTreeSet::from([l.clone()])
                }
                LayoutTarget::Node(n) => {
                    let i = index_of(n).ok_or_else(|| QpplError::MalformedHierarchy(format!("unknown node `{n}`")))?;
                    routes.insert(branch.clone(), Route::Node(i));
                    layout.leaves_under(n, 0)?
                }
            };
            for l in leaves {
                if owner.insert(l.clone(), branch.clone()).is_some() {
                    return Err(QpplError::MalformedHierarchy(format!("label `{l}` under two branches of `{name}`")));
                }
            }
        }
        let node_data = data.relabel(|l| owner.get(l).cloned());
        let classes: Vec<String> = branches.keys().cloned().collect();
        let (set, mut r) = train_prototype_set(&node_data, &classes, scaler.clone(), encoding, config)?;
        reports.append(&mut r);
        nodes.push(HierarchyNode { name: (*name).clone(), set, routes });
    }
    let root = index_of(&layout.root).ok_or_else(|| QpplError::MalformedHierarchy("unknown root".into()))?;
    Ok((HierarchySpec::new(nodes, root)?, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::ScaleMode;
    use crate::mps::PrototypeMeta;

    fn enc(xs: &[f64]) -> EncodedSample<f64> {
        EncodedSample::from_scaled(xs, &EncodingConfig::default())
    }

    fn product_set(centres: &[(&str, &[f64])]) -> PrototypeSet<f64> {
        let m = centres[0].1.len();
        let protos = centres
            .iter()
            .map(|(l, x)| {
                MpsPrototype::from_product(&enc(x)).with_meta(PrototypeMeta {
                    class_label: l.to_string(),
                    channel: 0,
                    theta: 1.0,
                })
            })
            .collect();
        let scaler = FeatureScaler::from_bounds(vec![0.0; m], vec![1.0; m], ScaleMode::PerFeature).unwrap();
        PrototypeSet::new(
            centres.iter().map(|c| c.0.to_string()).collect(),
            1,
            protos,
            EncodingConfig::default(),
            scaler,
        )
        .unwrap()
    }

    #[test]
    fn exact_prototype_copy_is_nearest() {
        let set = product_set(&[("A", &[0.1, 0.2, 0.3]), ("B", &[0.9, 0.8, 0.7])]);
        let c = classify(&set, &[enc(&[0.1, 0.2, 0.3])]).unwrap();
        assert_eq!(c.label, "A");
        assert!(c.distances[0] < 1e-14);
        assert!(anomaly_score(&set, &[enc(&[0.1, 0.2, 0.3])]).unwrap() < 1e-14);
    }

    #[test]
    fn ties_go_to_smaller_label() {
        let set = product_set(&[("zeta", &[0.2, 0.4]), ("alpha", &[0.2, 0.4])]);
        let c = classify(&set, &[enc(&[0.7, 0.1])]).unwrap();
        assert_eq!(c.distances[0], c.distances[1]);
        assert_eq!(c.label, "alpha");
    }

    #[test]
    fn channel_count_checked() {
        let set = product_set(&[("A", &[0.1])]);
        assert!(matches!(classify(&set, &[enc(&[0.1]), enc(&[0.2])]), Err(QpplError::ShapeMismatch(_))));
    }

    #[test]
    fn one_class_anomaly_equals_distance() {
        let set = product_set(&[("only", &[0.3, 0.6])]);
        let s = [enc(&[0.5, 0.5])];
        assert_eq!(anomaly_score(&set, &s).unwrap(), classify(&set, &s).unwrap().distances[0]);
        assert_eq!(prototype_embedding(&set, &[s.to_vec()]).unwrap()[0], vec![anomaly_score(&set, &s).unwrap()]);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.4], &[0.5, 0.1]).unwrap(), 0.75);
        assert!(matches!(auroc::<f64>(&[], &[1.0]), Err(QpplError::EmptyClass("positive"))));
        assert!(matches!(auroc::<f64>(&[1.0], &[]), Err(QpplError::EmptyClass("negative"))));
        assert!(matches!(auroc(&[f64::NAN], &[1.0]), Err(QpplError::NonFiniteScore)));
    }

    #[test]
    fn hierarchy_validation() {
        let set = || product_set(&[("L", &[0.1]), ("R", &[0.9])]);
        let leafs = |a: &str, b: &str| {
            BTreeMap::from([("L".into(), Route::Leaf(a.into())), ("R".into(), Route::Leaf(b.into()))])
        };
        let ok = HierarchySpec::new(
            vec![
                HierarchyNode {
                    name: "root".into(),
                    set: set(),
                    routes: BTreeMap::from([("L".into(), Route::Node(1)), ("R".into(), Route::Leaf("r".into()))]),
                },
                HierarchyNode { name: "left".into(), set: set(), routes: leafs("ll", "lr") },
            ],
            0,
        );
        assert_eq!(ok.unwrap().depth(), 2);

        let cyc = HierarchySpec::new(
            vec![HierarchyNode {
                name: "root".into(),
                set: set(),
                routes: BTreeMap::from([("L".into(), Route::Node(0)), ("R".into(), Route::Leaf("r".into()))]),
            }],
            0,
        );
        assert!(matches!(cyc, Err(QpplError::MalformedHierarchy(_))));

        let missing = HierarchySpec::new(
            vec![HierarchyNode {
                name: "root".into(),
                set: set(),
                routes: BTreeMap::from([("L".into(), Route::Leaf("l".into()))]),
            }],
            0,
        );
        assert!(matches!(missing, Err(QpplError::MalformedHierarchy(_))));
    }

    #[test]
    fn depth_one_tree_matches_flat() {
        let set = product_set(&[("A", &[0.1, 0.2]), ("B", &[0.6, 0.9]), ("C", &[0.9, 0.1])]);
        let tree = HierarchySpec::flat(set.clone());
        for x in [[0.0, 0.0], [0.5, 0.5], [1.0, 0.2], [0.7, 0.8]] {
            let s = [enc(&x)];
            let flat = classify(&set, &s).unwrap();
            let h = classify_hierarchical(&tree, &s).unwrap();
            assert_eq!(h.leaf_label, flat.label);
            assert_eq!(h.path.len(), 1);
            assert_eq!(h.path[0].distances, flat.distances);
        }
    }

    #[test]
    fn layout_cycle_detected() {
        let layout = HierarchyLayout {
            root: "a".into(),
            nodes: BTreeMap::from([
                ("a".into(), BTreeMap::from([("x".into(), LayoutTarget::Node("b".into()))])),
                ("b".into(), BTreeMap::from([("y".into(), LayoutTarget::Node("a".into()))])),
            ]),
        };
        assert!(matches!(layout.leaves_under("a", 0), Err(QpplError::MalformedHierarchy(_))));
    }
}
